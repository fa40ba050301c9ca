"""Command-line front end binding the modules into reproducible runs.

Every run validates its whole configuration before writing anything,
executes one pipeline, writes outputs plus a manifest, and prints a
one-line JSON summary to stdout.  Exit codes: 0 success, 2 configuration
error, 3 numerical error.
"""

import argparse
import glob
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg
from . import convolution, covariance, fieldio, likelihood, markov, simulate, spectra
from .errors import ConfigError, MvgrfError, NumericalError
from .grid import probe_lags


def _threads(args):
    if args.threads is not None:
        return args.threads or (os.cpu_count() or 1)
    env = os.environ.get("MVGRF_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as err:
            raise ConfigError(f"MVGRF_THREADS must be an integer, got {env!r}") from err
        return n or (os.cpu_count() or 1)
    return 1


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(**kw):
    print(json.dumps(kw, sort_keys=True))


def _write_fields(out, fields):
    paths = []
    for r in fields:
        path = out / f"field_{r.replicate:04d}.mgrf"
        fieldio.write_field(path, r)
        paths.append(path)
    return paths


def cmd_simulate(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"model", "grid", "replicates"}, {"method"}, "config")
    model = cfg.parse_spectrum_model(doc["model"])
    grid = cfg.parse_grid(doc["grid"])
    method = cfg.parse_method(doc)
    count = doc["replicates"]
    if not isinstance(count, int) or count < 1:
        raise ConfigError("config.replicates must be a positive integer")
    if model.d != grid.d:
        raise ConfigError("model and grid dimensions differ")
    out = _outdir(args)
    fields = simulate.sample_batch(model, grid, args.seed, count,
                                   method=method, threads=_threads(args))
    paths = _write_fields(out, fields)
    manifest = out / "manifest.json"
    fieldio.write_manifest(manifest, config=doc, outputs=paths, seed=args.seed,
                           extra={"square_root_method": method})
    _summary(subcommand="simulate", replicates=count, seed=args.seed,
             out=str(out), config_hash=fieldio.config_hash(doc))
    return 0


def cmd_convolve(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"kernel", "noise", "grid", "replicates"}, (), "config")
    grid = cfg.parse_grid(doc["grid"])
    kernel = cfg.parse_kernel(doc["kernel"], grid)
    noise = cfg.parse_noise(doc["noise"])
    count = doc["replicates"]
    if not isinstance(count, int) or count < 1:
        raise ConfigError("config.replicates must be a positive integer")
    out = _outdir(args)
    fields = [
        convolution.sample_convolution_field(kernel, noise, grid, args.seed, r)
        for r in range(count)
    ]
    paths = _write_fields(out, fields)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=paths,
                           seed=args.seed,
                           extra={"truncated_tail_mass": fields[0].provenance[
                               "truncated_tail_mass"]})
    _summary(subcommand="convolve", replicates=count, seed=args.seed,
             out=str(out), config_hash=fieldio.config_hash(doc))
    return 0


def cmd_spde_sample(args):
    doc = cfg.load_json(args.config)
    grid, kappas, variances, coupling = cfg.parse_spde(doc)
    count = doc.get("replicates", 1)
    if not isinstance(count, int) or count < 1:
        raise ConfigError("config.replicates must be a positive integer")
    try:
        model = markov.build_precision_model(grid, kappas, variances, coupling)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    out = _outdir(args)
    fields = [markov.precision_sample(model, args.seed, r) for r in range(count)]
    paths = _write_fields(out, fields)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=paths,
                           seed=args.seed,
                           extra={"margin": model.margin,
                                  "taus": list(model.taus)})
    _summary(subcommand="spde-sample", replicates=count, seed=args.seed,
             out=str(out), config_hash=fieldio.config_hash(doc))
    return 0


def cmd_covariance(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"model", "grid"}, (), "config")
    model = cfg.parse_spectrum_model(doc["model"])
    grid = cfg.parse_grid(doc["grid"])
    out = _outdir(args)
    C = covariance.analytic_cross_cov(model, grid)
    path = out / "covariance.csv"
    C.to_csv(path)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=[path])
    _summary(subcommand="covariance", lags=len(C.lags), out=str(out),
             config_hash=fieldio.config_hash(doc))
    return 0


def _load_fields(pattern):
    paths = sorted(glob.glob(pattern)) if any(ch in pattern for ch in "*?[") else None
    if paths is None:
        p = Path(pattern)
        paths = sorted(str(q) for q in p.glob("*.mgrf")) if p.is_dir() else [pattern]
    if not paths:
        raise ConfigError(f"no field files match {pattern!r}")
    return [fieldio.read_field(p) for p in paths]


def cmd_empirical(args):
    doc = cfg.load_json(args.config) if args.config else {}
    cfg.check_keys(doc, set(), {"max_lag"}, "config")
    fields = _load_fields(args.fields)
    max_lag = doc.get("max_lag", min(fields[0].grid.sizes) // 4)
    out = _outdir(args)
    try:
        C = covariance.empirical_cross_cov(fields, max_lag,
                                           probe_lags=probe_lags(fields[0].grid))
    except ValueError as err:
        raise ConfigError(str(err)) from err
    path = out / "empirical.csv"
    C.to_csv(path)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=[path],
                           extra={"replicates": len(fields)})
    _summary(subcommand="empirical", replicates=len(fields), lags=len(C.lags),
             out=str(out))
    return 0


def cmd_asymmetry(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"model", "grid"}, {"i", "j"}, "config")
    model = cfg.parse_spectrum_model(doc["model"])
    grid = cfg.parse_grid(doc["grid"])
    i, j = doc.get("i", 0), doc.get("j", 1)
    if model.p < 2:
        raise ConfigError("asymmetry needs a model with p >= 2")
    out = _outdir(args)
    C = covariance.analytic_cross_cov(model, grid)
    result = {"i": i, "j": j, "analytic_index": covariance.asymmetry_index(C, i, j)}
    if args.fields:
        fields = _load_fields(args.fields)
        Ce = covariance.empirical_cross_cov(fields, min(grid.sizes) // 2)
        result["empirical_index"] = covariance.asymmetry_index(Ce, i, j)
        result["replicates"] = len(fields)
    path = out / "asymmetry.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=[path])
    _summary(subcommand="asymmetry", out=str(out), **result)
    return 0


def cmd_bench(args):
    try:
        sizes = [int(s) for s in args.sizes.split(",")]
    except ValueError as err:
        raise ConfigError(f"--sizes must be comma-separated integers: {err}") from err
    out = _outdir(args)
    try:
        result = markov.bench_scaling(sizes, args.p, repetitions=args.repetitions)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    path = out / "bench.csv"
    result.to_csv(path)
    fieldio.write_manifest(out / "manifest.json",
                           config={"sizes": sizes, "p": args.p,
                                   "repetitions": args.repetitions},
                           outputs=[path])
    _summary(subcommand="bench", out=str(out), rows=len(result.rows),
             **{f"slope_{k}": round(v, 4) for k, v in result.slopes().items()})
    return 0


def cmd_profile(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"problem", "surface"}, (), "config")
    problem = cfg.parse_problem(doc["problem"])
    surf = doc["surface"]
    cfg.check_keys(surf, {"log_sigma2", "log_kappa"}, (), "config.surface")

    def axis(spec, name):
        if not (isinstance(spec, list) and len(spec) == 3):
            raise ConfigError(f"config.surface.{name} must be [lo, hi, count]")
        return np.linspace(spec[0], spec[1], int(spec[2]))

    out = _outdir(args)
    surface = likelihood.profile_surface(
        problem, axis(surf["log_sigma2"], "log_sigma2"),
        axis(surf["log_kappa"], "log_kappa"),
    )
    path = out / "profile.csv"
    surface.to_csv(path)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=[path])
    _summary(subcommand="profile", out=str(out),
             grid_shape=list(surface.loglik.shape))
    return 0


def cmd_ridge(args):
    doc = cfg.load_json(args.config)
    cfg.check_keys(doc, {"problem"}, (), "config")
    problem = cfg.parse_problem(doc["problem"])
    out = _outdir(args)
    report = likelihood.ridge_report(problem)
    path = out / "ridge.json"
    report.to_json(path)
    fieldio.write_manifest(out / "manifest.json", config=doc, outputs=[path])
    _summary(subcommand="ridge", out=str(out),
             anisotropy_ratio=round(report.anisotropy_ratio, 4),
             microergodic_angle_deg=round(report.microergodic_angle_deg, 4))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mvgrf",
        description="Stationary multivariate random fields: simulation, "
                    "covariance diagnostics, and scaling benchmarks.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, needs_config=True, needs_out=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON configuration path")
        p.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="replicate threads (0 = auto; MVGRF_THREADS as fallback)")

    p = sub.add_parser("simulate", help="spectral sampler")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("convolve", help="kernel-convolution sampler")
    common(p)
    p.set_defaults(fn=cmd_convolve)

    p = sub.add_parser("spde-sample", help="sparse Markov sampler")
    common(p)
    p.set_defaults(fn=cmd_spde_sample)

    p = sub.add_parser("covariance", help="analytic cross-covariance to CSV")
    common(p)
    p.set_defaults(fn=cmd_covariance)

    p = sub.add_parser("empirical", help="empirical cross-covariance from field files")
    common(p, needs_config=False)
    p.add_argument("--config", default=None, help="optional JSON with max_lag")
    p.add_argument("--fields", required=True,
                   help="directory or glob of .mgrf field files")
    p.set_defaults(fn=cmd_empirical)

    p = sub.add_parser("asymmetry", help="cross-covariance asymmetry index")
    common(p)
    p.add_argument("--fields", default=None,
                   help="optional field files for the empirical index")
    p.set_defaults(fn=cmd_asymmetry)

    p = sub.add_parser("bench", help="dense vs sparse factorization scaling")
    common(p, needs_config=False)
    p.add_argument("--sizes", required=True, help="comma-separated 2D sizes n")
    p.add_argument("--p", type=int, default=1, help="components")
    p.add_argument("--repetitions", type=int, default=5)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("profile", help="log-likelihood surface to CSV")
    common(p)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("ridge", help="likelihood ridge diagnostic to JSON")
    common(p)
    p.set_defaults(fn=cmd_ridge)
    return parser


def run(argv):
    """Execute one CLI invocation; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if err.code is not None else 0
    t0 = time.perf_counter()
    try:
        code = args.fn(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    except MvgrfError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    if code == 0:
        elapsed = time.perf_counter() - t0
        print(f"completed in {elapsed:.3f}s", file=sys.stderr)
    return code


def entrypoint():
    raise SystemExit(run(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
