"""Strict JSON configuration parsing for the CLI.

Unknown keys are rejected everywhere: silent typos in scientific configs
produce wrong experiments, not errors, unless the schema is strict.
"""

import json

import numpy as np

from . import convolution, likelihood
from .errors import ConfigError
from .grid import GridSpec
from .spectra import SQRT_METHODS, MaternParams, SpectrumModel


def load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def _require_mapping(doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(doc).__name__}")


def check_keys(doc, required, optional=(), where="config"):
    _require_mapping(doc, where)
    required = set(required)
    allowed = required | set(optional)
    missing = required - doc.keys()
    unknown = doc.keys() - allowed
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _number(doc, key, where, positive=False):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key} must be positive")
    return float(v)


def parse_grid(doc, where="grid", periodic=True):
    check_keys(doc, {"sizes", "spacing"}, {"d"}, where)
    sizes = doc["sizes"]
    if not isinstance(sizes, list) or not all(isinstance(m, int) for m in sizes):
        raise ConfigError(f"{where}.sizes must be a list of integers")
    d = doc.get("d", len(sizes))
    try:
        return GridSpec(d=d, sizes=tuple(sizes), spacing=_number(doc, "spacing", where, True),
                        periodic=periodic)
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def parse_component(doc, where):
    check_keys(doc, {"variance", "kappa", "smoothness"}, (), where)
    try:
        return MaternParams(
            variance=_number(doc, "variance", where, True),
            kappa=_number(doc, "kappa", where, True),
            smoothness=_number(doc, "smoothness", where, True),
        )
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def parse_spectrum_model(doc, where="model"):
    check_keys(doc, {"d", "components"}, {"cross"}, where)
    comps = doc["components"]
    if not isinstance(comps, list) or not comps:
        raise ConfigError(f"{where}.components must be a non-empty list")
    components = [
        parse_component(c, f"{where}.components[{k}]") for k, c in enumerate(comps)
    ]
    d = doc["d"]
    pairs = []
    for k, cross in enumerate(doc.get("cross", [])):
        cw = f"{where}.cross[{k}]"
        check_keys(cross, {"i", "j", "rho"}, {"lag"}, cw)
        lag = cross.get("lag", [0.0] * d)
        if isinstance(lag, (int, float)):
            lag = [lag]
        pairs.append((cross["i"], cross["j"], cross["rho"], lag))
    try:
        return SpectrumModel.from_pairs(d, components, pairs)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{where}: {err}") from err


def spectrum_model_to_json(model):
    """Serialize a SpectrumModel to the document parse_spectrum_model reads."""
    doc = {
        "d": model.d,
        "components": [
            {"variance": c.variance, "kappa": c.kappa, "smoothness": c.smoothness}
            for c in model.components
        ],
    }
    cross = []
    for i in range(model.p):
        for j in range(i + 1, model.p):
            rho = float(model.colocation[i, j])
            lag = model.phase_lags[i, j].tolist()
            if rho != 0.0 or any(v != 0.0 for v in lag):
                cross.append({"i": i, "j": j, "rho": rho, "lag": lag})
    if cross:
        doc["cross"] = cross
    return doc


def parse_method(doc, where="config"):
    method = doc.get("method", "lower-triangular")
    if method not in SQRT_METHODS:
        raise ConfigError(f"{where}.method must be one of {list(SQRT_METHODS)}")
    return method


def parse_kernel(doc, grid, where="kernel"):
    _require_mapping(doc, where)
    if "name" not in doc:
        raise ConfigError(f"{where}: missing keys ['name']")
    params = {k: v for k, v in doc.items() if k not in ("name", "p")}
    try:
        return convolution.build_kernel(doc["name"], grid, p=doc.get("p", 1), **params)
    except (ValueError, TypeError, KeyError) as err:
        raise ConfigError(f"{where}: {err}") from err


def parse_noise(doc, where="noise"):
    check_keys(doc, {"family"}, {"shape", "scale"}, where)
    try:
        return convolution.NoiseMeasureSpec(
            family=doc["family"], shape=doc.get("shape"), scale=doc.get("scale")
        )
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from err


def parse_problem(doc, where="problem"):
    check_keys(doc, {"family"}, {"smoothness", "domain", "n_obs", "data", "grid"}, where)
    family = doc["family"]
    smoothness = doc.get("smoothness", 1.0)
    if family == likelihood.DENSE_MATERN:
        for key in ("domain", "n_obs", "data"):
            if key not in doc:
                raise ConfigError(f"{where}: dense-matern needs {key!r}")
        domain = doc["domain"]
        if not (isinstance(domain, list) and len(domain) == 2):
            raise ConfigError(f"{where}.domain must be [lo, hi]")
        n = doc["n_obs"]
        sites = np.linspace(domain[0], domain[1], int(n))
        data = doc["data"]
        check_keys(data, set(), {"values", "simulate"}, f"{where}.data")
        if "values" in data:
            y = np.asarray(data["values"], dtype=float)
        elif "simulate" in data:
            sim = data["simulate"]
            check_keys(sim, {"variance", "kappa", "seed"}, (), f"{where}.data.simulate")
            y = likelihood.simulate_matern_observations(
                sites, sim["variance"], sim["kappa"], smoothness, sim["seed"]
            )
        else:
            raise ConfigError(f"{where}.data needs 'values' or 'simulate'")
        try:
            return likelihood.LikelihoodProblem(
                family=family, y=y, smoothness=smoothness, sites=sites
            )
        except ValueError as err:
            raise ConfigError(f"{where}: {err}") from err
    raise ConfigError(f"{where}.family must be {likelihood.DENSE_MATERN!r} for this command")


def parse_spde(doc, where="config"):
    check_keys(doc, {"grid", "components"}, {"coupling", "replicates"}, where)
    grid = parse_grid(doc["grid"], f"{where}.grid", periodic=False)
    comps = doc["components"]
    if not isinstance(comps, list) or not comps:
        raise ConfigError(f"{where}.components must be a non-empty list")
    kappas = []
    variances = []
    for k, c in enumerate(comps):
        cw = f"{where}.components[{k}]"
        check_keys(c, {"kappa", "variance"}, (), cw)
        kappas.append(_number(c, "kappa", cw, True))
        variances.append(_number(c, "variance", cw, True))
    p = len(comps)
    coupling = np.asarray(doc.get("coupling", np.eye(p).tolist()), dtype=float)
    if coupling.shape != (p, p):
        raise ConfigError(f"{where}.coupling must be {p}x{p}")
    return grid, kappas, variances, coupling
