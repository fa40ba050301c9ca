"""Analytic and empirical cross-covariances on the torus, and asymmetry metrics.

All analytic covariances are the lattice-band ones implied by the
discretized spectrum on the same grid the sampler uses,

    C(h) = sum_k S(w_k) exp(i h . w_k) dw,

not the continuum closed form; sampler and target then agree without
truncation or aliasing allowances.  Lags are integer grid offsets wrapped
to (-m/2, m/2].
"""

from dataclasses import dataclass, field

import numpy as np

from . import grid as grids
from . import simulate
from . import spectra
from .errors import NumericalError


@dataclass(frozen=True)
class CrossCovariance:
    """Matrix-valued covariance samples C(h) on a set of integer lags.

    ``lags`` has shape (n_lags, d) in grid units, ``values`` has shape
    (n_lags, p, p); ``kind`` is "analytic" or "empirical".  ``se`` holds
    Monte Carlo standard errors where they were tracked (NaN elsewhere).
    """

    lags: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    kind: str
    meta: dict = field(default_factory=dict, repr=False)
    se: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=int)
        vals = np.asarray(self.values, dtype=float)
        if lags.ndim != 2 or vals.ndim != 3 or lags.shape[0] != vals.shape[0]:
            raise ValueError("lags must be (n, d) and values (n, p, p)")
        if self.kind not in ("analytic", "empirical"):
            raise ValueError(f"unknown kind {self.kind!r}")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", vals)
        object.__setattr__(
            self, "_index", {tuple(l): i for i, l in enumerate(lags.tolist())}
        )

    @property
    def p(self):
        return self.values.shape[-1]

    @property
    def d(self):
        return self.lags.shape[-1]

    def has_lag(self, lag):
        return tuple(np.atleast_1d(lag).tolist()) in self._index

    def at(self, lag):
        """C(h) for a stored integer lag; KeyError when absent."""
        key = tuple(int(v) for v in np.atleast_1d(lag))
        return self.values[self._index[key]]

    def se_at(self, lag):
        if self.se is None:
            raise KeyError("no standard errors stored")
        key = tuple(int(v) for v in np.atleast_1d(lag))
        return self.se[self._index[key]]

    def to_csv(self, path):
        """Write rows lag components, i, j, value, kind (17 significant digits)."""
        with open(path, "w", encoding="utf-8") as fh:
            lag_cols = ",".join(f"lag_{a}" for a in range(self.d))
            fh.write(f"{lag_cols},i,j,value,kind\n")
            for k, lag in enumerate(self.lags):
                lag_txt = ",".join(str(int(v)) for v in lag)
                for i in range(self.p):
                    for j in range(self.p):
                        fh.write(
                            f"{lag_txt},{i},{j},{self.values[k, i, j]:.17g},{self.kind}\n"
                        )


def _wrap_lags(sizes):
    """All torus lags in raster order, wrapped to (-m/2, m/2]."""
    axes = [np.where(np.arange(m) <= m // 2, np.arange(m), np.arange(m) - m) for m in sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=-1)


def _lag_flat_index(lag, sizes):
    flat = 0
    for v, m in zip(lag, sizes):
        flat = flat * m + (int(v) % m)
    return flat


def analytic_cross_cov_from_spectrum(S, grid, meta=None):
    """Lattice covariance of an explicit spectrum array of shape sizes + (p, p)."""
    p = S.shape[-1]
    spatial_axes = tuple(range(grid.d))
    scale = (2.0 * np.pi / grid.spacing) ** grid.d
    C = np.fft.ifftn(S, axes=spatial_axes).real * scale
    return CrossCovariance(
        lags=_wrap_lags(grid.sizes),
        values=C.reshape(-1, p, p),
        kind="analytic",
        meta=meta or {"grid": grid},
    )


def analytic_cross_cov(model, grid):
    """Exact cross-covariance of the spectral sampler on this grid.

    Returns C at every torus lag; C_ij(h) = C_ji(-h) holds to transform
    roundoff and the h = delta peak of lagged pairs is visible directly.
    """
    if model.d != grid.d:
        raise ValueError("model and grid dimensions differ")
    fg = simulate.build_frequency_grid_cached(grid)
    S = spectra.discretized_spectrum(model, fg)
    return analytic_cross_cov_from_spectrum(
        S, grid, meta={"grid": grid, "model_p": model.p}
    )


def _common_grid(realizations):
    if len(realizations) < 2:
        raise ValueError("need at least 2 replicates")
    g = realizations[0].grid
    tag = realizations[0].construction
    p = realizations[0].p
    for r in realizations[1:]:
        if r.grid != g or r.construction != tag or r.p != p:
            raise ValueError("realizations mix grids or constructions")
    if not g.periodic:
        raise ValueError("empirical estimator requires a periodic grid")
    return g, p


def empirical_cross_cov(realizations, max_lag, probe_lags=None):
    """Periodic-wrap empirical cross-covariance averaged over replicates.

    For i <= j the site average of x_i(s) x_j(s+h) is computed per
    replicate by FFT cross-correlation, averaged, and the product of
    component means is subtracted; entries with i > j are defined as
    C_ji(-h), so the exchange symmetry holds identically.  When
    ``probe_lags`` is given, per-replicate spread at those lags is kept and
    exposed as standard errors of the stored mean.
    """
    g, p = _common_grid(realizations)
    if not 1 <= max_lag <= min(g.sizes) // 2:
        raise ValueError(f"max_lag must be in [1, m/2], got {max_lag}")
    n_sites = g.n_sites
    n_rep = len(realizations)
    spatial_axes = tuple(range(g.d))
    pairs = [(i, j) for i in range(p) for j in range(i, p)]

    probe_idx = None
    probe_samples = None
    if probe_lags is not None:
        probe_lags = [tuple(int(v) for v in np.atleast_1d(l)) for l in probe_lags]
        probe_idx = np.array([_lag_flat_index(l, g.sizes) for l in probe_lags])
        probe_samples = np.zeros((n_rep, len(probe_lags), len(pairs)))

    def negate_field(c):
        # value at index n becomes value at (-n) mod m, per axis
        for ax in spatial_axes:
            c = np.roll(np.flip(c, axis=ax), 1, axis=ax)
        return c

    # chunked pairwise accumulation keeps the reduction order fixed
    chunk = 64
    partial = []
    buf = []
    mean_acc = np.zeros(p)
    for r_i, real in enumerate(realizations):
        x = real.values
        X = np.fft.fftn(x, axes=tuple(a + 1 for a in spatial_axes))
        corr = np.empty((len(pairs), n_sites))
        for k, (i, j) in enumerate(pairs):
            c = np.fft.ifftn(np.conj(X[i]) * X[j], axes=spatial_axes).real / n_sites
            if i == j:
                # same estimator in exact arithmetic; makes C_ii(h) == C_ii(-h)
                # bit-exact (addition is commutative entrywise)
                c = 0.5 * (c + negate_field(c))
            corr[k] = c.ravel()
        buf.append(corr)
        mean_acc += x.reshape(p, -1).mean(axis=1)
        if probe_samples is not None:
            probe_samples[r_i] = corr[:, probe_idx].T
        if len(buf) == chunk:
            partial.append(np.sum(np.stack(buf), axis=0))
            buf = []
    if buf:
        partial.append(np.sum(np.stack(buf), axis=0))
    total = np.sum(np.stack(partial), axis=0) / n_rep
    mu = mean_acc / n_rep

    offsets = np.arange(-max_lag, max_lag + 1)
    mesh = np.meshgrid(*([offsets] * g.d), indexing="ij")
    lag_list = np.stack([a.ravel() for a in mesh], axis=-1)

    values = np.zeros((len(lag_list), p, p))
    se = np.full((len(lag_list), p, p), np.nan) if probe_samples is not None else None
    sample_sd = None
    probe_lookup = {}
    if probe_samples is not None:
        sample_sd = probe_samples.std(axis=0, ddof=1)
        probe_lookup = {l: k for k, l in enumerate(probe_lags)}
    for k, lag in enumerate(lag_list):
        flat = _lag_flat_index(lag, g.sizes)
        flat_neg = _lag_flat_index(-lag, g.sizes)
        for idx, (i, j) in enumerate(pairs):
            values[k, i, j] = total[idx, flat] - mu[i] * mu[j]
            if i != j:
                values[k, j, i] = total[idx, flat_neg] - mu[i] * mu[j]
        key = tuple(int(v) for v in lag)
        if key in probe_lookup:
            sd = sample_sd[probe_lookup[key]] / np.sqrt(n_rep)
            for idx, (i, j) in enumerate(pairs):
                se[k, i, j] = sd[idx]
    if se is not None:
        # spread of the (j, i) entry at h is that of (i, j) at -h
        lookup = {tuple(int(v) for v in l): k for k, l in enumerate(lag_list)}
        for k, lag in enumerate(lag_list):
            neg = tuple(int(-v) for v in lag)
            if neg in lookup:
                kneg = lookup[neg]
                for i in range(p):
                    for j in range(i + 1, p):
                        se[k, j, i] = se[kneg, i, j]

    return CrossCovariance(
        lags=lag_list,
        values=values,
        kind="empirical",
        meta={"grid": g, "replicates": n_rep, "construction": realizations[0].construction},
        se=se,
    )


def asymmetry_index(C, i, j):
    """max_h |C_ij(h) - C_ij(-h)| / max_h |C_ij(h)| over lags with stored negations.

    Zero for an even cross-covariance; invariant under (i, j) exchange.
    Raises ``NumericalError`` when the cross-covariance is identically zero.
    """
    if C.p < 2:
        raise ValueError("asymmetry index needs p >= 2")
    num = 0.0
    den = 0.0
    for k, lag in enumerate(C.lags):
        neg = tuple(int(-v) for v in lag)
        v = C.values[k, i, j]
        den = max(den, abs(v))
        if C.has_lag(neg):
            num = max(num, abs(v - C.at(neg)[i, j]))
    if den == 0.0:
        raise NumericalError("asymmetry index undefined: cross-covariance is all zero")
    return num / den
