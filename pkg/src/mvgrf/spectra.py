"""Parametric cross-spectral density models and their matrix square roots.

A ``SpectrumModel`` maps each frequency to a Hermitian nonnegative-definite
p x p matrix: Matern-type densities on the diagonal, and geometric-mean
magnitudes with colocation coefficients and pure phase factors off the
diagonal,

    S_ij(w) = rho_ij * exp(-i w . delta_ij) * sqrt(S_ii(w) S_jj(w)).

The phase lag ``delta_ij`` shifts component j relative to component i, so
the cross-covariance of a lagged pair peaks at spatial lag ``delta_ij``
instead of 0.  ``build_filter`` factors S on a frequency grid into L with
L(w) L(w)* = S(w) and L(-w) = conj(L(w)), the symmetry that makes the
synthesized fields real.
"""

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import grid as grids
from .errors import DefinitenessError

#: relative eigenvalue tolerance below which input is declared indefinite
PSD_HARD_TOL = 1e-8
#: pivot threshold (relative to trace) for the triangular factorization
PIVOT_TOL = 1e-12

LOWER_TRIANGULAR = "lower-triangular"
HERMITIAN = "hermitian"
SQRT_METHODS = (LOWER_TRIANGULAR, HERMITIAN)


@dataclass(frozen=True)
class MaternParams:
    """Per-component Matern-type spectral density parameters.

    The density is ``c * (kappa^2 + |w|^2)^(-(nu + d/2))`` with the constant
    c fixed numerically so the density integrates to ``variance`` over R^d.
    ``kappa`` is an inverse correlation length; ``smoothness`` is nu.
    """

    variance: float
    kappa: float
    smoothness: float

    def __post_init__(self):
        for name in ("variance", "kappa", "smoothness"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@functools.lru_cache(maxsize=None)
def _normalization(kappa, smoothness, d):
    """Constant c with integral over R^d of c*(kappa^2+|w|^2)^-(nu+d/2) = 1.

    Computed by radial quadrature rather than a closed form; the integrand
    decays like r^(-1-2 nu) so the improper integral converges for nu > 0.
    """
    expo = smoothness + d / 2.0
    surface = 2.0 if d == 1 else 2.0 * np.pi

    def radial(r):
        return r ** (d - 1) * (kappa**2 + r**2) ** (-expo)

    split = 10.0 * kappa
    head, _ = integrate.quad(radial, 0.0, split, points=[kappa], limit=200)
    tail, _ = integrate.quad(radial, split, np.inf, limit=200)
    return 1.0 / (surface * (head + tail))


def component_density(params, d, omega):
    """Evaluate one component's spectral density at frequency vector(s).

    ``omega`` may be a scalar (d=1), a length-d vector, or an array whose
    last axis has length d; returns the matching scalar or array of
    nonnegative densities.
    """
    w = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ValueError("frequency must be finite")
    if w.ndim == 0:
        if d != 1:
            raise ValueError("scalar frequency only valid for d=1")
        r2 = w**2
    elif w.shape[-1] == d:
        r2 = np.sum(w**2, axis=-1)
    elif d == 1:
        r2 = w**2
    else:
        raise ValueError(f"frequency vectors must have length {d}")
    c = params.variance * _normalization(params.kappa, params.smoothness, d)
    return c * (params.kappa**2 + r2) ** (-(params.smoothness + d / 2.0))


def _as_readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectrumModel:
    """p-variate cross-spectral density model.

    ``colocation`` is the full symmetric unit-diagonal matrix of rho_ij;
    ``phase_lags`` holds delta_ij as a (p, p, d) antisymmetric array
    (delta_ji = -delta_ij).  Validity requires the colocation matrix to be
    positive semidefinite, and, for p >= 3 with nonzero lags, the lags to be
    additive (delta_ik = delta_ij + delta_jk) so that the phase matrix is a
    rank-one perturbation and S(w) stays Hermitian PSD at every frequency.
    """

    d: int
    components: tuple
    colocation: np.ndarray = field(repr=False)
    phase_lags: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        comps = tuple(self.components)
        if not comps:
            raise ValueError("need at least one component")
        for c in comps:
            if not isinstance(c, MaternParams):
                raise TypeError("components must be MaternParams")
        object.__setattr__(self, "components", comps)
        p = len(comps)
        R = _as_readonly(self.colocation).reshape(p, p)
        D = _as_readonly(self.phase_lags).reshape(p, p, self.d)
        object.__setattr__(self, "colocation", R)
        object.__setattr__(self, "phase_lags", D)
        if not np.allclose(np.diag(R), 1.0, atol=1e-14):
            raise ValueError("colocation matrix must have unit diagonal")
        if not np.array_equal(R, R.T):
            raise ValueError("colocation matrix must be symmetric")
        if np.any(np.abs(R) > 1 + 1e-14):
            raise ValueError("colocation coefficients must lie in [-1, 1]")
        if np.linalg.eigvalsh(R).min() < -1e-10 * p:
            raise ValueError("colocation matrix must be positive semidefinite")
        if not np.all(np.isfinite(D)):
            raise ValueError("phase lags must be finite")
        if not np.array_equal(D, -np.transpose(D, (1, 0, 2))):
            raise ValueError("phase lags must satisfy delta_ji = -delta_ij")
        if p >= 3 and np.any(D != 0.0):
            for i in range(p):
                for j in range(i + 1, p):
                    for k in range(j + 1, p):
                        if not np.allclose(D[i, k], D[i, j] + D[j, k], atol=1e-12):
                            raise ValueError(
                                "phase lags of 3+ components must be additive "
                                "(delta_ik = delta_ij + delta_jk) to keep the "
                                "spectrum positive semidefinite"
                            )

    @property
    def p(self):
        return len(self.components)

    @classmethod
    def from_pairs(cls, d, components, pairs=()):
        """Build from per-pair cross terms.

        ``pairs`` is an iterable of ``(i, j, rho, delta)`` with i < j;
        ``delta`` is a length-d sequence (or a scalar for d=1).  Unlisted
        pairs get rho=0, delta=0.
        """
        p = len(components)
        R = np.eye(p)
        D = np.zeros((p, p, d))
        for i, j, rho, delta in pairs:
            if not 0 <= i < j < p:
                raise ValueError(f"pair indices must satisfy 0 <= i < j < p, got {(i, j)}")
            R[i, j] = R[j, i] = float(rho)
            dv = np.atleast_1d(np.asarray(delta, dtype=float))
            if dv.shape != (d,):
                raise ValueError(f"phase lag for pair {(i, j)} must have length {d}")
            D[i, j] = dv
            D[j, i] = -dv
        return cls(d=d, components=tuple(components), colocation=R, phase_lags=D)

    @classmethod
    def bivariate(cls, comp0, comp1, rho=0.0, delta=0.0, d=1):
        return cls.from_pairs(d, (comp0, comp1), [(0, 1, rho, delta)])


def _density_stack(model, omega):
    """Component densities at omega, shape (..., p)."""
    return np.stack(
        [component_density(c, model.d, omega) for c in model.components], axis=-1
    )


def cross_spectral_field(model, omega):
    """Cross-spectral matrices at an array of frequencies.

    ``omega`` has shape (..., d); the result has shape (..., p, p) and is
    Hermitian at every frequency by construction.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.ndim == 0 or omega.shape[-1] != model.d:
        omega = omega.reshape(omega.shape + (1,)) if model.d == 1 else omega
    f = _density_stack(model, omega)
    amp = np.sqrt(f[..., :, None] * f[..., None, :])
    phase = np.einsum("...x,ijx->...ij", omega, model.phase_lags)
    S = model.colocation * amp * np.exp(-1j * phase)
    return S


def cross_spectral_matrix(model, omega):
    """Hermitian p x p cross-spectral matrix at a single frequency vector."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.shape != (model.d,):
        raise ValueError(f"expected a length-{model.d} frequency vector")
    return cross_spectral_field(model, omega)


@dataclass(frozen=True)
class PsdDiagnostic:
    ok: bool
    min_eigenvalue: float
    hermitian_defect: float


def validate_hermitian_psd(S, tol=1e-10):
    """Check Hermitian symmetry and positive semidefiniteness.

    ``ok`` iff the largest entry of S - S* is at most ``tol`` and the
    minimum eigenvalue of the Hermitian part is at least ``-tol``.
    """
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    defect = float(np.abs(S - S.conj().T).max()) if S.size else 0.0
    herm = 0.5 * (S + S.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm).min().real)
    return PsdDiagnostic(
        ok=(defect <= tol and min_eig >= -tol),
        min_eigenvalue=min_eig,
        hermitian_defect=defect,
    )


def _hermitian_sqrt_stack(S):
    """Hermitian PSD square roots of a (..., p, p) stack.

    Eigenvalues in [-PSD_HARD_TOL * trace, 0) are clipped to zero; more
    negative ones raise ``DefinitenessError``.
    """
    vals, vecs = np.linalg.eigh(S)
    trace = np.trace(S, axis1=-2, axis2=-1).real
    floor = -PSD_HARD_TOL * np.maximum(trace, np.finfo(float).tiny)
    bad = vals[..., 0] < floor
    if np.any(bad):
        worst = float(vals[..., 0][bad].min())
        raise DefinitenessError(
            f"matrix is indefinite: eigenvalue {worst:.3e} below tolerance",
            eigenvalue=worst,
        )
    vals = np.clip(vals, 0.0, None)
    root = np.sqrt(vals)
    return np.einsum("...ik,...k,...jk->...ij", vecs, root, vecs.conj())


def _cholesky_stack(S):
    """Lower-triangular factors of a (..., p, p) Hermitian stack.

    Returns (L, fallback_mask): entries of the mask flag frequencies whose
    factorization hit a pivot below PIVOT_TOL * trace and need the
    eigen-based fallback.
    """
    S = np.asarray(S)
    p = S.shape[-1]
    L = np.zeros_like(S, dtype=complex)
    trace = np.trace(S, axis1=-2, axis2=-1).real
    thresh = PIVOT_TOL * np.maximum(trace, np.finfo(float).tiny)
    fallback = np.zeros(S.shape[:-2], dtype=bool)
    for j in range(p):
        acc = S[..., j, j].real - np.sum(np.abs(L[..., j, :j]) ** 2, axis=-1)
        small = acc < thresh
        fallback |= small
        piv = np.sqrt(np.where(small, 1.0, acc))
        L[..., j, j] = piv
        for i in range(j + 1, p):
            s = S[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j].conj(), axis=-1)
            L[..., i, j] = s / piv
    return L, fallback


def spectral_sqrt(S, method=LOWER_TRIANGULAR):
    """Factor a Hermitian PSD matrix as L L* = S.

    ``lower-triangular`` returns the Cholesky-type factor, falling back to
    the eigen square root when a pivot drops below PIVOT_TOL times the
    trace (rank-deficient input); ``hermitian`` returns the unique
    Hermitian PSD square root.
    """
    if method not in SQRT_METHODS:
        raise ValueError(f"unknown square-root method {method!r}")
    S = np.asarray(S, dtype=complex)
    diag = validate_hermitian_psd(S, tol=PSD_HARD_TOL * max(abs(np.trace(S).real), 1.0))
    if not diag.ok:
        raise DefinitenessError(
            f"input is not Hermitian PSD (min eigenvalue {diag.min_eigenvalue:.3e}, "
            f"hermitian defect {diag.hermitian_defect:.3e})",
            eigenvalue=diag.min_eigenvalue,
        )
    if method == HERMITIAN:
        return _hermitian_sqrt_stack(S)
    L, fallback = _cholesky_stack(S)
    if fallback:
        return _hermitian_sqrt_stack(S)
    return L


@dataclass(frozen=True)
class SpectralFilter:
    """Matrix square root of a model's spectrum on a frequency grid.

    ``values`` has shape ``sizes + (p, p)``; at every grid frequency
    L L* = S, and L(-w) = conj(L(w)) holds bit-exactly because the factor
    is computed on half-space representatives and reflected.
    """

    freq_grid: grids.FrequencyGrid
    values: np.ndarray = field(repr=False)
    method: str = LOWER_TRIANGULAR

    @property
    def p(self):
        return self.values.shape[-1]


def discretized_spectrum(model, freq_grid):
    """S evaluated on the grid, symmetrized to be real at self-conjugate points.

    At self-conjugate frequencies (0 and Nyquist) the +-w contributions of
    the continuum merge into one lattice point, so the discrete model takes
    the real part there; elsewhere S is used as-is.  This is the exact
    second-order target of the torus sampler.
    """
    S = cross_spectral_field(model, freq_grid.omega)
    flat = S.reshape(-1, model.p, model.p)
    sc = freq_grid.flat_indices(grids.SELF_CONJUGATE)
    flat[sc] = flat[sc].real
    return flat.reshape(S.shape)


def build_filter(model, freq_grid, method=LOWER_TRIANGULAR):
    """Precompute the spectral filter L on a frequency grid.

    L is factored only on half-space representatives and self-conjugate
    points; reflected indices are filled with the complex conjugate, which
    enforces the realness symmetry exactly.
    """
    if method not in SQRT_METHODS:
        raise ValueError(f"unknown square-root method {method!r}")
    if freq_grid.grid.d != model.d:
        raise ValueError("model and grid dimensions differ")
    p = model.p
    S = discretized_spectrum(model, freq_grid).reshape(-1, p, p)
    label = freq_grid.label.ravel()
    active = np.nonzero(label != grids.REFLECTED)[0]

    try:
        if method == HERMITIAN:
            L_active = _hermitian_sqrt_stack(S[active])
        else:
            L_active, fallback = _cholesky_stack(S[active])
            if np.any(fallback):
                L_active[fallback] = _hermitian_sqrt_stack(S[active][fallback])
    except DefinitenessError as err:
        err.frequency = _locate_bad_frequency(S, active, freq_grid)
        raise

    L = np.zeros_like(S)
    L[active] = L_active
    refl = np.nonzero(label == grids.REFLECTED)[0]
    L[refl] = L[freq_grid.reflection[refl]].conj()
    return SpectralFilter(
        freq_grid=freq_grid,
        values=L.reshape(freq_grid.omega.shape[:-1] + (p, p)),
        method=method,
    )


def _locate_bad_frequency(S, active, freq_grid):
    """Find the first active frequency whose spectrum matrix is indefinite."""
    omega_flat = freq_grid.omega.reshape(-1, freq_grid.omega.shape[-1])
    for k in active:
        if np.linalg.eigvalsh(0.5 * (S[k] + S[k].conj().T)).min() < -PSD_HARD_TOL * max(
            abs(np.trace(S[k]).real), 1.0
        ):
            return tuple(omega_flat[k])
    return None
