"""Gaussian log-likelihoods (dense and sparse paths) and ridge diagnostics.

Parameters are theta = (log sigma2, log kappa) with the smoothness held
fixed.  Under infill sampling only the combination sigma2 * kappa^(2 nu) is
well determined, which flattens the likelihood along the curve
sigma2 * kappa^(2 nu) = const; in log coordinates that curve is the
straight line with tangent (-2 nu, 1).  ``ridge_report`` quantifies the
effect through the negative-Hessian eigenvalue ratio at the maximum and
the angle between the flat eigenvector and that tangent.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.special import gammaln, kv

from . import _rng
from . import markov
from .errors import BoundaryError, DefinitenessError, NumericalError

DENSE_MATERN = "dense-matern"
MARKOV = "markov"

JITTER = 1e-8

#: dense-path guard: inverting the precision is O(n^3)
MAX_DENSE_SITES = 4096


def matern_correlation(x, smoothness):
    """Standard Matern correlation 2^(1-nu)/Gamma(nu) x^nu K_nu(x), 1 at x=0."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    pos = x > 0
    xv = x[pos]
    log_c = (1.0 - smoothness) * np.log(2.0) - gammaln(smoothness)
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(log_c + smoothness * np.log(xv)) * kv(smoothness, xv)
    out[pos] = np.where(np.isfinite(val), val, 0.0)  # kv underflows at large x
    return out


def _matern_dlogkappa(x, smoothness):
    """d/d(log kappa) of the Matern correlation at x = kappa * r.

    Uses d/dx [x^nu K_nu(x)] = -x^nu K_(nu-1)(x); vanishes at x = 0.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xv = x[pos]
    log_c = (1.0 - smoothness) * np.log(2.0) - gammaln(smoothness)
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(log_c + (smoothness + 1.0) * np.log(xv)) * kv(smoothness - 1.0, xv)
    out[pos] = -np.where(np.isfinite(val), val, 0.0)
    return out


@dataclass(eq=False)
class LikelihoodProblem:
    """Observations plus the model family they are scored under.

    ``dense-matern``: y observed at arbitrary sites (N, d), covariance
    sigma2 * matern_corr(kappa r) with a sigma2-scaled jitter nugget on the
    diagonal.  ``markov``: y observes every site of a lattice; the
    precision is the calibrated integer-order operator, with the jitter
    applied on the precision diagonal so the dense and sparse paths score
    the identical model.
    """

    family: str
    y: np.ndarray
    smoothness: float = 1.0
    sites: np.ndarray | None = None
    grid: object = None
    jitter: float = JITTER

    def __post_init__(self):
        if self.family not in (DENSE_MATERN, MARKOV):
            raise ValueError(f"unknown family {self.family!r}")
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size < 2:
            raise ValueError("need at least 2 observations")
        object.__setattr__(self, "y", y)
        if not self.jitter > 0:
            raise ValueError("jitter must be positive")
        if self.family == DENSE_MATERN:
            if self.sites is None:
                raise ValueError("dense-matern problems need observation sites")
            s = np.asarray(self.sites, dtype=float)
            if s.ndim == 1:
                s = s[:, None]
            if s.shape[0] != y.size:
                raise ValueError("sites and observations disagree in length")
            object.__setattr__(self, "sites", s)
            object.__setattr__(self, "_dists", cdist(s, s))
            # optimizers evaluate value and gradient at the same theta
            object.__setattr__(self, "_theta_cache", (None, None))
        else:
            if self.grid is None:
                raise ValueError("markov problems need a grid")
            if self.grid.n_sites != y.size:
                raise ValueError("grid size and observations disagree")
            if self.grid.n_sites > MAX_DENSE_SITES:
                raise ValueError("markov likelihood problems are desk-scale")

    @property
    def n_obs(self):
        return self.y.size

    # -- dense-matern covariance pieces ------------------------------------

    def _covariance(self, theta):
        sigma2, kappa = np.exp(theta[0]), np.exp(theta[1])
        C = sigma2 * matern_correlation(kappa * self._dists, self.smoothness)
        C[np.diag_indices_from(C)] += self.jitter * sigma2
        return C

    def _factored(self, theta):
        """(C, cho_factor, alpha) at theta, cached for back-to-back calls."""
        key = theta.tobytes()
        cached_key, cached = self._theta_cache
        if cached_key == key:
            return cached
        C = self._covariance(theta)
        try:
            cf = sla.cho_factor(C.copy(), lower=True)
        except np.linalg.LinAlgError as err:
            raise DefinitenessError(
                f"covariance is not positive definite: {err}"
            ) from err
        alpha = sla.cho_solve(cf, self.y)
        out = (C, cf, alpha)
        object.__setattr__(self, "_theta_cache", (key, out))
        return out

    def _covariance_grads(self, theta, C):
        sigma2, kappa = np.exp(theta[0]), np.exp(theta[1])
        dC_dls2 = C  # jitter scales with sigma2, so d/dlog sigma2 is C itself
        dC_dlk = sigma2 * _matern_dlogkappa(kappa * self._dists, self.smoothness)
        return dC_dls2, dC_dlk

    def loglik(self, theta):
        return dense_loglik(self, theta)

    def loglik_grad(self, theta):
        return dense_loglik_grad(self, theta)


def _markov_precision(problem, theta):
    import scipy.sparse as sp

    sigma2, kappa = np.exp(theta[0]), np.exp(theta[1])
    tau = markov.calibrate_tau(kappa, problem.grid, sigma2)
    Q = markov.assemble_component_precision(kappa, tau, problem.grid).to_scipy()
    return (Q + (problem.jitter / sigma2) * sp.identity(Q.shape[0])).tocsc()


def dense_loglik(problem, theta):
    """-(1/2)(N log 2pi + log det C + y' C^-1 y) via dense factorization."""
    theta = np.asarray(theta, dtype=float)
    y = problem.y
    n = problem.n_obs
    if problem.family == DENSE_MATERN:
        _, cf, alpha = problem._factored(theta)
    else:
        C = np.linalg.inv(_markov_precision(problem, theta).toarray())
        try:
            cf = sla.cho_factor(C, lower=True)
        except np.linalg.LinAlgError as err:
            raise DefinitenessError(
                f"covariance is not positive definite: {err}"
            ) from err
        alpha = sla.cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return -0.5 * (n * np.log(2.0 * np.pi) + logdet + float(y @ alpha))


def dense_loglik_grad(problem, theta):
    """Gradient in (log sigma2, log kappa) by the trace identities."""
    if problem.family != DENSE_MATERN:
        raise ValueError("analytic gradients are provided for the dense-matern family")
    theta = np.asarray(theta, dtype=float)
    C, cf, alpha = problem._factored(theta)
    grads = []
    for G in problem._covariance_grads(theta, C):
        CinvG = sla.cho_solve(cf, G)
        grads.append(0.5 * (alpha @ (G @ alpha) - np.trace(CinvG)))
    return np.array(grads)


def gaussian_loglik_from_precision(Q, y, perm=None):
    """log N(y; 0, Q^-1) through a sparse factorization of Q.

    The precision log-determinant enters with the opposite sign of the
    covariance one: -(1/2)(N log 2pi - log det Q + y' Q y).
    """
    y = np.asarray(y, dtype=float).ravel()
    op = Q if isinstance(Q, markov.SparseOperator) else markov.SparseOperator.from_scipy(Q)
    if perm is None:
        perm = np.arange(op.n)
    factor = markov.sparse_factorize(op, perm)
    quad = float(y @ (op.to_scipy() @ y))
    return -0.5 * (y.size * np.log(2.0 * np.pi) - factor.logdet + quad)


def sparse_loglik(problem, theta):
    """Same value through the sparse precision: log det Q enters negated."""
    if problem.family != MARKOV:
        raise ValueError("sparse_loglik applies to the markov family")
    theta = np.asarray(theta, dtype=float)
    Q = _markov_precision(problem, theta)
    perm = markov.nested_dissection_order(problem.grid, 1)
    return gaussian_loglik_from_precision(
        markov.SparseOperator.from_scipy(Q, symmetric=True), problem.y, perm
    )


def fd_gradient_check(surface, theta, step=1e-4):
    """Max relative gap between analytic and central-difference gradients.

    ``surface`` is anything with ``loglik`` and ``loglik_grad`` methods (a
    dense-matern problem qualifies).  The gap is normalized by the largest
    analytic gradient entry; a step so small the differences vanish while
    the gradient does not raises ``NumericalError``.
    """
    theta = np.asarray(theta, dtype=float)
    if not step > 0:
        raise ValueError("step must be positive")
    g = np.asarray(surface.loglik_grad(theta), dtype=float)
    fd = np.empty_like(g)
    diffs = np.empty_like(g)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        hi = surface.loglik(theta + e)
        lo = surface.loglik(theta - e)
        diffs[k] = hi - lo
        fd[k] = (hi - lo) / (2.0 * step)
    scale = float(np.max(np.abs(g)))
    if scale == 0.0:
        return float(np.max(np.abs(fd)))
    if np.all(diffs == 0.0):
        raise NumericalError(f"step {step} underflows the likelihood differences")
    return float(np.max(np.abs(fd - g)) / scale)


@dataclass(eq=False)
class ProfileSurface:
    log_sigma2: np.ndarray
    log_kappa: np.ndarray
    loglik: np.ndarray = field(repr=False)

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("log_sigma2,log_kappa,loglik\n")
            for i, ls in enumerate(self.log_sigma2):
                for j, lk in enumerate(self.log_kappa):
                    fh.write(f"{ls:.17g},{lk:.17g},{self.loglik[i, j]:.17g}\n")

    def argmax(self):
        i, j = np.unravel_index(np.argmax(self.loglik), self.loglik.shape)
        return np.array([self.log_sigma2[i], self.log_kappa[j]])


def profile_surface(problem, log_sigma2_grid, log_kappa_grid):
    """Log-likelihood on a rectangular theta grid."""
    ls = np.asarray(log_sigma2_grid, dtype=float)
    lk = np.asarray(log_kappa_grid, dtype=float)
    vals = np.empty((ls.size, lk.size))
    for i, a in enumerate(ls):
        for j, b in enumerate(lk):
            vals[i, j] = dense_loglik(problem, np.array([a, b]))
    return ProfileSurface(log_sigma2=ls, log_kappa=lk, loglik=vals)


@dataclass(eq=False)
class RidgeReport:
    """Curvature diagnostic of the likelihood maximum, in log coordinates."""

    theta_hat: np.ndarray
    eigenvalues: tuple            # (lambda1, lambda2), descending, of -Hessian
    anisotropy_ratio: float
    flat_direction: np.ndarray
    microergodic_angle_deg: float
    smoothness: float
    starts: np.ndarray = field(repr=False)
    loglik_at_max: float = float("nan")

    @property
    def sigma2_hat(self):
        return float(np.exp(self.theta_hat[0]))

    @property
    def kappa_hat(self):
        return float(np.exp(self.theta_hat[1]))

    def to_json(self, path=None):
        doc = {
            "theta_hat": {"log_sigma2": float(self.theta_hat[0]),
                          "log_kappa": float(self.theta_hat[1])},
            "sigma2_hat": self.sigma2_hat,
            "kappa_hat": self.kappa_hat,
            "neg_hessian_eigenvalues": [float(v) for v in self.eigenvalues],
            "anisotropy_ratio": float(self.anisotropy_ratio),
            "flat_direction": [float(v) for v in self.flat_direction],
            "microergodic_angle_deg": float(self.microergodic_angle_deg),
            "smoothness": float(self.smoothness),
            "coordinates": "(log sigma2, log kappa)",
            "loglik_at_max": float(self.loglik_at_max),
            "starts": self.starts.tolist(),
        }
        text = json.dumps(doc, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def default_starts(problem):
    """Four documented optimizer starts spanning variance and range scales.

    Variance starts bracket the sample variance by a factor of 4; range
    starts pair a domain-scale kappa (5 / extent) with a spacing-scale one
    (0.5 / min site gap).
    """
    v = max(float(np.var(problem.y)), 1e-12)
    s = problem.sites
    extent = float(np.max(s.max(axis=0) - s.min(axis=0)))
    gaps = np.diff(np.unique(s[:, 0]))
    min_gap = float(gaps.min()) if gaps.size else extent
    k_lo = 5.0 / extent
    k_hi = 0.5 / min_gap
    return np.array(
        [
            [np.log(v), np.log(k_lo)],
            [np.log(v), np.log(k_hi)],
            [np.log(4.0 * v), np.log(k_lo)],
            [np.log(v / 4.0), np.log(k_hi)],
        ]
    )


def _search_bounds(problem):
    v = max(float(np.var(problem.y)), 1e-12)
    s = problem.sites
    extent = float(np.max(s.max(axis=0) - s.min(axis=0)))
    gaps = np.diff(np.unique(s[:, 0]))
    min_gap = float(gaps.min()) if gaps.size else extent
    return [
        (np.log(v) - 12.0, np.log(v) + 12.0),
        (np.log(0.05 / extent), np.log(20.0 / min_gap)),
    ]


def _neg_hessian(problem, theta, step=1e-4):
    """Central differences of the analytic gradient, symmetrized."""
    k = theta.size
    H = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = step
        gp = dense_loglik_grad(problem, theta + e)
        gm = dense_loglik_grad(problem, theta - e)
        H[:, j] = (gp - gm) / (2.0 * step)
    H = 0.5 * (H + H.T)
    return -H


def ridge_report(problem, starts=None, hessian_step=1e-4):
    """Locate the MLE and quantify the variance/range ridge.

    Runs a derivative-based local search from the documented starts, keeps
    the best interior maximizer (ties break toward smaller |theta|), then
    eigendecomposes the negative Hessian.  The flat direction is the
    eigenvector of the smaller eigenvalue; its angle to the microergodic
    tangent (-2 nu, 1) is reported in degrees.
    """
    if problem.family != DENSE_MATERN:
        raise ValueError("ridge diagnostics run on the dense-matern family")
    starts = default_starts(problem) if starts is None else np.asarray(starts, float)
    bounds = _search_bounds(problem)

    def neg(theta):
        return -dense_loglik(problem, theta)

    def neg_grad(theta):
        return -dense_loglik_grad(problem, theta)

    best = None
    for x0 in starts:
        res = minimize(neg, x0, jac=neg_grad, method="L-BFGS-B", bounds=bounds)
        if not res.success and not np.isfinite(res.fun):
            continue
        cand = (res.fun, float(np.linalg.norm(res.x)), res.x)
        if best is None or cand[:2] < best[:2]:
            best = cand
    if best is None:
        raise NumericalError("no optimizer start converged")
    theta_hat = best[2]
    for (lo, hi), v in zip(bounds, theta_hat):
        span = hi - lo
        if v - lo < 1e-6 * span or hi - v < 1e-6 * span:
            raise BoundaryError(
                f"MLE component {v:.4f} sits on the search boundary [{lo:.4f}, {hi:.4f}]"
            )
    negH = _neg_hessian(problem, theta_hat, step=hessian_step)
    vals, vecs = np.linalg.eigh(negH)  # ascending
    lam2, lam1 = float(vals[0]), float(vals[1])
    if lam2 <= 0:
        raise NumericalError(
            f"negative curvature {lam2:.3e} at the optimum; not an interior maximum"
        )
    flat = vecs[:, 0]
    nu = problem.smoothness
    tangent = np.array([-2.0 * nu, 1.0])
    tangent /= np.linalg.norm(tangent)
    cosang = abs(float(flat @ tangent))
    angle = math.degrees(math.acos(min(1.0, cosang)))
    return RidgeReport(
        theta_hat=theta_hat,
        eigenvalues=(lam1, lam2),
        anisotropy_ratio=lam1 / lam2,
        flat_direction=flat,
        microergodic_angle_deg=angle,
        smoothness=nu,
        starts=starts,
        loglik_at_max=-best[0],
    )


def simulate_matern_observations(sites, sigma2, kappa, smoothness, seed, jitter=JITTER):
    """Draw y ~ N(0, sigma2 * matern_corr(kappa r) + jitter sigma2 I)."""
    s = np.asarray(sites, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    C = sigma2 * matern_correlation(kappa * cdist(s, s), smoothness)
    C[np.diag_indices_from(C)] += jitter * sigma2
    L = np.linalg.cholesky(C)
    z = _rng.stream(seed, 0, 0, _rng.DATA_SIMULATION).standard_normal(s.shape[0])
    return L @ z
