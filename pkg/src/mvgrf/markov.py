"""Sparse Markov (SPDE-style) precision operators, factorization, benchmarks.

A per-component operator A = kappa^2 I + (-Lap_h) (5-point Laplacian,
Neumann-reflected boundary) gives the integer-order precision
Q = tau^2 h^d A^T A, whose Matern-like field has nu = 2 - d/2.  Components
couple through a unit-lower-triangular mixing T: the joint precision of
x = (T kron I) z is (T^-T kron I) blockdiag(Q_i) (T^-1 kron I).

Factorization uses a recursive coordinate-bisection (nested dissection)
ordering with width-2 separators, which disconnect the squared operator's
distance-2 stencil, and an unpivoted sparse LU that coincides with the
Cholesky factorization for these SPD matrices.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import _rng
from . import grid as grids
from .errors import DefinitenessError
from .simulate import Realization

try:  # single-thread timing protocol for benchmarks
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    import contextlib

    def threadpool_limits(limits=None):
        return contextlib.nullcontext()


@dataclass(frozen=True)
class SparseOperator:
    """Symmetric-aware sparse matrix in sorted coordinate form."""

    n: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    vals: np.ndarray = field(repr=False)
    symmetric: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        vals = np.asarray(self.vals, dtype=float)
        if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, vals must be equal-length 1-D arrays")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                raise ValueError("duplicate (row, col) entries")
        for a in (rows, cols, vals):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)
        if self.symmetric:
            m = self.to_scipy()
            gap = abs(m - m.T).max() if m.nnz else 0.0
            scale = max(abs(vals).max() if vals.size else 0.0, 1.0)
            if gap > 1e-14 * scale:
                raise ValueError(f"matrix marked symmetric but asymmetry is {gap:.3e}")

    @classmethod
    def from_scipy(cls, mat, symmetric=False):
        coo = sp.coo_matrix(mat)
        coo.sum_duplicates()
        return cls(
            n=coo.shape[0], rows=coo.row, cols=coo.col, vals=coo.data,
            symmetric=symmetric,
        )

    def to_scipy(self):
        return sp.csc_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.n, self.n)
        )

    @property
    def nnz(self):
        return int(self.vals.size)


def _neg_laplacian_1d(m, h):
    main = np.full(m, 2.0)
    main[0] = main[-1] = 1.0  # Neumann reflection at the half cell
    off = np.full(m - 1, -1.0)
    return sp.diags([off, main, off], [-1, 0, 1]) / h**2


def _shifted_operator(kappa, grid):
    """A = kappa^2 I + (-Lap_h) on the grid, 2d+1-point stencil."""
    h = grid.spacing
    if grid.d == 1:
        lap = _neg_laplacian_1d(grid.sizes[0], h)
    else:
        m1, m2 = grid.sizes
        lap = sp.kronsum(_neg_laplacian_1d(m2, h), _neg_laplacian_1d(m1, h))
    return (kappa**2 * sp.identity(grid.n_sites) + lap).tocsc()


def assemble_component_precision(kappa, tau, grid):
    """Q = tau^2 h^d A^T A for one component; symmetric positive definite."""
    if not kappa > 0 or not tau > 0:
        raise ValueError("kappa and tau must be positive")
    A = _shifted_operator(kappa, grid)
    Q = (tau**2 * grid.cell_volume) * (A.T @ A)
    return SparseOperator.from_scipy(Q.tocsc(), symmetric=True)


def _interior_third_indices(grid):
    slices = []
    for m in grid.sizes:
        if m < 3:
            raise ValueError(f"grid too small for an interior third (size {m})")
        lo = m // 3
        hi = max(lo + 1, (2 * m) // 3)
        slices.append(np.arange(lo, hi))
    if grid.d == 1:
        return slices[0]
    a, b = np.meshgrid(*slices, indexing="ij")
    return (a * grid.sizes[1] + b).ravel()


def _selected_inverse_diagonal(Q_csc, indices):
    """diag(Q^-1) entries at the given indices, by chunked direct solves."""
    lu = splu(Q_csc)
    out = np.empty(len(indices))
    chunk = 256
    for start in range(0, len(indices), chunk):
        idx = indices[start : start + chunk]
        rhs = np.zeros((Q_csc.shape[0], len(idx)))
        rhs[idx, np.arange(len(idx))] = 1.0
        sol = lu.solve(rhs)
        out[start : start + len(idx)] = sol[idx, np.arange(len(idx))]
    return out


def calibrate_tau(kappa, grid, target_variance):
    """tau making the mean interior-third marginal variance equal the target.

    One factorization at tau = 1 suffices: the variance scales as 1/tau^2,
    so the rescaled tau hits the target exactly (up to the solver).
    """
    if not target_variance > 0:
        raise ValueError("target variance must be positive")
    interior = _interior_third_indices(grid)
    Q1 = assemble_component_precision(kappa, 1.0, grid)
    diag = _selected_inverse_diagonal(Q1.to_scipy(), np.asarray(interior))
    v1 = float(diag.mean())
    return float(np.sqrt(v1 / target_variance))


@dataclass(eq=False)
class PrecisionModel:
    """Coupled multivariate precision on a (possibly margin-extended) grid.

    ``grid`` is the computation domain; ``user_grid``/``margin`` describe
    the crop applied to sampled fields.  The factorization is computed on
    first use and then reused (read-only).
    """

    grid: grids.GridSpec
    precision: SparseOperator
    coupling: np.ndarray
    kappas: tuple = ()
    taus: tuple = ()
    user_grid: grids.GridSpec | None = None
    margin: int = 0
    _factor: object = field(default=None, repr=False)

    @property
    def p(self):
        return self.coupling.shape[0]

    def factorize(self):
        if self._factor is None:
            perm = nested_dissection_order(self.grid, self.p)
            self._factor = sparse_factorize(self.precision, perm)
        return self._factor


def couple_components(components, coupling, grid, kappas=(), taus=(),
                      user_grid=None, margin=0):
    """Assemble the joint precision of x = (T kron I) z.

    ``components`` are the calibrated per-component precisions Q_i on a
    common grid; ``coupling`` is unit-lower-triangular.  The result is
    (T^-T kron I) blockdiag(Q_i) (T^-1 kron I).
    """
    T = np.asarray(coupling, dtype=float)
    p = len(components)
    if T.shape != (p, p):
        raise ValueError(f"coupling must be {p} x {p}")
    if not np.allclose(np.diag(T), 1.0, rtol=0, atol=0):
        raise ValueError("coupling matrix must have unit diagonal")
    if np.any(np.triu(T, 1) != 0.0):
        raise ValueError("coupling matrix must be lower triangular")
    n = grid.n_sites
    for c in components:
        if c.n != n:
            raise ValueError("components must live on the given grid")
    if p == 1 or np.array_equal(T, np.eye(p)):
        # exact block-diagonal fast path; bit-identical to the components
        Q = sp.block_diag([c.to_scipy() for c in components], format="csc")
    else:
        Tinv = np.linalg.inv(T)
        mix = sp.kron(sp.csc_matrix(Tinv.T), sp.identity(n), format="csc")
        bd = sp.block_diag([c.to_scipy() for c in components], format="csc")
        Q = (mix @ bd @ mix.T).tocsc()
        Q = ((Q + Q.T) * 0.5).tocsc()  # restore exact symmetry after products
    return PrecisionModel(
        grid=grid,
        precision=SparseOperator.from_scipy(Q, symmetric=True),
        coupling=T,
        kappas=tuple(kappas),
        taus=tuple(taus),
        user_grid=user_grid,
        margin=margin,
    )


def build_precision_model(grid, kappas, target_variances, coupling=None):
    """High-level constructor: margin extension, calibration, coupling.

    The computation grid extends the requested one by ceil(2 / (kappa h))
    cells on each side (largest component range wins) to push the Neumann
    boundary away from the output region; samples are cropped back.
    """
    kappas = tuple(float(k) for k in np.atleast_1d(kappas))
    targets = tuple(float(v) for v in np.atleast_1d(target_variances))
    p = len(kappas)
    if len(targets) != p:
        raise ValueError("need one target variance per component")
    if coupling is None:
        coupling = np.eye(p)
    margin = int(np.ceil(2.0 / (min(kappas) * grid.spacing)))
    ext = grids.GridSpec(
        d=grid.d,
        sizes=tuple(m + 2 * margin for m in grid.sizes),
        spacing=grid.spacing,
        periodic=False,
    )
    comps = []
    taus = []
    for kappa, target in zip(kappas, targets):
        tau = calibrate_tau(kappa, ext, target)
        comps.append(assemble_component_precision(kappa, tau, ext))
        taus.append(tau)
    return couple_components(
        comps, coupling, ext, kappas=kappas, taus=taus,
        user_grid=grid, margin=margin,
    )


def nested_dissection_order(grid, p=1):
    """Recursive coordinate-bisection ordering for the grid graph.

    Width-2 separators (ordered after their two halves) disconnect the
    distance-2 couplings of the squared operator; blocks thinner than 4
    cells are band-ordered along their long axis.  For p > 1 the p
    component copies of a site are interleaved adjacently, giving dense
    p x p pivot blocks.
    """
    sep_w = 2

    def rec(idx):
        if idx.size <= 16:
            return list(idx.ravel())
        if idx.ndim == 2 and min(idx.shape) <= 3:
            # thin strip: band-order along the long axis
            if idx.shape[1] > idx.shape[0]:
                return list(idx.T.ravel())
            return list(idx.ravel())
        ax = int(np.argmax(idx.shape))
        k = (idx.shape[ax] - sep_w) // 2
        sl_l = [slice(None)] * idx.ndim
        sl_s = [slice(None)] * idx.ndim
        sl_r = [slice(None)] * idx.ndim
        sl_l[ax] = slice(0, k)
        sl_s[ax] = slice(k, k + sep_w)
        sl_r[ax] = slice(k + sep_w, None)
        return (
            rec(idx[tuple(sl_l)])
            + rec(idx[tuple(sl_r)])
            + list(idx[tuple(sl_s)].ravel())
        )

    flat = np.arange(grid.n_sites).reshape(grid.sizes)
    site_order = np.array(rec(flat), dtype=np.int64)
    if p == 1:
        return site_order
    n = grid.n_sites
    full = np.empty(p * n, dtype=np.int64)
    for pos, s in enumerate(site_order):
        for comp in range(p):
            full[pos * p + comp] = comp * n + s
    return full


@dataclass(eq=False)
class SparseFactor:
    """Lower-triangular F with F F^T = P Q P^T, plus solve machinery."""

    F: sp.csc_matrix = field(repr=False)
    perm: np.ndarray = field(repr=False)
    logdet: float
    _solver: object = field(repr=False, default=None)

    @property
    def nnz(self):
        return int(self.F.nnz)

    def solve_transposed(self, b):
        """Solve F^T y = b."""
        return self._solver.solve(b, trans="T")

    def solve(self, b):
        """Solve F y = b."""
        return self._solver.solve(b, trans="N")


_SPLU_OPTS = dict(
    permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(Equil=False, SymmetricMode=True)
)


def sparse_factorize(Q, perm):
    """Cholesky-type factorization of a permuted SPD sparse operator.

    The unpivoted LU of the symmetrically permuted matrix has U = D L^T, so
    F = L sqrt(D) satisfies F F^T = P Q P^T; a nonpositive pivot means the
    input was not positive definite and raises with the pivot index.
    """
    perm = np.asarray(perm, dtype=np.int64)
    Qs = Q.to_scipy() if isinstance(Q, SparseOperator) else sp.csc_matrix(Q)
    Qp = Qs[perm][:, perm].tocsc()
    try:
        lu = splu(Qp, **_SPLU_OPTS)
    except RuntimeError as err:  # SuperLU signals exact singularity this way
        raise DefinitenessError(f"factorization failed: {err}") from err
    pivots = lu.U.diagonal()
    if np.any(pivots <= 0):
        bad = int(np.argmin(pivots))
        raise DefinitenessError(
            f"nonpositive pivot {pivots[bad]:.3e} at index {bad}",
            pivot_index=bad,
            eigenvalue=float(pivots[bad]),
        )
    F = (lu.L @ sp.diags(np.sqrt(pivots))).tocsc()
    solver = splu(F, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                  options=dict(Equil=False))
    return SparseFactor(F=F, perm=perm, logdet=float(np.log(pivots).sum()), _solver=solver)


def _crop(values_flat, model):
    p = model.p
    x = values_flat.reshape((p,) + model.grid.sizes)
    if model.user_grid is None or model.margin == 0:
        return x, model.grid
    m = model.margin
    sl = (slice(None),) + tuple(slice(m, m + s) for s in model.user_grid.sizes)
    return np.ascontiguousarray(x[sl]), model.user_grid


def precision_sample(model, seed, replicate=0):
    """Draw x with precision Q by solving F^T y = z and unpermuting."""
    factor = model.factorize()
    n_total = model.p * model.grid.n_sites
    z = _rng.stream(seed, replicate, 0, _rng.MARKOV_NOISE).standard_normal(n_total)
    y = factor.solve_transposed(z)
    x = np.empty(n_total)
    x[factor.perm] = y
    # rows of the stacked vector are component-major (component i at i*n + s)
    values, out_grid = _crop(x, model)
    return Realization(
        grid=out_grid,
        values=values,
        seed=seed,
        replicate=replicate,
        construction="markov",
        provenance={
            "kappas": list(model.kappas),
            "taus": list(model.taus),
            "coupling": model.coupling.tolist(),
            "margin": model.margin,
        },
    )


@dataclass(frozen=True)
class BenchRow:
    n: int
    p: int
    path: str
    median_seconds: float
    factor_nonzeros: float


@dataclass
class BenchResult:
    rows: list

    def slopes(self):
        """Fitted log-log slopes of median time against size, per path."""
        out = {}
        for path in ("sparse", "dense"):
            pts = [
                (r.n, r.median_seconds)
                for r in self.rows
                if r.path == path and np.isfinite(r.median_seconds)
            ]
            if len(pts) >= 2:
                x = np.log([q[0] for q in pts])
                y = np.log([q[1] for q in pts])
                out[path] = float(np.polyfit(x, y, 1)[0])
        return out

    def fill_slope(self):
        pts = [
            (r.n, r.factor_nonzeros)
            for r in self.rows
            if r.path == "sparse" and np.isfinite(r.factor_nonzeros)
        ]
        if len(pts) < 2:
            return float("nan")
        x = np.log([q[0] for q in pts])
        y = np.log([q[1] for q in pts])
        return float(np.polyfit(x, y, 1)[0])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,p,path,median_seconds,factor_nonzeros\n")
            for r in self.rows:
                fh.write(
                    f"{r.n},{r.p},{r.path},{r.median_seconds:.17g},"
                    f"{r.factor_nonzeros:.17g}\n"
                )


def _coupled_2d_precision(n, p, kappa=0.5):
    m = int(round(np.sqrt(n)))
    if m * m != n:
        raise ValueError(f"benchmark sizes must be perfect squares, got {n}")
    g = grids.GridSpec(d=2, sizes=(m, m), spacing=1.0, periodic=False)
    comps = [assemble_component_precision(kappa, 1.0, g) for _ in range(p)]
    T = np.eye(p)
    for i in range(1, p):
        T[i, :i] = 0.5
    return couple_components(comps, T, g), g


def _dense_chain_precision(n, kappa=0.5):
    g = grids.GridSpec(d=1, sizes=(n,), spacing=1.0, periodic=False)
    return assemble_component_precision(kappa, 1.0, g).to_scipy().toarray()


def _median_time(fn, repetitions):
    fn()  # warm-up
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


DENSE_SIZE_CAP = 4096


def bench_scaling(sizes, p, repetitions=5, dense_sizes=None):
    """Wall-clock scaling of sparse vs dense factorization.

    ``sizes`` is the ascending per-component 2D ladder (perfect squares)
    for the sparse path.  ``dense_sizes`` defaults to p*n for each ladder
    entry; dense entries above DENSE_SIZE_CAP are emitted with NaN time
    rather than measured.  Timings are medians over ``repetitions`` runs
    with BLAS pinned to one thread.
    """
    sizes = [int(n) for n in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    rows = []
    for n in sizes:
        model, g = _coupled_2d_precision(n, p)
        perm = nested_dissection_order(g, p)
        Qs = model.precision

        def run():
            return sparse_factorize(Qs, perm)

        with threadpool_limits(limits=1):
            med = _median_time(run, repetitions)
        fill = run().nnz
        rows.append(BenchRow(n=n, p=p, path="sparse",
                             median_seconds=med, factor_nonzeros=fill))

    if dense_sizes is None:
        dense_sizes = [p * n for n in sizes]
    for pn in dense_sizes:
        if pn > DENSE_SIZE_CAP:
            rows.append(BenchRow(n=pn, p=p, path="dense",
                                 median_seconds=float("nan"),
                                 factor_nonzeros=pn * (pn + 1) / 2.0))
            continue
        Qd = _dense_chain_precision(pn)

        def run_dense():
            return np.linalg.cholesky(Qd)

        with threadpool_limits(limits=1):
            med = _median_time(run_dense, repetitions)
        rows.append(BenchRow(n=pn, p=p, path="dense",
                             median_seconds=med,
                             factor_nonzeros=pn * (pn + 1) / 2.0))
    return BenchResult(rows=rows)
