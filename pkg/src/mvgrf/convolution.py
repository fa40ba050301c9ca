"""Kernel-convolution construction driven by independently scattered noise.

Fields are built as x_i(s) = sum_j sum_u K_ij(s, u) W_j(u) with noise sites
coinciding with the field grid and increments standardized to mean zero and
variance equal to the cell volume.  The implied second-order structure

    C(h) = sum_u K(0, u) K(h, u)^T * cellvol

is family-independent; non-Gaussian families (centered gamma, Laplace)
change higher moments only.  Kernels need not be stationary; nonstationary
covariances are queried pairwise.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from . import grid as grids
from .simulate import Realization

NOISE_FAMILIES = ("gaussian", "centered-gamma", "laplace")

#: kernel matrices are dense (n_sites^2 blocks); guard desk-scale use
MAX_DISCRETIZED_SITES = 4096


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Matrix-valued convolution kernel K(s, u).

    ``evaluate(s, u)`` takes two length-d coordinate vectors and returns a
    (p, p) array.  ``support_radius`` truncates the quadrature sum; wrapped
    (torus) displacements are used on periodic grids.  Instances compare by
    identity so discretizations can be cached.
    """

    p: int
    d: int
    evaluate: object = field(repr=False)
    stationary: bool
    support_radius: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 1 or self.d not in (1, 2):
            raise ValueError("need p >= 1 and d in (1, 2)")
        if not self.support_radius > 0:
            raise ValueError("support radius must be positive")


@dataclass(frozen=True)
class NoiseMeasureSpec:
    """Independently scattered noise family, standardized per grid cell.

    Increments have mean 0 and variance equal to the cell volume for every
    family, so the second-order structure of convolution fields does not
    depend on the family.  ``shape`` applies to the centered-gamma family;
    explicit ``scale`` values are validated against the standardization.
    """

    family: str
    shape: float | None = None
    scale: float | None = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "centered-gamma":
            if self.shape is None or not self.shape > 0:
                raise ValueError("centered-gamma requires shape > 0")
        elif self.shape is not None:
            raise ValueError(f"{self.family} takes no shape parameter")

    def resolved_scale(self, cell_volume):
        """Scale implied by variance = cell volume; validates explicit ones."""
        if self.family == "gaussian":
            implied = np.sqrt(cell_volume)
        elif self.family == "centered-gamma":
            implied = np.sqrt(cell_volume / self.shape)
        else:
            implied = np.sqrt(cell_volume / 2.0)
        if self.scale is not None:
            var = {
                "gaussian": self.scale**2,
                "centered-gamma": self.shape * self.scale**2 if self.shape else 0.0,
                "laplace": 2.0 * self.scale**2,
            }[self.family]
            if abs(var - cell_volume) > 1e-12 * max(cell_volume, 1.0):
                raise ValueError(
                    f"scale {self.scale} gives variance {var}, expected cell volume "
                    f"{cell_volume}"
                )
            return self.scale
        return implied


def sample_noise_increments(spec, grid, seed, replicate, p=1):
    """Noise increments, shape (p, n_sites), deterministic in (seed, replicate)."""
    v = grid.cell_volume
    scale = spec.resolved_scale(v)
    n = grid.n_sites
    out = np.empty((p, n))
    for comp in range(p):
        rng = _rng.stream(seed, replicate, comp, _rng.CONVOLUTION_NOISE)
        if spec.family == "gaussian":
            out[comp] = rng.normal(0.0, scale, size=n)
        elif spec.family == "centered-gamma":
            out[comp] = rng.gamma(spec.shape, scale, size=n) - spec.shape * scale
        else:
            out[comp] = rng.laplace(0.0, scale, size=n)
    return out


def _wrapped_displacements(grid):
    """Pairwise displacement u - s wrapped to the torus, shape (n, n, d)."""
    coords = grid.site_coordinates()
    disp = coords[None, :, :] - coords[:, None, :]
    for ax, L in enumerate(grid.lengths):
        d = disp[..., ax]
        disp[..., ax] = (d + L / 2.0) % L - L / 2.0
    return disp


class DiscretizedKernel:
    """Kernel evaluated on all grid site pairs, with truncation accounting."""

    def __init__(self, kernel, grid):
        if kernel.d != grid.d:
            raise ValueError("kernel and grid dimensions differ")
        if grid.n_sites > MAX_DISCRETIZED_SITES:
            raise ValueError(
                f"convolution grids are limited to {MAX_DISCRETIZED_SITES} sites"
            )
        coords = grid.site_coordinates()
        disp = _wrapped_displacements(grid)
        dist = np.sqrt(np.sum(disp**2, axis=-1))
        n = grid.n_sites
        K = np.zeros((n, n, kernel.p, kernel.p))
        for s in range(n):
            for u in range(n):
                K[s, u] = kernel.evaluate(coords[s], coords[u])
        if not np.all(np.isfinite(K)):
            raise ValueError("kernel evaluations must be finite")
        mask = dist <= kernel.support_radius
        tail = K * (~mask)[..., None, None]
        self.tail_mass = float(np.sum(tail**2) * grid.cell_volume)
        self.values = K * mask[..., None, None]
        self.kernel = kernel
        self.grid = grid
        # L2 proxy: sum_u |K(s, u)|_F^2 * cellvol must be finite (it is, once
        # entries are finite on a finite grid); stored for provenance
        self.l2_norms = np.sum(self.values**2, axis=(1, 2, 3)) * grid.cell_volume


_DISC_CACHE = {}


def discretize_kernel(kernel, grid):
    key = (id(kernel), grid)
    disc = _DISC_CACHE.get(key)
    if disc is None or disc.kernel is not kernel:
        disc = DiscretizedKernel(kernel, grid)
        _DISC_CACHE[key] = disc
    return disc


def sample_convolution_field(kernel, noise, grid, seed, replicate=0):
    """One realization of the convolution field; tag "convolution"."""
    if kernel.support_radius < grid.spacing:
        raise ValueError(
            f"support radius {kernel.support_radius} is below the cell spacing "
            f"{grid.spacing}; the kernel degenerates to nothing"
        )
    disc = discretize_kernel(kernel, grid)
    w = sample_noise_increments(noise, grid, seed, replicate, p=kernel.p)
    x = np.einsum("suij,ju->is", disc.values, w)
    return Realization(
        grid=grid,
        values=np.ascontiguousarray(x.reshape((kernel.p,) + grid.sizes)),
        seed=seed,
        replicate=replicate,
        construction="convolution",
        provenance={
            "kernel": kernel.name,
            "kernel_params": dict(kernel.params),
            "noise_family": noise.family,
            "truncated_tail_mass": disc.tail_mass,
        },
    )


def implied_cross_cov(kernel, grid, lags=None):
    """Exact discrete second moment of the convolution sampler (stationary).

    ``lags`` defaults to every torus lag.  For nonstationary kernels use
    ``implied_cov_pair``.
    """
    from .covariance import CrossCovariance, _wrap_lags

    if not kernel.stationary:
        raise ValueError(
            "kernel is nonstationary; implied_cross_cov is undefined, "
            "use implied_cov_pair for site pairs"
        )
    disc = discretize_kernel(kernel, grid)
    if lags is None:
        lag_arr = _wrap_lags(grid.sizes)
    else:
        lag_arr = np.array([np.atleast_1d(l) for l in lags], dtype=int)
    values = np.empty((len(lag_arr), kernel.p, kernel.p))
    for k, lag in enumerate(lag_arr):
        idx = _site_index(lag, grid)
        values[k] = (
            np.einsum("uil,ujl->ij", disc.values[0], disc.values[idx]) * grid.cell_volume
        )
    return CrossCovariance(
        lags=lag_arr,
        values=values,
        kind="analytic",
        meta={"grid": grid, "construction": "convolution", "kernel": kernel.name},
    )


def _site_index(offset, grid):
    flat = 0
    for v, m in zip(np.atleast_1d(offset), grid.sizes):
        flat = flat * m + (int(v) % m)
    return flat


def implied_cov_pair(kernel, grid, s, u):
    """Covariance matrix between field values at site indices s and u."""
    disc = discretize_kernel(kernel, grid)
    si = _site_index(s, grid)
    ui = _site_index(u, grid)
    return np.einsum("uil,ujl->ij", disc.values[si], disc.values[ui]) * grid.cell_volume


def _wrap_coord_displacement(s, u, grid):
    disp = np.asarray(u, dtype=float) - np.asarray(s, dtype=float)
    for ax, L in enumerate(grid.lengths):
        disp[ax] = (disp[ax] + L / 2.0) % L - L / 2.0
    return disp


def build_kernel(name, grid, p=1, **params):
    """Kernel catalog: delta, gaussian-bump, triangular, varying-width-bump.

    All catalog kernels are defined through torus-wrapped displacements so
    stationarity is exact on periodic grids.  ``mixing`` (a p x p array)
    post-multiplies scalar profiles to produce multivariate kernels.
    """
    mixing = np.asarray(params.pop("mixing", np.eye(p)), dtype=float).reshape(p, p)
    amplitude = float(params.pop("amplitude", 1.0))

    if name == "delta":
        half_cell = grid.spacing / 2.0

        def evaluate(s, u, _m=mixing, _a=amplitude):
            d = _wrap_coord_displacement(s, u, grid)
            return _a * _m if np.linalg.norm(d) < half_cell else np.zeros_like(_m)

        spec = KernelSpec(
            p=p, d=grid.d, evaluate=evaluate, stationary=True,
            support_radius=grid.spacing, name=name,
            params={"amplitude": amplitude},
        )
    elif name == "gaussian-bump":
        width = float(params.pop("width"))

        def evaluate(s, u, _m=mixing, _a=amplitude, _w=width):
            d = _wrap_coord_displacement(s, u, grid)
            return _a * np.exp(-0.5 * float(d @ d) / _w**2) * _m

        spec = KernelSpec(
            p=p, d=grid.d, evaluate=evaluate, stationary=True,
            support_radius=float(params.pop("support_radius", 4.0 * width)),
            name=name, params={"amplitude": amplitude, "width": width},
        )
    elif name == "triangular":
        width = float(params.pop("width"))

        def evaluate(s, u, _m=mixing, _a=amplitude, _w=width):
            d = _wrap_coord_displacement(s, u, grid)
            return _a * max(0.0, 1.0 - np.linalg.norm(d) / _w) * _m

        spec = KernelSpec(
            p=p, d=grid.d, evaluate=evaluate, stationary=True,
            support_radius=width, name=name,
            params={"amplitude": amplitude, "width": width},
        )
    elif name == "varying-width-bump":
        w_low = float(params.pop("width_low"))
        w_high = float(params.pop("width_high"))
        split = float(params.pop("split", grid.lengths[0] / 2.0))

        def evaluate(s, u, _m=mixing, _a=amplitude):
            w = w_low if s[0] < split else w_high
            d = _wrap_coord_displacement(s, u, grid)
            return _a * np.exp(-0.5 * float(d @ d) / w**2) * _m

        spec = KernelSpec(
            p=p, d=grid.d, evaluate=evaluate, stationary=False,
            support_radius=float(params.pop("support_radius", 4.0 * max(w_low, w_high))),
            name=name,
            params={"amplitude": amplitude, "width_low": w_low,
                    "width_high": w_high, "split": split},
        )
    else:
        raise ValueError(f"unknown kernel {name!r}")
    if params:
        raise ValueError(f"unused kernel parameters: {sorted(params)}")
    return spec
