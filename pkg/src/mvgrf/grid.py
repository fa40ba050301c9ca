"""Regular grids and their discrete frequency duals."""

from dataclasses import dataclass, field

import numpy as np

#: labels for frequency-grid indices
SELF_CONJUGATE = 0
REPRESENTATIVE = 1
REFLECTED = 2


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice in 1 or 2 dimensions.

    Periodic grids (the torus used by the spectral and convolution
    samplers) must have power-of-two sizes of at least 8 per axis so the
    FFT index set has the usual Nyquist structure.  Non-periodic grids
    (Markov construction) only need at least 2 points per axis.
    """

    d: int
    sizes: tuple
    spacing: float
    periodic: bool = True

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        object.__setattr__(self, "sizes", tuple(int(m) for m in self.sizes))
        if len(self.sizes) != self.d:
            raise ValueError(f"expected {self.d} sizes, got {self.sizes}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.periodic:
            for m in self.sizes:
                if m < 8 or not _is_power_of_two(m):
                    raise ValueError(
                        f"periodic grid sizes must be powers of two >= 8, got {m}"
                    )
        else:
            for m in self.sizes:
                if m < 2:
                    raise ValueError(f"grid sizes must be >= 2, got {m}")

    @property
    def n_sites(self):
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self):
        return float(self.spacing) ** self.d

    @property
    def lengths(self):
        """Domain extent per axis."""
        return tuple(m * self.spacing for m in self.sizes)

    def site_coordinates(self):
        """Coordinates of all sites, raster (C) order, shape (n_sites, d)."""
        axes = [np.arange(m) * self.spacing for m in self.sizes]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=-1)


@dataclass(frozen=True)
class FrequencyGrid:
    """Discrete dual of a periodic GridSpec.

    ``omega`` holds the angular frequency vector at every FFT index,
    ``label`` classifies each index as self-conjugate, half-space
    representative, or reflected, and ``reflection`` maps each flat index
    to the flat index of its negated frequency.  Representatives,
    reflections and self-conjugate indices partition the grid.
    """

    grid: GridSpec
    omega: np.ndarray = field(repr=False)
    label: np.ndarray = field(repr=False)
    reflection: np.ndarray = field(repr=False)

    @property
    def cell_measure(self):
        """Frequency-space cell volume, prod over axes of 2*pi/(m*h)."""
        h = self.grid.spacing
        out = 1.0
        for m in self.grid.sizes:
            out *= 2.0 * np.pi / (m * h)
        return out

    def flat_indices(self, label):
        return np.nonzero(self.label.ravel() == label)[0]


def build_frequency_grid(grid):
    """Classify the FFT frequencies of a periodic grid.

    Frequencies are ``omega_k = 2 pi k / (m h)`` with k in the standard FFT
    index set.  An index is self-conjugate when ``-k == k (mod m)`` on every
    axis (the k=0 and Nyquist points); of each remaining (k, -k) pair the
    smaller flat index is the half-space representative.
    """
    if not grid.periodic:
        raise ValueError("frequency grid requires a periodic GridSpec")
    axes = [2.0 * np.pi * np.fft.fftfreq(m, d=grid.spacing) for m in grid.sizes]
    mesh = np.meshgrid(*axes, indexing="ij")
    omega = np.stack(mesh, axis=-1)

    index_axes = [np.arange(m) for m in grid.sizes]
    idx_mesh = np.meshgrid(*index_axes, indexing="ij")
    neg_flat = np.zeros(grid.sizes, dtype=np.int64)
    stride = 1
    # flat index of -k, built axis by axis (C order strides)
    strides = []
    for m in reversed(grid.sizes):
        strides.append(stride)
        stride *= m
    strides = list(reversed(strides))
    for ax, m in enumerate(grid.sizes):
        neg_flat += ((-idx_mesh[ax]) % m) * strides[ax]

    flat = np.arange(grid.n_sites).reshape(grid.sizes)
    label = np.where(
        neg_flat == flat,
        SELF_CONJUGATE,
        np.where(flat < neg_flat, REPRESENTATIVE, REFLECTED),
    ).astype(np.int8)
    return FrequencyGrid(
        grid=grid,
        omega=omega,
        label=label,
        reflection=neg_flat.ravel(),
    )


def _probe_candidates_2d():
    # Fixed priority list: axis-aligned in both signs (x densely, including
    # the +-5 lags probed by the phase-shift diagnostics), a thinner set on
    # the y axis, then diagonals.
    xs = [1, 2, 3, 4, 5, 8, 16]
    ys = [1, 5, 8]
    cands = [(0, 0)]
    for a in xs:
        cands += [(a, 0), (-a, 0)]
    for a in ys:
        cands += [(0, a), (0, -a)]
    cands += [(2, 2), (-2, -2), (2, -2), (-2, 2), (5, 5), (-5, -5)]
    return cands


def probe_lags(grid, count=25):
    """Deterministic probe-lag set for covariance comparisons.

    Returns up to ``count`` integer lag vectors (axis-aligned and diagonal),
    all within m/4 of the origin per axis, in a fixed documented order.  The
    64x64 acceptance grid yields exactly 25 lags.
    """
    caps = [m // 4 for m in grid.sizes]
    if grid.d == 1:
        cands = [(0,)]
        k = 1
        while len(cands) < count and k <= caps[0]:
            cands += [(k,), (-k,)]
            k += 1
        return [lag for lag in cands[:count]]
    out = []
    for lag in _probe_candidates_2d():
        if all(abs(l) <= c for l, c in zip(lag, caps)) and lag not in out:
            out.append(lag)
        if len(out) == count:
            break
    return out
