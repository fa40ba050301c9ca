import numpy as np
import pytest

from mvgrf import GridSpec, MaternParams, SpectrumModel


@pytest.fixture
def unit_matern():
    return MaternParams(variance=1.0, kappa=1.0, smoothness=1.0)


@pytest.fixture
def lagged_pair_1d():
    """Bivariate 1-D model with a 5-cell phase lag on a 64-point torus."""
    comp = MaternParams(variance=1.0, kappa=0.5, smoothness=1.0)
    model = SpectrumModel.bivariate(comp, comp, rho=0.5, delta=5.0, d=1)
    grid = GridSpec(d=1, sizes=(64,), spacing=1.0)
    return model, grid


@pytest.fixture(scope="session")
def acceptance_model_2d():
    """The 2-D bivariate model used by the acceptance harness."""
    comp = MaternParams(variance=1.0, kappa=0.5, smoothness=1.0)
    model = SpectrumModel.bivariate(comp, comp, rho=0.5, delta=(5.0, 0.0), d=2)
    grid = GridSpec(d=2, sizes=(64, 64), spacing=1.0)
    return model, grid


def random_spectrum_model(rng, p=None, d=None):
    """Random valid SpectrumModel (additive lags so p >= 3 stays PSD)."""
    d = d or int(rng.integers(1, 3))
    p = p or int(rng.integers(1, 4))
    comps = [
        MaternParams(
            variance=float(rng.uniform(0.3, 3.0)),
            kappa=float(rng.uniform(0.2, 2.0)),
            smoothness=float(rng.uniform(0.5, 2.5)),
        )
        for _ in range(p)
    ]
    # correlation matrix from random factors, rescaled to unit diagonal
    A = rng.standard_normal((p, p + 2))
    R = A @ A.T
    dd = np.sqrt(np.diag(R))
    R = R / np.outer(dd, dd)
    np.fill_diagonal(R, 1.0)
    R = 0.5 * (R + R.T)
    # additive lags from per-component shifts
    shifts = rng.uniform(-3.0, 3.0, size=(p, d))
    D = shifts[None, :, :] - shifts[:, None, :]
    return SpectrumModel(d=d, components=tuple(comps), colocation=R, phase_lags=D)
