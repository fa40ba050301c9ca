import numpy as np
import pytest

from mvgrf import (
    GridSpec,
    MaternParams,
    SpectrumModel,
    analytic_cross_cov,
    asymmetry_index,
    empirical_cross_cov,
    sample_batch,
)
from mvgrf.covariance import CrossCovariance, analytic_cross_cov_from_spectrum
from mvgrf.errors import NumericalError
from mvgrf.grid import probe_lags
from mvgrf.simulate import Realization, build_frequency_grid_cached
from mvgrf.spectra import cross_spectral_field, discretized_spectrum


def _quadrature_cross_cov_1d(model, lags_h):
    """Independent continuum oracle: C_12(h) = int S_12(w) e^{iwh} dw by trapezoid."""
    w = np.linspace(-60.0, 60.0, 600_001)
    S12 = cross_spectral_field(model, w[:, None])[:, 0, 1]
    out = []
    for h in lags_h:
        out.append(np.trapezoid((S12 * np.exp(1j * w * h)).real, w))
    return np.array(out)


class TestAnalytic:
    def test_discrete_white_model(self):
        g = GridSpec(d=1, sizes=(32,), spacing=1.0)
        variance = 2.5
        level = variance / (2.0 * np.pi / g.spacing)  # constant band density
        S = np.full(g.sizes + (1, 1), level)
        C = analytic_cross_cov_from_spectrum(S, g)
        assert C.at(0)[0, 0] == pytest.approx(variance, rel=1e-12)
        for k, lag in enumerate(C.lags):
            if lag[0] != 0:
                assert abs(C.values[k, 0, 0]) < 1e-12

    def test_proportional_components(self):
        comp = MaternParams(variance=1.0, kappa=0.7, smoothness=1.2)
        model = SpectrumModel.bivariate(comp, comp, rho=0.5, delta=0.0)
        g = GridSpec(d=1, sizes=(64,), spacing=1.0)
        C = analytic_cross_cov(model, g)
        assert np.allclose(C.values[:, 0, 1], 0.5 * C.values[:, 0, 0], atol=1e-14)
        assert np.allclose(C.values[:, 0, 1], C.values[:, 1, 0], atol=1e-14)

    def test_lag_peak_matches_quadrature_oracle(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        C = analytic_cross_cov(model, g)
        lag_vals = {int(l[0]): C.values[k, 0, 1] for k, l in enumerate(C.lags)}
        lags_sorted = sorted(lag_vals)
        discrete_argmax = max(lags_sorted, key=lambda h: lag_vals[h])
        oracle = _quadrature_cross_cov_1d(model, lags_sorted)
        oracle_argmax = lags_sorted[int(np.argmax(oracle))]
        assert discrete_argmax == 5
        assert oracle_argmax == 5
        # periodized values track the continuum oracle closely away from wrap
        for h in range(-8, 9):
            assert lag_vals[h] == pytest.approx(oracle[lags_sorted.index(h)], abs=0.02)

    def test_exchange_symmetry_near_exact(self, acceptance_model_2d):
        model, g = acceptance_model_2d
        C = analytic_cross_cov(model, g)
        for lag in [(3, 0), (5, 0), (2, 2), (0, 7)]:
            neg = tuple(-v for v in lag)
            assert C.at(lag)[0, 1] == pytest.approx(C.at(neg)[1, 0], abs=1e-10)
        assert C.at((0, 0))[0, 0] > 0 and C.at((0, 0))[1, 1] > 0

    def test_every_grid_spectrum_matrix_psd(self, acceptance_model_2d):
        # block-circulant PSD reduces to per-frequency PSD of S(w_k)
        model, g = acceptance_model_2d
        fg = build_frequency_grid_cached(g)
        S = discretized_spectrum(model, fg).reshape(-1, 2, 2)
        Sh = 0.5 * (S + np.conj(np.swapaxes(S, -1, -2)))
        eig = np.linalg.eigvalsh(Sh)
        assert eig.min() >= -1e-8


def _zero_field(grid, replicate):
    return Realization(
        grid=grid, values=np.zeros((1,) + grid.sizes), seed=0,
        replicate=replicate, construction="spectral",
    )


class TestEmpirical:
    def test_zero_fields_give_zero(self):
        g = GridSpec(d=1, sizes=(16,), spacing=1.0)
        C = empirical_cross_cov([_zero_field(g, 0), _zero_field(g, 1)], max_lag=4)
        assert np.all(C.values == 0.0)

    def test_requires_two_replicates(self):
        g = GridSpec(d=1, sizes=(16,), spacing=1.0)
        with pytest.raises(ValueError, match="2 replicates"):
            empirical_cross_cov([_zero_field(g, 0)], max_lag=4)

    def test_mixed_grids_rejected(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        other = GridSpec(d=1, sizes=(32,), spacing=1.0)
        a = sample_batch(model, g, seed=4, count=1)[0]
        b = sample_batch(model, other, seed=4, count=2)[1]
        with pytest.raises(ValueError, match="mix"):
            empirical_cross_cov([a, b], max_lag=4)

    def test_max_lag_validation(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        reps = sample_batch(model, g, seed=4, count=2)
        with pytest.raises(ValueError, match="max_lag"):
            empirical_cross_cov(reps, max_lag=33)

    def test_exchange_symmetry_bit_exact(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        reps = sample_batch(model, g, seed=13, count=20)
        C = empirical_cross_cov(reps, max_lag=10)
        for k, lag in enumerate(C.lags):
            neg = tuple(-v for v in lag)
            if C.has_lag(neg):
                gap = np.abs(C.values[k] - C.at(neg).T).max()
                assert gap == 0.0

    def test_matches_analytic_within_mc_error(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        reps = sample_batch(model, g, seed=314, count=600)
        probes = probe_lags(g)
        Ce = empirical_cross_cov(reps, max_lag=16, probe_lags=probes)
        Ca = analytic_cross_cov(model, g)
        worst = 0.0
        for lag in probes:
            se = Ce.se_at(lag)
            gap = np.abs(Ce.at(lag) - Ca.at(lag))
            worst = max(worst, float((gap / se).max()))
        assert worst < 4.0  # 3 in the big acceptance run; headroom at 600 reps


class TestAsymmetryIndex:
    def test_zero_for_unlagged(self):
        comp = MaternParams(variance=1.0, kappa=0.5, smoothness=1.0)
        model = SpectrumModel.bivariate(comp, comp, rho=0.5, delta=0.0)
        g = GridSpec(d=1, sizes=(64,), spacing=1.0)
        C = analytic_cross_cov(model, g)
        assert asymmetry_index(C, 0, 1) <= 1e-10

    def test_large_for_lagged(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        C = analytic_cross_cov(model, g)
        assert asymmetry_index(C, 0, 1) > 0.5

    def test_empirical_close_to_analytic(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        Ca = analytic_cross_cov(model, g)
        reps = sample_batch(model, g, seed=2718, count=400)
        Ce = empirical_cross_cov(reps, max_lag=31)
        assert asymmetry_index(Ce, 0, 1) == pytest.approx(
            asymmetry_index(Ca, 0, 1), abs=0.1
        )

    def test_exchange_invariance(self, lagged_pair_1d):
        model, g = lagged_pair_1d
        C = analytic_cross_cov(model, g)
        assert asymmetry_index(C, 0, 1) == pytest.approx(asymmetry_index(C, 1, 0))

    def test_all_zero_raises(self):
        lags = np.array([[0], [1], [-1]])
        vals = np.zeros((3, 2, 2))
        C = CrossCovariance(lags=lags, values=vals, kind="analytic")
        with pytest.raises(NumericalError, match="undefined"):
            asymmetry_index(C, 0, 1)

    def test_needs_two_components(self):
        C = CrossCovariance(lags=np.array([[0]]), values=np.ones((1, 1, 1)), kind="analytic")
        with pytest.raises(ValueError):
            asymmetry_index(C, 0, 0)


class TestCsvExport:
    def test_roundtrippable_rows(self, tmp_path, lagged_pair_1d):
        model, g = lagged_pair_1d
        C = analytic_cross_cov(model, g)
        path = tmp_path / "cov.csv"
        C.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "lag_0,i,j,value,kind"
        assert len(lines) == 1 + len(C.lags) * 4
        lag0, i, j, value, kind = lines[1].split(",")
        k = 0
        assert float(value) == C.values[k, int(i), int(j)]
        assert kind == "analytic"