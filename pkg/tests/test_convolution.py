import numpy as np
import pytest

from mvgrf import GridSpec
from mvgrf.convolution import (
    KernelSpec,
    NoiseMeasureSpec,
    build_kernel,
    implied_cov_pair,
    implied_cross_cov,
    sample_convolution_field,
    sample_noise_increments,
)


@pytest.fixture
def grid8():
    return GridSpec(d=1, sizes=(8,), spacing=1.0)


def _skewness(x):
    x = x - x.mean()
    return np.mean(x**3) / np.mean(x**2) ** 1.5


class TestNoise:
    def test_gaussian_moments(self, grid8):
        draws = np.concatenate(
            [
                sample_noise_increments(NoiseMeasureSpec("gaussian"), grid8, 1, r)[0]
                for r in range(12_500)
            ]
        )
        assert draws.size == 100_000
        assert draws.mean() == pytest.approx(0.0, abs=0.01)
        assert draws.var() == pytest.approx(grid8.cell_volume, rel=0.02)

    def test_centered_gamma_moments_and_skewness(self, grid8):
        spec = NoiseMeasureSpec("centered-gamma", shape=1.0)
        draws = np.concatenate(
            [sample_noise_increments(spec, grid8, 2, r)[0] for r in range(12_500)]
        )
        assert draws.mean() == pytest.approx(0.0, abs=0.01)
        assert draws.var() == pytest.approx(grid8.cell_volume, rel=0.02)
        assert _skewness(draws) > 0.5

    def test_laplace_variance(self, grid8):
        draws = np.concatenate(
            [
                sample_noise_increments(NoiseMeasureSpec("laplace"), grid8, 3, r)[0]
                for r in range(5000)
            ]
        )
        assert draws.var() == pytest.approx(grid8.cell_volume, rel=0.05)

    def test_families_differ_same_seed(self, grid8):
        a = sample_noise_increments(NoiseMeasureSpec("gaussian"), grid8, 5, 0)
        b = sample_noise_increments(NoiseMeasureSpec("laplace"), grid8, 5, 0)
        assert not np.array_equal(a, b)
        # the variance target is the same cell volume for both
        assert NoiseMeasureSpec("gaussian").resolved_scale(1.0) ** 2 == pytest.approx(1.0)
        assert 2 * NoiseMeasureSpec("laplace").resolved_scale(1.0) ** 2 == pytest.approx(1.0)

    def test_bad_parameters(self):
        with pytest.raises(ValueError, match="shape"):
            NoiseMeasureSpec("centered-gamma", shape=-1.0)
        with pytest.raises(ValueError, match="family"):
            NoiseMeasureSpec("cauchy")
        with pytest.raises(ValueError, match="variance"):
            NoiseMeasureSpec("gaussian", scale=2.0).resolved_scale(1.0)

    def test_determinism(self, grid8):
        spec = NoiseMeasureSpec("centered-gamma", shape=2.0)
        a = sample_noise_increments(spec, grid8, 11, 4, p=2)
        b = sample_noise_increments(spec, grid8, 11, 4, p=2)
        assert np.array_equal(a, b)


class TestSampleConvolutionField:
    def test_delta_kernel_reproduces_noise(self, grid8):
        amp = 1.0 / np.sqrt(grid8.cell_volume)
        kernel = build_kernel("delta", grid8, amplitude=amp)
        noise = NoiseMeasureSpec("gaussian")
        r = sample_convolution_field(kernel, noise, grid8, seed=7, replicate=2)
        w = sample_noise_increments(noise, grid8, seed=7, replicate=2)
        assert np.allclose(r.values[0], amp * w[0], atol=0)
        assert r.construction == "convolution"

    def test_degenerate_support_radius(self, grid8):
        kernel = KernelSpec(
            p=1, d=1, evaluate=lambda s, u: np.ones((1, 1)), stationary=True,
            support_radius=0.25,
        )
        with pytest.raises(ValueError, match="support radius"):
            sample_convolution_field(kernel, NoiseMeasureSpec("gaussian"), grid8, 1)

    def test_gaussian_bump_covariance_matches_implied(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=1.0)
        noise = NoiseMeasureSpec("gaussian")
        count = 1000
        fields = np.array(
            [
                sample_convolution_field(kernel, noise, grid8, 99, r).values[0]
                for r in range(count)
            ]
        )
        implied = implied_cross_cov(kernel, grid8)
        for lag in range(-3, 5):
            per_rep = np.mean(fields * np.roll(fields, -lag, axis=1), axis=1)
            est = per_rep.mean()
            se = per_rep.std(ddof=1) / np.sqrt(count)
            assert abs(est - implied.at(lag)[0, 0]) < 3.0 * se

    def test_gamma_noise_same_covariance_positive_skew(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=1.0)
        noise = NoiseMeasureSpec("centered-gamma", shape=1.0)
        count = 2000
        fields = np.array(
            [
                sample_convolution_field(kernel, noise, grid8, 123, r).values[0]
                for r in range(count)
            ]
        )
        implied = implied_cross_cov(kernel, grid8)
        per_rep = np.mean(fields**2, axis=1)
        se = per_rep.std(ddof=1) / np.sqrt(count)
        assert abs(per_rep.mean() - implied.at(0)[0, 0]) < 4.0 * se
        assert _skewness(fields[:, 3]) > 0.2

    def test_tail_mass_reported(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=1.0, support_radius=2.0)
        r = sample_convolution_field(kernel, NoiseMeasureSpec("gaussian"), grid8, 1)
        assert r.provenance["truncated_tail_mass"] > 0.0


class TestImpliedCrossCov:
    def test_delta_kernel_diagonal(self, grid8):
        kernel = build_kernel("delta", grid8)
        C = implied_cross_cov(kernel, grid8)
        assert C.at(0)[0, 0] == pytest.approx(grid8.cell_volume)
        for k, lag in enumerate(C.lags):
            if lag[0] != 0:
                assert C.values[k, 0, 0] == 0.0

    def test_bump_even_and_peaked_at_zero(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=0.8)
        C = implied_cross_cov(kernel, grid8)
        peak = C.at(0)[0, 0]
        for lag in range(1, 4):
            assert C.at(lag)[0, 0] == pytest.approx(C.at(-lag)[0, 0], rel=1e-12)
            assert C.at(lag)[0, 0] < peak

    def test_brute_force_double_sum(self, grid8):
        # oracle: explicit double loop over all site pairs
        kernel = build_kernel("gaussian-bump", grid8, width=1.2)
        C = implied_cross_cov(kernel, grid8)
        coords = grid8.site_coordinates()
        v = grid8.cell_volume
        for s in range(8):
            for t in range(8):
                expected = sum(
                    kernel.evaluate(coords[s], coords[u])
                    @ kernel.evaluate(coords[t], coords[u]).T
                    for u in range(8)
                ) * v
                lag = (t - s) % 8
                lag = lag - 8 if lag > 4 else lag
                assert C.at(lag)[0, 0] == pytest.approx(expected[0, 0], abs=1e-12)

    def test_nonstationary_rejected(self, grid8):
        kernel = build_kernel("varying-width-bump", grid8, width_low=0.5, width_high=1.5)
        with pytest.raises(ValueError, match="implied_cov_pair"):
            implied_cross_cov(kernel, grid8)

    def test_linearity_in_kernel_scale(self, grid8):
        k1 = build_kernel("triangular", grid8, width=2.0, amplitude=1.0)
        k3 = build_kernel("triangular", grid8, width=2.0, amplitude=3.0)
        C1 = implied_cross_cov(k1, grid8)
        C3 = implied_cross_cov(k3, grid8)
        assert np.allclose(C3.values, 9.0 * C1.values, rtol=1e-12)

    def test_refinement_convergence(self):
        # halving the spacing changes C(0) by under 2 percent for the bump
        vals = []
        for m, h in [(32, 0.25), (64, 0.125)]:
            g = GridSpec(d=1, sizes=(m,), spacing=h)
            kernel = build_kernel("gaussian-bump", g, width=0.5)
            vals.append(implied_cross_cov(kernel, g, lags=[(0,)]).at(0)[0, 0])
        assert abs(vals[1] - vals[0]) / vals[0] < 0.02


class TestImpliedCovPair:
    def test_stationary_consistency(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=1.0)
        C = implied_cross_cov(kernel, grid8)
        for s, h in [(0, 2), (3, 1), (5, -2)]:
            pair = implied_cov_pair(kernel, grid8, s, s + h)
            assert pair[0, 0] == pytest.approx(C.at(h)[0, 0], abs=1e-12)

    def test_varying_width_variance_ordering(self):
        g = GridSpec(d=1, sizes=(16,), spacing=1.0)
        kernel = build_kernel("varying-width-bump", g, width_low=0.6, width_high=1.8)
        narrow_site = 3   # left half, small width
        wide_site = 12    # right half, large width
        v_narrow = implied_cov_pair(kernel, g, narrow_site, narrow_site)[0, 0]
        v_wide = implied_cov_pair(kernel, g, wide_site, wide_site)[0, 0]
        assert v_wide > v_narrow

    def test_zero_kernel(self, grid8):
        kernel = KernelSpec(
            p=2, d=1, evaluate=lambda s, u: np.zeros((2, 2)), stationary=True,
            support_radius=2.0,
        )
        assert np.all(implied_cov_pair(kernel, grid8, 0, 3) == 0.0)


class TestSecondOrderUniversality:
    def test_families_share_covariance_but_not_skewness(self, grid8):
        kernel = build_kernel("gaussian-bump", grid8, width=1.0)
        implied = implied_cross_cov(kernel, grid8)
        count = 1500
        skews = {}
        for family, spec in [
            ("gaussian", NoiseMeasureSpec("gaussian")),
            ("centered-gamma", NoiseMeasureSpec("centered-gamma", shape=1.0)),
            ("laplace", NoiseMeasureSpec("laplace")),
        ]:
            fields = np.array(
                [
                    sample_convolution_field(kernel, spec, grid8, 55, r).values[0]
                    for r in range(count)
                ]
            )
            per_rep = np.mean(fields**2, axis=1)
            se = per_rep.std(ddof=1) / np.sqrt(count)
            assert abs(per_rep.mean() - implied.at(0)[0, 0]) < 4.0 * se
            skews[family] = _skewness(fields[:, 0])
        assert abs(skews["gaussian"]) < 0.15
        assert skews["centered-gamma"] > 0.2
