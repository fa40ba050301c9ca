import numpy as np
import pytest
import scipy.sparse as sp

from mvgrf import GridSpec
from mvgrf.errors import BoundaryError, NumericalError
from mvgrf.likelihood import (
    DENSE_MATERN,
    MARKOV,
    LikelihoodProblem,
    default_starts,
    dense_loglik,
    dense_loglik_grad,
    fd_gradient_check,
    gaussian_loglik_from_precision,
    matern_correlation,
    profile_surface,
    ridge_report,
    simulate_matern_observations,
    sparse_loglik,
)


def _matern_problem(n=64, sigma2=1.0, kappa=8.0, nu=1.0, seed=0, domain=1.0):
    sites = np.linspace(0.0, domain, n)
    y = simulate_matern_observations(sites, sigma2, kappa, nu, seed)
    return LikelihoodProblem(family=DENSE_MATERN, y=y, smoothness=nu, sites=sites)


def _markov_problem(sizes=(64,), seed=0):
    g = GridSpec(d=len(sizes), sizes=sizes, spacing=1.0, periodic=False)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(g.n_sites)
    return LikelihoodProblem(family=MARKOV, y=y, grid=g)


class TestMaternCorrelation:
    def test_unit_at_zero(self):
        assert matern_correlation(np.array([0.0]), 1.0)[0] == 1.0

    def test_monotone_decay(self):
        x = np.linspace(0.0, 10.0, 50)
        c = matern_correlation(x, 1.5)
        assert np.all(np.diff(c) < 0)
        assert c[-1] < 1e-3

    def test_exponential_special_case(self):
        # nu = 1/2 reduces to exp(-x)
        x = np.array([0.1, 0.5, 1.0, 3.0])
        assert np.allclose(matern_correlation(x, 0.5), np.exp(-x), rtol=1e-10)


class TestDenseLoglik:
    def test_zero_observations_drop_quadratic_term(self):
        sites = np.array([0.0, 10.0])
        prob = LikelihoodProblem(
            family=DENSE_MATERN, y=np.zeros(2), smoothness=1.0, sites=sites
        )
        theta = np.array([0.0, 0.0])
        C = prob._covariance(theta)
        expected = -0.5 * (2 * np.log(2 * np.pi) + np.linalg.slogdet(C)[1])
        assert dense_loglik(prob, theta) == pytest.approx(expected, rel=1e-12)

    def test_single_site_formula_content(self):
        # the N log 2pi constant: iid-like sites far apart, unit variance
        sites = np.array([0.0, 1e6])
        prob = LikelihoodProblem(
            family=DENSE_MATERN, y=np.zeros(2), smoothness=1.0, sites=sites
        )
        val = dense_loglik(prob, np.array([0.0, 0.0]))
        per_obs = val / 2.0
        assert per_obs == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-6)

    def test_needs_two_observations(self):
        with pytest.raises(ValueError, match="2 observations"):
            LikelihoodProblem(
                family=DENSE_MATERN, y=np.zeros(1), sites=np.array([0.0])
            )


class TestSparseLoglik:
    def test_identity_precision_value(self):
        Q = sp.identity(4, format="csc")
        assert gaussian_loglik_from_precision(Q, np.zeros(4)) == pytest.approx(
            -2.0 * np.log(2.0 * np.pi)
        )

    def test_two_paths_agree(self):
        rng = np.random.default_rng(2)
        for k in range(5):
            prob = _markov_problem(seed=k)
            theta = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-1.5, 0.5)])
            d = dense_loglik(prob, theta)
            s = sparse_loglik(prob, theta)
            assert abs(d - s) <= 1e-6 * abs(d)

    def test_two_paths_agree_2d(self):
        prob = _markov_problem(sizes=(8, 8), seed=5)
        theta = np.array([0.2, -0.3])
        d = dense_loglik(prob, theta)
        s = sparse_loglik(prob, theta)
        assert abs(d - s) <= 1e-6 * abs(d)

    def test_wrong_family_rejected(self):
        prob = _matern_problem()
        with pytest.raises(ValueError, match="markov"):
            sparse_loglik(prob, np.zeros(2))


class _QuadraticSurface:
    """Synthetic concave quadratic with known gradient."""

    def __init__(self):
        self.H = np.array([[2.0, 0.3], [0.3, 1.0]])
        self.b = np.array([0.4, -0.7])

    def loglik(self, theta):
        return -0.5 * float(theta @ self.H @ theta) + float(self.b @ theta)

    def loglik_grad(self, theta):
        return -self.H @ theta + self.b


class TestGradientCheck:
    def test_quadratic_surface_exact(self):
        err = fd_gradient_check(_QuadraticSurface(), np.array([0.3, -1.2]), step=1e-3)
        assert err < 1e-10

    def test_matern_gradient(self):
        prob = _matern_problem(n=64)
        err = fd_gradient_check(prob, np.array([0.1, np.log(8.0)]), step=1e-4)
        assert err < 1e-5

    def test_second_order_step_decay(self):
        prob = _matern_problem(n=48, seed=3)
        theta = np.array([0.2, np.log(6.0)])
        e2 = fd_gradient_check(prob, theta, step=1e-2)
        e3 = fd_gradient_check(prob, theta, step=1e-3)
        # central differences: error should fall by about step^2 = 100x
        assert e3 < e2 / 20.0

    def test_bad_steps(self):
        prob = _matern_problem(n=16)
        with pytest.raises(ValueError):
            fd_gradient_check(prob, np.zeros(2), step=0.0)
        with pytest.raises(NumericalError, match="underflow"):
            fd_gradient_check(prob, np.array([0.1, 1.0]), step=1e-300)

    def test_random_draws_stay_small(self):
        rng = np.random.default_rng(17)
        for k in range(8):
            prob = _matern_problem(n=40, kappa=float(rng.uniform(4, 16)), seed=100 + k)
            theta = np.array([rng.uniform(-0.5, 0.5), np.log(rng.uniform(3, 20))])
            assert fd_gradient_check(prob, theta, step=1e-4) < 1e-5


class TestProfileSurface:
    def test_maximum_near_optimizer(self):
        prob = _matern_problem(n=80, kappa=10.0, seed=7)
        rep = ridge_report(prob)
        ls = np.linspace(rep.theta_hat[0] - 0.5, rep.theta_hat[0] + 0.5, 11)
        lk = np.linspace(rep.theta_hat[1] - 0.5, rep.theta_hat[1] + 0.5, 11)
        surf = profile_surface(prob, ls, lk)
        best = surf.argmax()
        cell = (ls[1] - ls[0], lk[1] - lk[0])
        assert abs(best[0] - rep.theta_hat[0]) <= cell[0] + 1e-12
        assert abs(best[1] - rep.theta_hat[1]) <= cell[1] + 1e-12

    def test_flatter_along_microergodic_curve(self):
        prob = _matern_problem(n=120, kappa=15.0, seed=11)
        rep = ridge_report(prob)
        nu = prob.smoothness
        t = np.array([-2.0 * nu, 1.0])
        t = t / np.linalg.norm(t)
        orth = np.array([-t[1], t[0]])
        center = rep.theta_hat
        dist = 0.6
        along = [
            dense_loglik(prob, center + s * dist * t) for s in (-1.0, -0.5, 0.5, 1.0)
        ]
        across = [
            dense_loglik(prob, center + s * dist * orth) for s in (-1.0, -0.5, 0.5, 1.0)
        ]
        peak = dense_loglik(prob, center)
        drop_along = peak - min(along)
        drop_across = peak - min(across)
        assert drop_along < drop_across

    def test_csv_export(self, tmp_path):
        prob = _matern_problem(n=24)
        surf = profile_surface(prob, np.linspace(-0.2, 0.2, 3), np.linspace(1.5, 2.5, 4))
        path = tmp_path / "profile.csv"
        surf.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "log_sigma2,log_kappa,loglik"
        assert len(lines) == 1 + 3 * 4


class TestRidgeReport:
    def test_infill_ridge_small(self):
        # reduced-size version of the acceptance design
        prob = _matern_problem(n=150, kappa=20.0, seed=1)
        rep = ridge_report(prob)
        assert rep.anisotropy_ratio >= 5.0
        assert rep.microergodic_angle_deg < 30.0
        assert rep.eigenvalues[0] >= rep.eigenvalues[1] > 0

    def test_infill_monotone_anisotropy(self):
        # median over 3 seeds, non-decreasing as sampling densifies
        medians = []
        for n in (100, 200, 400):
            ratios = []
            for seed in (1, 2, 3):
                prob = _matern_problem(n=n, kappa=20.0, seed=seed)
                ratios.append(ridge_report(prob).anisotropy_ratio)
            medians.append(np.median(ratios))
        assert medians[0] <= medians[1] <= medians[2]

    def test_boundary_detected(self):
        # white-noise data pushes kappa to the upper search bound
        rng = np.random.default_rng(23)
        sites = np.linspace(0.0, 1.0, 60)
        prob = LikelihoodProblem(
            family=DENSE_MATERN, y=rng.standard_normal(60), smoothness=1.0, sites=sites
        )
        with pytest.raises(BoundaryError):
            ridge_report(prob)

    def test_json_export(self, tmp_path):
        prob = _matern_problem(n=100, kappa=12.0, seed=9)
        rep = ridge_report(prob)
        path = tmp_path / "ridge.json"
        rep.to_json(path)
        import json

        doc = json.loads(path.read_text())
        assert doc["anisotropy_ratio"] == pytest.approx(rep.anisotropy_ratio)
        assert doc["coordinates"] == "(log sigma2, log kappa)"

    def test_starts_documented_count(self):
        prob = _matern_problem(n=32)
        assert default_starts(prob).shape == (4, 2)
