import math

import numpy as np
import pytest

import perfhmc as ph
from perfhmc.errors import ConfigError, NonPositiveDefiniteError

from conftest import all_targets, finite_difference_gradient, quadratic_1d


class TestStandardNormal:
    def test_mode_calibration(self):
        t = ph.make_standard_normal(3)
        assert t.U(np.zeros(3)) == 0.0

    def test_value(self):
        t = ph.make_standard_normal(1)
        assert t.U(np.array([2.0])) == 2.0

    def test_gradient_identity(self):
        t = ph.make_standard_normal(3)
        q = np.array([1.0, -1.0, 0.0])
        assert np.array_equal(t.DU(q), q)


class TestCorrelatedNormal:
    def test_aspect_ratio_d100(self):
        spec = ph.CorrelatedNormalSpec(100, 0.1)
        assert spec.aspect_ratio == pytest.approx(12.11, abs=0.005)

    def test_aspect_ratio_d10(self):
        assert ph.CorrelatedNormalSpec(10, 0.6).aspect_ratio == pytest.approx(16.0, rel=1e-12)

    def test_rho_zero_degenerates_to_standard(self):
        t = ph.make_correlated_normal(ph.CorrelatedNormalSpec(4, 0.0))
        s = ph.make_standard_normal(4)
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.standard_normal(4)
            assert t.U(q) == pytest.approx(s.U(q), rel=1e-14)
            assert np.allclose(t.DU(q), s.DU(q), rtol=1e-14)

    def test_rho_validation(self):
        with pytest.raises(ConfigError):
            ph.CorrelatedNormalSpec(3, 1.0)
        with pytest.raises(ConfigError):
            ph.CorrelatedNormalSpec(3, -0.2)

    def test_matches_explicit_inverse(self):
        # rank-one closed form vs a dense solve, d <= 10
        rng = np.random.default_rng(1)
        for d, rho in [(2, 0.6), (5, 0.3), (10, 0.95)]:
            t = ph.make_correlated_normal(ph.CorrelatedNormalSpec(d, rho))
            cov = (1 - rho) * np.eye(d) + rho * np.ones((d, d))
            inv = np.linalg.inv(cov)
            for _ in range(20):
                q = rng.standard_normal(d) * 2
                assert t.U(q) == pytest.approx(0.5 * q @ inv @ q, abs=1e-10)


class TestTDistribution:
    def test_mode(self):
        t = ph.make_t_distribution(3, 4.0)
        assert t.U(np.zeros(3)) == 0.0

    def test_value_d1(self):
        t = ph.make_t_distribution(1, 4.0)
        assert t.U(np.array([2.0])) == pytest.approx(2.5 * math.log(2.0), rel=1e-12)

    def test_gradient_d1(self):
        t = ph.make_t_distribution(1, 4.0)
        assert t.DU(np.array([2.0]))[0] == pytest.approx(1.25, rel=1e-12)

    def test_gradient_bounded_in_tail(self):
        t = ph.make_t_distribution(2, 4.0)
        g_far = np.linalg.norm(t.DU(np.array([1e6, 0.0])))
        assert g_far < 1e-3


class TestMixture:
    def test_trough_at_mu6(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(1, 6.0))
        ratio = math.exp(-(t.U(np.array([3.0])) - t.U(np.array([0.0]))))
        assert ratio == pytest.approx(2 * math.exp(-4.5), rel=1e-3)
        assert ratio < 0.023

    def test_equal_modes(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(1, 4.0))
        assert t.U(np.array([0.0])) == pytest.approx(t.U(np.array([4.0])), abs=1e-14)

    def test_gradient_zero_at_midpoint(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(1, 4.0))
        assert abs(t.DU(np.array([2.0]))[0]) < 1e-14

    def test_reflection_invariance(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(3, 4.0))
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = rng.standard_normal(3) * 3
            q_ref = q.copy()
            q_ref[0] = 4.0 - q[0]
            assert t.U(q) == pytest.approx(t.U(q_ref), abs=1e-12)

    def test_start_ranges_adjusted(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(2, 6.0))
        assert t.start_hi[0] == 12.0
        assert t.start_lo[0] == -6.0
        assert t.start_hi[1] == 6.0


class TestLasso:
    @pytest.fixture(scope="class")
    def data(self):
        return ph.load_diabetes()

    def test_loader_shape_and_standardization(self, data):
        X, y, info = data
        assert X.shape == (442, 10)
        assert y.shape == (442,)
        assert info["n"] == 442 and info["J"] == 10
        assert np.max(np.abs(X.mean(axis=0))) < 1e-12
        assert np.max(np.abs(X.var(axis=0) - 1.0)) < 1e-12
        assert len(info["predictor_means"]) == 10

    def test_dimension(self, data):
        X, y, _ = data
        t = ph.make_lasso(X, y, 0.0)
        assert t.d == 12

    def test_lambda0_gradient_vanishes_at_ols(self, data):
        X, y, _ = data
        t = ph.make_lasso(X, y, 0.0)
        g = t.DU(t.mode)
        assert np.max(np.abs(g[:11])) < 1e-8
        assert abs(g[11]) < 1e-8

    def test_smoke_lambda_0237(self, data):
        X, y, _ = data
        t = ph.scale_transform(ph.make_lasso(X, y, 0.237))
        x = np.zeros(12)
        assert math.isfinite(t.U(x))
        assert np.all(np.isfinite(t.DU(x)))

    def test_T_and_S_against_double_loop(self, data):
        X, y, _ = data
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((10, 12)) * 5
        T = ph.lasso_T(pts, 10)
        S = ph.lasso_S(pts, X, y)
        n, J = X.shape
        for k in range(10):
            t_naive = 0.0
            for j in range(J):
                t_naive += abs(pts[k, j])
            s_naive = 0.0
            for i in range(n):
                pred = pts[k, J]
                for j in range(J):
                    pred += X[i, j] * pts[k, j]
                s_naive += (y[i] - pred) ** 2
            assert T[k] == pytest.approx(t_naive, rel=1e-9)
            assert S[k] == pytest.approx(s_naive, rel=1e-9)

    def test_negative_lambda_rejected(self, data):
        X, y, _ = data
        with pytest.raises(ConfigError):
            ph.make_lasso(X, y, -1.0)

    def test_unstandardized_rejected(self, data):
        X, y, _ = data
        with pytest.raises(ConfigError):
            ph.make_lasso(X * 2.0, y, 0.0)

    def test_singular_design_rejected(self, data):
        X, y, _ = data
        X_bad = X.copy()
        X_bad[:, 1] = X_bad[:, 0]
        with pytest.raises(ConfigError):
            ph.make_lasso(X_bad, y, 0.0)

    def test_loader_validates_shape(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ConfigError):
            ph.load_diabetes(p)

    def test_loader_whitespace_delimited(self, tmp_path, data):
        X, y, _ = data
        import importlib.resources as res
        text = res.files("perfhmc").joinpath("data/diabetes.txt").read_text()
        p = tmp_path / "ws.txt"
        p.write_text(text.replace(",", " "))
        X2, y2, _ = ph.load_diabetes(p)
        assert np.allclose(X2, X) and np.allclose(y2, y)


class TestScaleTransform:
    def test_identity_for_standard_normal(self):
        t = ph.make_standard_normal(4)
        assert ph.scale_transform(t) is t

    def test_1d_curvature_4(self):
        t = ph.scale_transform(quadratic_1d(4.0))
        # U(x) in scaled coordinates is x^2/2: the coordinate doubled
        assert t.U(np.array([2.0])) == pytest.approx(0.5 * 4.0, rel=1e-12)
        assert t.U(np.array([2.0])) == pytest.approx(2.0, rel=1e-12)

    def test_lasso_scaled_gradient_zero_at_origin(self):
        X, y, _ = ph.load_diabetes()
        t = ph.scale_transform(ph.make_lasso(X, y, 0.0))
        g = t.DU(np.zeros(12))
        assert np.max(np.abs(g)) < 1e-8
        # OLS oracle: the scaled origin maps back to the OLS point
        back = t.to_original(np.zeros((1, 12)))[0]
        inner = ph.make_lasso(X, y, 0.0)
        assert np.allclose(back, inner.mode, atol=1e-12)

    def test_non_pd_hessian_reports_eigenvalue(self):
        t = ph.TargetDistribution(
            d=2, U=lambda q: 0.0, DU=lambda q: np.zeros(2),
            hessian_mode=np.array([[1.0, 0.0], [0.0, -2.0]]))
        with pytest.raises(NonPositiveDefiniteError) as exc:
            ph.scale_transform(t)
        assert exc.value.eigenvalue == pytest.approx(-2.0)


class TestGradientChecks:
    @pytest.mark.parametrize("target", all_targets(), ids=lambda t: t.label)
    def test_finite_difference(self, target):
        # 100 random probes, kept away from the lasso kinks
        rng = np.random.default_rng(7)
        d = target.d
        worst = 0.0
        for _ in range(100):
            q = np.asarray(target.mode) + rng.standard_normal(d)
            if "lasso" in target.label:
                small = np.abs(q[:10]) < 1e-3
                q[:10][small] = np.sign(q[:10][small] + 0.5) * 0.1
            g = np.asarray(target.DU(q), dtype=float)
            fd = finite_difference_gradient(target.U, q)
            denom = max(1.0, float(np.max(np.abs(g))))
            worst = max(worst, float(np.max(np.abs(fd - g))) / denom)
        assert worst <= 1e-5, target.label


class TestStartPoints:
    def test_d1_three_points(self):
        t = ph.make_standard_normal(1)
        s = ph.cftp_start_points(t)
        assert s.m == 3
        assert sorted(s.points.ravel().tolist()) == [-6.0, 0.0, 6.0]

    def test_d5_full_factorial(self):
        t = ph.make_standard_normal(5)
        s = ph.cftp_start_points(t)
        assert s.m == 33
        corners = {tuple(row) for row in s.points[:32]}
        assert len(corners) == 32
        assert all(set(np.abs(r)) == {6.0} for r in s.points[:32])

    def test_d100_factorial_prefix(self):
        t = ph.make_standard_normal(100)
        s = ph.cftp_start_points(t, seed=5)
        assert s.m == 33
        prefix = {tuple(row[:5]) for row in s.points[:32]}
        assert len(prefix) == 32  # first five coordinates form the factorial
        assert np.all(np.abs(s.points[:32]) == 6.0)
        assert np.array_equal(s.points[32], np.zeros(100))

    def test_mixture_extra_point(self):
        t = ph.make_normal_mixture(ph.MixtureSpec(2, 4.0))
        s = ph.cftp_start_points(t)
        assert s.m == 2**2 + 1 + 1
        assert np.array_equal(s.points[-1], [4.0, 0.0])
        col0 = set(s.points[:4, 0].tolist())
        assert col0 == {-6.0, 10.0}  # positive extremes moved to mu + 6

    def test_deterministic_given_key(self):
        t = ph.make_standard_normal(8)
        a = ph.cftp_start_points(t, seed=5, run=2).points
        b = ph.cftp_start_points(t, seed=5, run=2).points
        c = ph.cftp_start_points(t, seed=5, run=3).points
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
