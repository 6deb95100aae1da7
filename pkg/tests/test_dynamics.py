import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import perfhmc as ph
from perfhmc.errors import SingularMomentumError, UnsupportedConfigError

from conftest import free_particle, quadratic_1d


class TestKinetic:
    def test_beta2_example(self):
        assert ph.kinetic_energy(np.array([3.0, 4.0]), 2.0) == 12.5

    def test_zero(self):
        assert ph.kinetic_energy(np.zeros(3), 2.0) == 0.0

    def test_beta1(self):
        assert ph.kinetic_energy(np.array([2.0]), 1.0) == 2.0

    def test_gradient_beta2_identity(self):
        p = np.array([1.0, -2.0])
        assert np.array_equal(ph.kinetic_gradient(p, 2.0), p)

    def test_gradient_beta1_unit_vector(self):
        g = ph.kinetic_gradient(np.array([3.0, 4.0]), 1.0)
        assert np.allclose(g, [0.6, 0.8], atol=1e-15)

    def test_gradient_zero_beta2(self):
        assert np.array_equal(ph.kinetic_gradient(np.zeros(2), 2.0), np.zeros(2))

    def test_gradient_zero_singular(self):
        with pytest.raises(SingularMomentumError):
            ph.kinetic_gradient(np.zeros(2), 1.0)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_sign(self, vals):
        p = np.array(vals)
        k = ph.kinetic_energy(p, 2.0)
        assert k >= 0.0
        assert ph.kinetic_energy(-p, 2.0) == k


class TestMomentumSampling:
    def test_median_maps_to_zero(self):
        assert np.all(ph.sample_momentum(np.full(4, 0.5)) == 0.0)

    def test_inverse_cdf_value(self):
        p = ph.sample_momentum(np.array([0.8413447]))
        assert abs(p[0] - 1.0) < 1e-4

    def test_chi_square_moment(self):
        # |p|^2 over many draws has mean d (chi-square moment oracle)
        d, n = 10, 10**5
        u = ph.uniforms(ph.stream_prefix(17, 0, 0, 0), n * d).reshape(n, d)
        p = ph.uniform_to_normal(u)
        norms = np.sum(p * p, axis=1)
        assert abs(norms.mean() - d) < 0.2

    def test_beta_not_2_rejected(self):
        with pytest.raises(UnsupportedConfigError):
            ph.sample_momentum(np.array([0.5]), beta=1.0)


class TestLeapfrog:
    def test_half_kick_hand_value(self):
        t = ph.make_standard_normal(1)
        s = ph.PhaseState(np.array([1.0]), np.array([0.0]))
        out = ph.leapfrog_half_kick(s, t, 0.1, +1)
        assert out.p[0] == pytest.approx(-0.05, abs=1e-15)

    def test_half_kick_zero_gradient(self):
        t = free_particle(2)
        s = ph.PhaseState(np.zeros(2), np.array([0.3, -0.4]))
        out = ph.leapfrog_half_kick(s, t, 0.1, +1)
        assert np.array_equal(out.p, s.p)

    def test_half_kick_inverse(self):
        t = ph.make_standard_normal(3)
        s = ph.PhaseState(np.array([1.0, -2.0, 0.5]), np.array([0.2, 0.1, -0.3]))
        fwd = ph.leapfrog_half_kick(s, t, 0.1, +1)
        back = ph.leapfrog_half_kick(ph.PhaseState(s.q, fwd.p), t, 0.1, -1)
        assert np.max(np.abs(back.p - s.p)) < 1e-15

    def test_step_hand_values(self, kin):
        t = ph.make_standard_normal(1)
        s = ph.PhaseState(np.array([1.0]), np.array([-0.05]), 0.5)
        out = ph.leapfrog_step(s, t, kin, 0.1, +1)
        assert out.q[0] == pytest.approx(0.995, abs=1e-15)
        assert out.p[0] == pytest.approx(-0.1495, abs=1e-15)

    def test_step_free_particle(self, kin):
        t = free_particle(2)
        s = ph.PhaseState(np.zeros(2), np.array([1.0, 2.0]))
        out = s
        for _ in range(5):
            out = ph.leapfrog_step(out, t, kin, 0.1, +1)
        assert np.allclose(out.q, [0.5, 1.0], atol=1e-14)
        assert np.array_equal(out.p, s.p)

    def _round_trip(self, target, kin, q0, p0, n, dt):
        s = ph.leapfrog_half_kick(ph.PhaseState(q0, p0), target, dt, +1)
        for _ in range(n):
            s = ph.leapfrog_step(s, target, kin, dt, +1)
        # retard to integer time at the tip, negate, return
        s = ph.leapfrog_half_kick(ph.PhaseState(s.q, s.p), target, dt, -1)
        s = ph.PhaseState(s.q, -s.p)
        s = ph.leapfrog_half_kick(s, target, dt, +1)
        for _ in range(n):
            s = ph.leapfrog_step(s, target, kin, dt, +1)
        s = ph.leapfrog_half_kick(ph.PhaseState(s.q, s.p), target, dt, -1)
        return s.q, -s.p

    def test_reversibility_100_steps(self, kin):
        # forward, negate momentum, forward again retraces to the start
        from conftest import all_targets
        rng = np.random.default_rng(5)
        for target in all_targets(scale_lasso=True):
            d = target.d
            dt = ph.time_step_for(d)
            q0 = np.asarray(target.mode) + 0.5 * rng.standard_normal(d)
            p0 = rng.standard_normal(d)
            q_back, p_back = self._round_trip(target, kin, q0, p0, 100, dt)
            assert np.max(np.abs(q_back - q0)) < 1e-10, target.label
            assert np.max(np.abs(p_back - p0)) < 1e-10, target.label

    def test_volume_preservation_2d(self, kin):
        # finite-difference Jacobian of one step has unit determinant
        t = ph.make_correlated_normal(ph.CorrelatedNormalSpec(2, 0.5))
        dt = 0.15
        h = 1e-6

        def step(z):
            s = ph.PhaseState(z[:2].copy(), z[2:].copy())
            out = ph.leapfrog_step(s, t, kin, dt, +1)
            return np.concatenate([out.q, out.p])

        z0 = np.array([0.3, -0.7, 0.9, 0.4])
        J = np.empty((4, 4))
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            J[:, i] = (step(z0 + e) - step(z0 - e)) / (2 * h)
        assert abs(np.linalg.det(J) - 1.0) < 1e-6

    def test_hamiltonian_drift_d10(self, kin):
        # 20-step trajectories from the target keep |dH| small enough for
        # high M-H acceptance
        d = 10
        t = ph.make_standard_normal(d)
        dt = ph.time_step_for(d)
        rng = np.random.default_rng(42)
        ok = 0
        trials = 200
        for _ in range(trials):
            q = rng.standard_normal(d)
            p = rng.standard_normal(d)
            h0 = t.U(q) + kin.energy(p)
            s = ph.leapfrog_half_kick(ph.PhaseState(q, p), t, dt, +1)
            for _ in range(20):
                s = ph.leapfrog_step(s, t, kin, dt, +1)
            s = ph.leapfrog_half_kick(s, t, dt, -1)
            h1 = t.U(s.q) + kin.energy(s.p)
            ok += abs(h1 - h0) <= 0.5
        assert ok / trials >= 0.95


class TestTimeStep:
    def test_d1_exact_pi(self):
        dt = ph.time_step_for(1, 2.0, 2.0, 0.05)
        assert abs(dt - 0.05 * math.pi) / (0.05 * math.pi) < 1e-12

    def test_d100_matches_mpmath(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 50
        d, a, b, h = 100, 2.0, 2.0, 0.05

        def g(x):
            return mp.gamma(mp.mpf(x))

        exact = (2 * h * mp.mpf(b) ** (1 / mp.mpf(b) - 1) * mp.mpf(a) ** (1 / mp.mpf(a))
                 * g(d / b) / g((d - 1) / b + 1)
                 * g((d - 1) / b + d / a + 1) / g((d - 1) / b + (d - 1) / a + 1))
        got = ph.time_step_for(d, a, b, h)
        assert abs(got - float(exact)) / float(exact) < 1e-10

    def test_alpha_beta_2_h_cancellation(self):
        # conditional-step exponent 1/a + 1/b - 1 vanishes at a = b = 2,
        # so the Hamiltonian level drops out exactly
        a = b = 2.0
        assert 1 / a + 1 / b - 1 == 0.0

    @pytest.mark.parametrize("d,alpha", [(1, 2.0), (1, 1.5), (10, 2.0), (10, 1.5)])
    def test_matches_monte_carlo_oracle(self, d, alpha):
        # E(1/dt)^-1 under the gamma distribution of the Hamiltonian level
        beta = 2.0
        h = 0.05
        lg = math.lgamma
        log_B = (lg(d / beta + 1 - 1 / beta) + lg(d / beta + d / alpha)
                 - lg(d / beta) - lg(d / beta + d / alpha + 1 - 1 / beta))
        rng = np.random.default_rng(123)
        H = rng.gamma(d / beta + d / alpha, 1.0, size=400000)
        inv_dt = (beta * H) ** (1 - 1 / beta) * math.exp(log_B) / (2 * h * (alpha * H) ** (1 / alpha))
        oracle = 1.0 / inv_dt.mean()
        got = ph.time_step_for(d, alpha, beta, h)
        assert abs(got - oracle) / oracle < 0.02

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            ph.time_step(ph.TimeStepConfig(d=0))
        with pytest.raises(ValueError):
            ph.time_step(ph.TimeStepConfig(d=3, h=-0.1))


class TestLogGamma:
    def test_accuracy_against_mpmath(self):
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 40
        xs = np.concatenate([np.linspace(0.05, 2, 40), np.linspace(2, 300, 60)])
        for x in xs:
            exact = float(mp.loggamma(mp.mpf(float(x))))
            got = ph.log_gamma(float(x))
            denom = max(1.0, abs(exact))
            assert abs(got - exact) / denom < 1e-12

    def test_half_integer(self):
        assert ph.log_gamma(0.5) == pytest.approx(math.log(math.sqrt(math.pi)), rel=1e-15)
