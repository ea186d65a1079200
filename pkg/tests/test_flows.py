import math

import numpy as np
import pytest

from modeq.diffusion import DiffusionSpec, EnvelopeSchedule
from modeq.errors import NonFiniteState
from modeq.flows import (drift_field, gradient_flow, linear_drift_rates, moment_bound_check,
                         simulate_coupled, simulate_independent, simulate_sde, tangent_ode,
                         tangent_sde)
from modeq.objective import modified_gradient, perturbed_quadratic_problem, quadratic_problem
from modeq.scheme import SchemeConfig, simulate_scheme

from oracles import fine_euler_moments

P1 = quadratic_problem([1.0])
P2 = quadratic_problem([1.0, 2.0])
EXP = DiffusionSpec(EnvelopeSchedule("exponential", 1.0, 1.0), 2)


def random_convex(rng, d):
    if rng.random() < 0.5:
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        A = Q @ np.diag(rng.uniform(0.3, 4.0, d)) @ Q.T
        return quadratic_problem(A, rng.standard_normal(d))
    return perturbed_quadratic_problem(d, rng.uniform(0, 0.95))


class TestGradientFlow:
    def test_scalar(self):
        assert gradient_flow(P1, [1.0], 1.0).state == pytest.approx([math.exp(-1)], rel=1e-14)

    def test_zero_horizon(self):
        assert np.array_equal(gradient_flow(P2, [1.0, 2.0], 0.0).state, [1.0, 2.0])

    def test_rk_matches_exact(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        p = quadratic_problem(Q @ np.diag([0.5, 1.0, 3.0]) @ Q.T, [1.0, 0.0, -1.0])
        x0 = np.array([2.0, -1.0, 0.5])
        exact = gradient_flow(p, x0, 2.0, method="exact").state
        rk = gradient_flow(p, x0, 2.0, tol=1e-10, method="rk").state
        assert np.allclose(rk, exact, atol=1e-9)
        assert np.allclose(exact, p.minimizer + Q @ (np.exp(-2 * np.array([0.5, 1.0, 3.0])) *
                                                     (Q.T @ (x0 - p.minimizer))), atol=1e-12)

    def test_contraction_random_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            d = int(rng.integers(1, 5))
            p = random_convex(rng, d)
            x0 = p.minimizer + rng.standard_normal(d) * 3
            T = rng.uniform(0.1, 5)
            got = np.linalg.norm(gradient_flow(p, x0, T).state - p.minimizer)
            assert got <= math.exp(-p.mu * T) * np.linalg.norm(x0 - p.minimizer) + 1e-8


class TestTangent:
    def test_identity(self):
        assert np.allclose(tangent_ode(quadratic_problem([1.0, 1.0]), [0, 0], [1.0, 0.0], 1.0),
                           [math.exp(-1), 0.0], atol=1e-14)

    def test_zero_horizon(self):
        assert np.array_equal(tangent_ode(P2, [1, 1], [0.3, 0.4], 0.0), [0.3, 0.4])

    def test_decay_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            d = int(rng.integers(1, 5))
            p = random_convex(rng, d)
            k = rng.standard_normal(d)
            T = rng.uniform(0.1, 4)
            eta = tangent_ode(p, p.minimizer + rng.standard_normal(d), k, T, tol=1e-10)
            assert np.linalg.norm(eta) <= math.exp(-p.mu * T) * np.linalg.norm(k) + 1e-9

    def test_sde_exact_quadratic(self):
        s = DiffusionSpec(EnvelopeSchedule("constant", 1.0), 2)
        p = quadratic_problem([1.0, 1.0])
        m = tangent_sde(p, s, 0.2, [1.0, 1.0], [1.0, 0.0], 1.0)
        assert m.second == pytest.approx(math.exp(-2 * 1.1), rel=1e-13)
        mc = tangent_sde(p, s, 0.2, [1.0, 1.0], [1.0, 0.0], 1.0, fine_substeps=256, ensemble=200,
                         method="euler")
        assert abs(mc.second - math.exp(-2.2)) <= 4 * mc.second_se + 2e-3

    def test_sde_without_noise_is_modified_tangent(self):
        p = perturbed_quadratic_problem(2, 0.5)
        h, T, S = 0.1, 1.0, 400
        m = tangent_sde(p, None, h, [1.0, -0.5], [1.0, 0.0], T, fine_substeps=S, ensemble=1)
        # fine Euler for the joint (Y, eta) system along the modified flow
        y, eta = np.array([1.0, -0.5]), np.array([1.0, 0.0])
        d = h / S
        for _ in range(int(round(T / h)) * S):
            jac = (modified_gradient(p, h, y + 1e-6 * eta) - modified_gradient(p, h, y - 1e-6 * eta)) / 2e-6
            y, eta = y - d * modified_gradient(p, h, y), eta - d * jac
        assert m.second == pytest.approx(float(eta @ eta), rel=1e-6)

    def test_sde_state_dependent_decay(self):
        p = perturbed_quadratic_problem(2, 0.3)
        s = DiffusionSpec(EnvelopeSchedule("constant", 0.5), 2, "state_scaled", state_gain=0.5)
        k = np.array([0.6, 0.8])
        for T in (0.5, 1.0, 2.0):
            m = tangent_sde(p, s, 0.1, [1.0, 1.0], k, T, fine_substeps=16, ensemble=400)
            assert m.second <= math.exp(-2 * (p.mu - 0.5) * T) + 4 * m.second_se


class TestSde:
    def test_modified_flow_without_noise(self):
        out = simulate_sde(P1, None, "modified", 0.2, [1.0], 1.0, fine_substeps=1024, method="euler")
        assert out.terminal[0, 0] == pytest.approx(math.exp(-1.1), abs=2e-3)
        assert out.terminal[0, 0] == pytest.approx(0.3328711, abs=2e-3)

    def test_plain_euler_error_small(self):
        out = simulate_sde(P2, None, "plain", 0.1, [1.0, 1.0], 2.0, fine_substeps=64, method="euler")
        exact = np.exp(-np.array([1.0, 2.0]) * 2.0)
        assert np.allclose(out.terminal[0], exact, atol=(0.1 / 64) * 2 * 2.0 * 1.5)

    def test_linear_rates(self):
        lam = np.array([1.0, 2.0])
        assert np.allclose(linear_drift_rates(lam, "modified", 0.1), lam * (1 + 0.05 * lam))
        assert np.allclose(linear_drift_rates(lam, "resolvent", 0.1), lam / (1 - 0.05 * lam))
        assert np.allclose(linear_drift_rates(lam, "exponential", 0.1), lam * np.exp(0.05 * lam))
        x = np.array([[0.3, -0.2]])
        for kind in ("plain", "modified", "resolvent", "exponential"):
            assert np.allclose(drift_field(P2, kind, 0.1)(x), linear_drift_rates(lam, kind, 0.1) * x)

    @pytest.mark.parametrize("drift", ["plain", "modified", "resolvent"])
    def test_aggregated_matches_oracle_moments(self, drift):
        h, T, S, M = 0.1, 1.0, 32, 40000
        lam = [1.0, 2.0]
        rates = linear_drift_rates(np.array(lam), drift, h)
        out = simulate_sde(P2, EXP, drift, h, [1.0, -1.0], T, S, M, seed=3, method="aggregated")
        for i in range(2):
            m, v = fine_euler_moments(rates[i], [1.0, -1.0][i], h, 10, S, ("exponential", 1.0, 1.0, 0.0))
            col = out.terminal[:, i]
            assert abs(col.mean() - m) < 4 * math.sqrt(v / M)
            assert abs(col.var() - v) < 4 * v * math.sqrt(2 / M)

    def test_aggregated_and_euler_agree_in_law(self):
        h, T, S, M = 0.2, 1.0, 16, 20000
        a = simulate_sde(P2, EXP, "modified", h, [1.0, 1.0], T, S, M, seed=1, method="aggregated").terminal
        b = simulate_sde(P2, EXP, "modified", h, [1.0, 1.0], T, S, M, seed=2, method="euler").terminal
        se = np.sqrt(a.var(axis=0) / M + b.var(axis=0) / M)
        assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 4 * se)

    def test_deterministic_aggregated_is_fine_euler(self):
        a = simulate_sde(P2, None, "modified", 0.2, [1.0, 1.0], 1.0, 64, 3, method="aggregated").terminal
        m = [fine_euler_moments(r, 1.0, 0.2, 5, 64)[0] for r in linear_drift_rates(np.array([1.0, 2.0]), "modified", 0.2)]
        assert np.allclose(a, m, rtol=1e-12)

    def test_coupled_plain_single_substep_is_the_scheme(self):
        p = perturbed_quadratic_problem(2, 0.4)
        cfg = SchemeConfig(0.1, 20, [1.0, -1.0], seed=6, noise_mode="brownian_increments")
        X, Y = simulate_coupled(p, EXP, "plain", cfg, 1, 500, method="euler")
        assert np.array_equal(X, Y)
        Z = simulate_scheme(p, EXP, cfg, 500).terminal
        assert np.array_equal(X, Z)
        iid = simulate_scheme(p, EXP, SchemeConfig(0.1, 20, [1.0, -1.0], seed=6), 500).terminal
        assert np.array_equal(iid, Z)

    def test_coupled_scheme_half_matches_scheme(self):
        cfg = SchemeConfig(0.1, 10, [1.0, 1.0], seed=2, noise_mode="brownian_increments",
                           substeps_per_step=8)
        X, _ = simulate_coupled(P2, EXP, "modified", cfg, 8, 300, method="euler")
        assert np.array_equal(X, simulate_scheme(P2, EXP, cfg, 300).terminal)

    def test_coupling_correlates(self):
        cfg = SchemeConfig(0.1, 10, [1.0, 1.0], seed=2)
        X, Y = simulate_coupled(P2, EXP, "modified", cfg, 64, 5000)
        Z = simulate_independent(P2, EXP, "modified", cfg, 64, 5000).terminal
        assert np.var(X - Y) < 0.05 * np.var(X - Z)

    def test_reference_refinement_consistent(self):
        cfg = SchemeConfig(0.1, 10, [1.0, 1.0], seed=4)
        phi = lambda v: np.sum(v ** 2, axis=1)
        _, Y1 = simulate_coupled(P2, EXP, "modified", cfg, 256, 100000)
        _, Y2 = simulate_coupled(P2, EXP, "modified", cfg, 512, 100000)
        ci = 1.96 * phi(Y1).std() / math.sqrt(Y1.shape[0])
        assert abs(phi(Y1).mean() - phi(Y2).mean()) < ci

    def test_workers_and_seed(self):
        a = simulate_sde(P2, EXP, "modified", 0.1, [1, 1], 1.0, 8, 9000, seed=5, workers=1, method="euler")
        b = simulate_sde(P2, EXP, "modified", 0.1, [1, 1], 1.0, 8, 9000, seed=5, workers=8, method="euler")
        assert np.array_equal(a.terminal, b.terminal)
        assert a.coupling_tag == (5, 0)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            simulate_sde(P1, None, "plain", 0.3, [1.0], 1.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up(self):
        p = quadratic_problem([50.0])
        with pytest.raises(NonFiniteState):
            simulate_sde(p, None, "plain", 0.1, [1.0], 100.0, fine_substeps=1, method="euler")

    def test_uniform_moment_bound(self):
        s = DiffusionSpec(EnvelopeSchedule("constant", 1.0), 2)
        x0 = np.array([3.0, -2.0])
        out = simulate_sde(P2, s, "modified", 0.1, x0, 20.0, 16, 20000, checkpoints=range(0, 201, 10))
        worst = max(np.mean(np.sum(v ** 2, axis=1)) for v in out.checkpoints.values())
        C = 1.0  # frozen: sup_t E||Y(t)||^2 <= C (1 + ||x0||^2)
        assert worst <= C * (1 + x0 @ x0)

    def test_moment_bound_check(self):
        r = moment_bound_check(quadratic_problem([1.0, 3.0]), EXP, [2.0, -1.0], [0.4, 0.8, 1.6, 3.2],
                               [0.2, 0.1, 0.05, 0.025], M=5000)
        assert r.passed and len(r.rows) == 16 and r.C > 0
