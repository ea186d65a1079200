import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modeq.errors import SingularHessianResolvent
from modeq.objective import (PERTURBATION_THRESHOLD, alternative_modified_drift,
                             check_assumptions, hessian, modified_gradient, modified_hess_vec,
                             modified_objective, perturbed_quadratic_problem, quadratic_problem)

eigs = st.lists(st.floats(0.2, 5.0), min_size=1, max_size=4)
small_h = st.floats(0.0, 0.3)


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def random_spd(rng, d):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(0.5, 4.0, d)) @ Q.T


class TestQuadratic:
    def test_constants_from_spectrum(self):
        p = quadratic_problem([1.0, 4.0], shift=[1.0, -2.0])
        assert p.mu == pytest.approx(1.0) and p.lip == pytest.approx(4.0)
        assert np.allclose(p.minimizer, [1.0, -2.0])
        assert np.linalg.norm(p.grad(p.minimizer)) <= 1e-12

    def test_full_matrix(self):
        A = random_spd(np.random.default_rng(3), 3)
        p = quadratic_problem(A)
        assert p.mu == pytest.approx(np.linalg.eigvalsh(A).min())
        x = np.array([0.3, -1.0, 2.0])
        assert np.allclose(p.grad(x), A @ x)
        assert p.eval(x) == pytest.approx(0.5 * x @ A @ x)

    def test_not_positive_definite(self):
        with pytest.raises(ValueError):
            quadratic_problem([1.0, 0.0])

    def test_batched_evaluation(self):
        p = quadratic_problem([1.0, 2.0])
        X = np.arange(12.0).reshape(6, 2)
        assert p.eval(X).shape == (6,)
        assert np.allclose(p.grad(X), X * [1.0, 2.0])


class TestModifiedObjective:
    def test_h_zero_is_objective(self):
        p = quadratic_problem([1.0])
        assert modified_objective(p, 0.0, np.array([2.0])) == pytest.approx(2.0)

    def test_value(self):
        p = quadratic_problem([1.0])
        assert modified_objective(p, 0.2, np.array([2.0])) == pytest.approx(2.2, abs=1e-14)

    def test_gradient_value(self):
        p = quadratic_problem([1.0])
        assert modified_gradient(p, 0.2, np.array([2.0])) == pytest.approx([2.2], abs=1e-14)

    def test_gradient_diag(self):
        p = quadratic_problem([1.0, 4.0])
        g = modified_gradient(p, 0.1, np.array([1.0, 1.0]))
        assert np.allclose(g, [1.05, 4.8], atol=1e-14)
        fd = fd_grad(lambda x: modified_objective(p, 0.1, x), np.array([1.0, 1.0]))
        assert np.allclose(fd, [1.05, 4.8], rtol=1e-6)

    def test_vanishes_at_minimizer(self):
        p = perturbed_quadratic_problem(3, 0.5)
        for h in (0.0, 0.1, 0.3):
            assert modified_objective(p, h, p.minimizer) == pytest.approx(float(p.eval(p.minimizer)))
            assert np.allclose(modified_gradient(p, h, p.minimizer), 0.0)

    @given(eigs, small_h, st.integers(0, 10_000))
    def test_quadratic_closed_form(self, lam, h, seed):
        rng = np.random.default_rng(seed)
        shift = rng.standard_normal(len(lam))
        p = quadratic_problem(lam, shift)
        x = rng.standard_normal(len(lam)) * 3
        A = np.diag(lam)
        expect = (A + 0.5 * h * A @ A) @ (x - shift)
        assert np.allclose(modified_gradient(p, h, x), expect, atol=1e-12, rtol=1e-12)

    @given(st.integers(1, 4), st.floats(0.0, 0.9), small_h, st.integers(0, 10_000))
    def test_gradient_matches_finite_difference(self, d, eps, h, seed):
        p = perturbed_quadratic_problem(d, eps)
        x = np.random.default_rng(seed).uniform(-3, 3, d)
        fd = fd_grad(lambda y: modified_objective(p, h, y), x)
        g = modified_gradient(p, h, x)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-6 * (1 + np.abs(g).max()))

    @given(st.integers(1, 4), st.floats(0.0, 0.9), small_h, st.integers(0, 10_000))
    def test_upper_bounds_objective(self, d, eps, h, seed):
        p = perturbed_quadratic_problem(d, eps)
        x = np.random.default_rng(seed).uniform(-5, 5, d)
        gap = modified_objective(p, h, x) - p.eval(x)
        assert gap >= 0
        if h > 1e-6 and np.linalg.norm(p.grad(x)) > 1e-3:
            assert gap > 0

    def test_gradient_descent_fixed_point(self):
        p = quadratic_problem([1.0, 3.0], shift=[2.0, -1.0])
        for g in (p.grad, lambda x: modified_gradient(p, 0.1, x)):
            x = np.array([5.0, 5.0])
            for _ in range(400):
                x = x - 0.2 * g(x)
            assert np.allclose(x, p.minimizer, atol=1e-12)


class TestDerivatives:
    @given(st.integers(1, 4), st.floats(0.0, 0.9), st.integers(0, 10_000))
    def test_grad_and_hess_vec_fd(self, d, eps, seed):
        rng = np.random.default_rng(seed)
        p = perturbed_quadratic_problem(d, eps)
        x = rng.uniform(-3, 3, d)
        k = rng.standard_normal(d)
        assert np.allclose(p.grad(x), fd_grad(p.eval, x), rtol=1e-6, atol=1e-6)
        t = 1e-6
        fd = (p.grad(x + t * k) - p.grad(x - t * k)) / (2 * t)
        assert np.allclose(p.hess_vec(x, k), fd, rtol=1e-5, atol=1e-5)

    def test_modified_hess_vec_fd(self):
        rng = np.random.default_rng(0)
        p = perturbed_quadratic_problem(3, 0.7)
        for _ in range(10):
            x, k = rng.uniform(-2, 2, 3), rng.standard_normal(3)
            t = 1e-6
            fd = (modified_gradient(p, 0.2, x + t * k) - modified_gradient(p, 0.2, x - t * k)) / (2 * t)
            assert np.allclose(modified_hess_vec(p, 0.2, x, k), fd, rtol=1e-5, atol=1e-6)

    def test_hessian_matrix(self):
        p = perturbed_quadratic_problem(2, 0.5)
        x = np.array([0.3, -1.2])
        assert np.allclose(hessian(p, x), np.diag(2 - 0.5 * np.cos(x)))


class TestAlternativeDrifts:
    def test_resolvent_value(self):
        p = quadratic_problem([1.0])
        v = alternative_modified_drift(p, 0.2, np.array([1.0]), "resolvent")
        assert v == pytest.approx([-1.0 / 0.9], abs=1e-14)

    def test_exponential_value(self):
        p = quadratic_problem([1.0])
        v = alternative_modified_drift(p, 0.2, np.array([1.0]), "exponential")
        series = sum(0.1 ** j / math.factorial(j) for j in range(20))
        assert v == pytest.approx([-series], abs=1e-14)

    def test_vanish_at_minimizer(self):
        p = perturbed_quadratic_problem(2, 0.5)
        for variant in ("resolvent", "exponential"):
            assert np.allclose(alternative_modified_drift(p, 0.1, p.minimizer, variant), 0.0)

    def test_agree_with_modified_to_first_order(self):
        p = perturbed_quadratic_problem(2, 0.5)
        x = np.array([1.0, -0.5])
        for variant in ("resolvent", "exponential"):
            for h in (1e-2, 1e-3):
                diff = alternative_modified_drift(p, h, x, variant) + modified_gradient(p, h, x)
                assert np.linalg.norm(diff) < 5 * h * h * np.linalg.norm(p.grad(x)) * p.lip ** 2

    def test_resolvent_condition(self):
        p = quadratic_problem([1.0, 4.0])
        with pytest.raises(SingularHessianResolvent):
            alternative_modified_drift(p, 0.5, np.ones(2), "resolvent")
        alternative_modified_drift(p, 0.49, np.ones(2), "resolvent")


class TestAssumptions:
    def test_identity_passes(self):
        rep = check_assumptions(quadratic_problem([1.0, 1.0]), [0.05, 0.1, 0.2])
        assert rep.passed
        assert rep.mu_observed >= 1 - 1e-10
        for h, v in rep.modified_mu_observed.items():
            assert v >= 1 + h / 2 - 1e-9

    def test_zero_perturbation_matches_quadratic(self):
        a = check_assumptions(perturbed_quadratic_problem(2, 0.0), [0.1], seed=4)
        b = check_assumptions(quadratic_problem([2.0, 2.0]), [0.1], seed=4)
        assert a.passed and b.passed
        assert a.mu_observed == pytest.approx(b.mu_observed)
        assert a.modified_mu_observed[0.1] == pytest.approx(b.modified_mu_observed[0.1])

    def test_below_threshold_passes(self):
        p = perturbed_quadratic_problem(3, 0.9 * PERTURBATION_THRESHOLD)
        assert check_assumptions(p, [0.05, 0.1]).passed

    def test_huge_perturbation_fails(self):
        rep = check_assumptions(perturbed_quadratic_problem(2, 100.0), [0.1])
        assert not rep.mu_ok and not rep.passed

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            check_assumptions(quadratic_problem([1.0]), [0.1], sample_count=1)
