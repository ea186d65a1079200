"""Strongly convex objectives, the modified objective F^h and its derivatives.

All callables accept batched inputs: ``x`` of shape ``(..., d)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import SingularHessianResolvent

Array = np.ndarray


@dataclass(frozen=True)
class ObjectiveProblem:
    """An objective F with gradient, Hessian-vector product and convexity constants.

    ``third_vec(x, u, v)`` returns the vector D^3F(x).(u, v, .) and is only
    needed for tangent processes of the modified flow. ``matrix`` is set for
    quadratic problems and enables closed-form fast paths.
    """

    dim: int
    eval: Callable[[Array], Array]
    grad: Callable[[Array], Array]
    hess_vec: Callable[[Array, Array], Array]
    minimizer: Array
    mu: float
    lip: float
    third_vec: Optional[Callable[[Array, Array, Array], Array]] = None
    matrix: Optional[Array] = None
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if not (self.mu > 0 and self.lip >= self.mu):
            raise ValueError(f"need 0 < mu <= lip, got mu={self.mu}, lip={self.lip}")

    @property
    def is_quadratic(self) -> bool:
        return self.matrix is not None

    @property
    def is_diagonal_quadratic(self) -> bool:
        if self.matrix is None:
            return False
        A = self.matrix
        return bool(np.all(A == np.diag(np.diag(A))))


def quadratic_problem(A, shift=None) -> ObjectiveProblem:
    """F(x) = 1/2 <A(x - x*), x - x*> for symmetric positive definite ``A``.

    ``A`` may be given as a 1-d array of diagonal entries.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ValueError("A must be symmetric")
    d = A.shape[0]
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 0:
        raise ValueError("A must be positive definite")
    xs = np.zeros(d) if shift is None else np.asarray(shift, dtype=float).reshape(d)
    A = A.copy()
    A.setflags(write=False)
    xs.setflags(write=False)

    def f(x):
        y = np.asarray(x, dtype=float) - xs
        return 0.5 * np.einsum("...i,...i->...", y @ A, y)

    def grad(x):
        return (np.asarray(x, dtype=float) - xs) @ A

    def hess_vec(x, k):
        k = np.asarray(k, dtype=float)
        out = k @ A
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(x), out.shape)).copy()

    def third_vec(x, u, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(v)))

    return ObjectiveProblem(
        dim=d, eval=f, grad=grad, hess_vec=hess_vec, minimizer=xs,
        mu=float(eig[0]), lip=float(eig[-1]), third_vec=third_vec, matrix=A,
        kind="quadratic",
        params={"diag": np.diag(A).tolist() if np.all(A == np.diag(np.diag(A))) else None,
                "shift": xs.tolist()},
    )


# Convexity with mu = 2 - eps is guaranteed for eps below this value.
PERTURBATION_THRESHOLD = 1.0


def perturbed_quadratic_problem(dim: int, epsilon: float) -> ObjectiveProblem:
    """F(x) = ||x||^2 + eps * sum_i cos(x_i).

    The Hessian is 2I - eps*diag(cos x), so for ``0 <= eps < 2`` the problem is
    (2 - eps)-convex with gradient Lipschitz constant 2 + eps and minimizer 0.
    Larger ``eps`` produces a non-convex objective; the declared constants are
    then only nominal and :func:`check_assumptions` reports the violation.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    eps = float(epsilon)
    xs = np.zeros(dim)
    xs.setflags(write=False)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1) + eps * np.sum(np.cos(x), axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x - eps * np.sin(x)

    def hess_vec(x, k):
        x = np.asarray(x, dtype=float)
        return (2.0 - eps * np.cos(x)) * np.asarray(k, dtype=float)

    def third_vec(x, u, v):
        x = np.asarray(x, dtype=float)
        return eps * np.sin(x) * np.asarray(u, dtype=float) * np.asarray(v, dtype=float)

    mu = 2.0 - eps if eps < 2.0 else 1e-12
    return ObjectiveProblem(
        dim=dim, eval=f, grad=grad, hess_vec=hess_vec, minimizer=xs,
        mu=mu, lip=2.0 + eps, third_vec=third_vec, kind="perturbed_quadratic",
        params={"dim": dim, "epsilon": eps},
    )


def hessian(p: ObjectiveProblem, x) -> Array:
    """Dense Hessian(s) assembled from ``hess_vec``; shape ``(..., d, d)``."""
    x = np.asarray(x, dtype=float)
    if p.matrix is not None:
        return np.broadcast_to(p.matrix, x.shape[:-1] + (p.dim, p.dim)).copy()
    eye = np.eye(p.dim)
    cols = [p.hess_vec(x, np.broadcast_to(eye[j], x.shape)) for j in range(p.dim)]
    return np.stack(cols, axis=-1)


def modified_objective(p: ObjectiveProblem, h: float, x) -> Array:
    """F^h(x) = F(x) + (h/4) ||grad F(x)||^2."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    g = p.grad(x)
    return p.eval(x) + 0.25 * h * np.sum(g * g, axis=-1)


def modified_gradient(p: ObjectiveProblem, h: float, x) -> Array:
    """grad F^h(x) = (I + (h/2) Hess F(x)) grad F(x)."""
    if h < 0:
        raise ValueError("h must be nonnegative")
    g = p.grad(x)
    return g + 0.5 * h * p.hess_vec(x, g)


def modified_hess_vec(p: ObjectiveProblem, h: float, x, k) -> Array:
    """Hess F^h(x) k = H k + (h/2) (H H k + D^3F(x).(grad F(x), k))."""
    Hk = p.hess_vec(x, k)
    if h == 0:
        return Hk
    g = p.grad(x)
    if p.third_vec is not None:
        t = p.third_vec(x, g, k)
    else:
        # central difference of hess_vec(., g) along k
        k = np.asarray(k, dtype=float)
        nk = np.linalg.norm(k, axis=-1, keepdims=True)
        s = 1e-5 / np.where(nk > 0, nk, 1.0)
        x = np.asarray(x, dtype=float)
        t = (p.hess_vec(x + s * k, g) - p.hess_vec(x - s * k, g)) / (2 * s)
    return Hk + 0.5 * h * (p.hess_vec(x, Hk) + t)


def alternative_modified_drift(p: ObjectiveProblem, h: float, x, variant: str) -> Array:
    """The two non-gradient second-order drifts.

    ``resolvent``:   -(I - (h/2) Hess F(x))^{-1} grad F(x), requires h * L_F < 2.
    ``exponential``: -exp((h/2) Hess F(x)) grad F(x).
    """
    if h < 0:
        raise ValueError("h must be nonnegative")
    x = np.asarray(x, dtype=float)
    g = p.grad(x)
    H = hessian(p, x)
    if variant == "resolvent":
        if h * p.lip >= 2.0:
            raise SingularHessianResolvent(
                f"resolvent drift needs h*L_F < 2, got h={h}, L_F={p.lip}")
        M = np.eye(p.dim) - 0.5 * h * H
        try:
            return -np.linalg.solve(M, g[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularHessianResolvent(str(exc)) from exc
    if variant == "exponential":
        w, V = np.linalg.eigh(H)
        c = np.einsum("...ji,...j->...i", V, g)
        return -np.einsum("...ij,...j->...i", V, np.exp(0.5 * h * w) * c)
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class AssumptionReport:
    radius: float
    sample_count: int
    lip_observed: float
    mu_observed: float
    modified_mu_observed: dict
    lip_ok: bool
    mu_ok: bool
    modified_ok: dict
    optimality_residual: float
    optimality_ok: bool

    @property
    def passed(self) -> bool:
        return (self.lip_ok and self.mu_ok and self.optimality_ok
                and all(self.modified_ok.values()))

    def rows(self):
        """(name, observed, passed) triples for tabular display."""
        out = [
            ("optimality", self.optimality_residual, self.optimality_ok),
            ("lipschitz", self.lip_observed, self.lip_ok),
            ("mu_convexity", self.mu_observed, self.mu_ok),
        ]
        for h, v in self.modified_mu_observed.items():
            out.append((f"modified_mu_convexity[h={h:g}]", v, self.modified_ok[h]))
        return out


def _pair_ratios(grad, x1, x2):
    dx = x2 - x1
    dg = grad(x2) - grad(x1)
    n2 = np.sum(dx * dx, axis=-1)
    keep = n2 > 0
    return (np.sum(dg * dx, axis=-1)[keep] / n2[keep],
            np.linalg.norm(dg, axis=-1)[keep] / np.sqrt(n2[keep]))


def check_assumptions(p: ObjectiveProblem, h_grid, sample_count: int = 2000,
                      seed=0, radius: float = 10.0, tol: float = 1e-10) -> AssumptionReport:
    """Sampled falsification of the Lipschitz and convexity conditions.

    Pairs are drawn uniformly in the box ``x* + [-radius, radius]^d``; half of
    them are far pairs and half are near pairs (separation ~1e-3 radius) that
    probe the local curvature. The convexity of F^h is reported for every h;
    it passes when the observed constant is positive.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    rng = np.random.default_rng(seed)
    d = p.dim
    xs = np.asarray(p.minimizer, dtype=float)
    x1 = xs + rng.uniform(-radius, radius, size=(sample_count, d))
    x2 = xs + rng.uniform(-radius, radius, size=(sample_count, d))
    near = x1 + 1e-3 * radius * rng.standard_normal((sample_count, d))
    a = np.concatenate([x1, x1])
    b = np.concatenate([x2, near])

    conv, lips = _pair_ratios(p.grad, a, b)
    mu_obs = float(conv.min())
    lip_obs = float(lips.max())

    mod_obs, mod_ok = {}, {}
    for h in h_grid:
        h = float(h)
        c, _ = _pair_ratios(lambda x: modified_gradient(p, h, x), a, b)
        mod_obs[h] = float(c.min())
        mod_ok[h] = bool(mod_obs[h] > 0)

    res = float(np.linalg.norm(p.grad(xs)))
    return AssumptionReport(
        radius=radius, sample_count=sample_count,
        lip_observed=lip_obs, mu_observed=mu_obs,
        modified_mu_observed=mod_obs,
        lip_ok=lip_obs <= p.lip + tol, mu_ok=mu_obs >= p.mu - tol,
        modified_ok=mod_ok, optimality_residual=res,
        optimality_ok=res <= 1e-12 * (1 + np.linalg.norm(xs)),
    )
