"""Continuous-time reference dynamics.

* the gradient flow dx/dt = -grad F(x) and its tangent process,
* the SDEs dY = -D(Y) dt + sqrt(h) sigma(t, Y) dB with drift field D one of
  grad F (``plain``), grad F^h (``modified``) or the two non-gradient
  alternatives (``resolvent``, ``exponential``),
* the first-variation process of the SDE.

SDEs are integrated by Euler-Maruyama on a fine grid of step h/S whose
increments are drawn from the same block streams as the scheme, so a scheme
path and an SDE path with the same seed are driven by one Brownian path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .diffusion import DiffusionSpec, sigma_apply
from .errors import NonFiniteState, ToleranceNotMet
from .objective import (ObjectiveProblem, alternative_modified_drift, modified_gradient,
                        modified_hess_vec)
from .scheme import SchemeConfig
from .streams import INDEPENDENT_TAG, block_rng, map_blocks

DRIFTS = ("plain", "modified", "resolvent", "exponential")


@dataclass
class OdeSolution:
    state: np.ndarray
    T: float
    steps: int = 0
    nfev: int = 0
    method: str = "exact"


@dataclass
class SdePathSet:
    terminal: np.ndarray
    checkpoints: dict = field(default_factory=dict)
    drift: str = "plain"
    h: float = 0.0
    fine_substeps: int = 1
    seed: int = 0
    stream: int = 0
    method: str = "euler"

    @property
    def coupling_tag(self):
        """Scheme paths with this (seed, stream) share the Brownian increments."""
        return (self.seed, self.stream)


# --- deterministic flows ----------------------------------------------------

def _expm_sym(A, t):
    w, V = np.linalg.eigh(A)
    return (V * np.exp(-w * t)) @ V.T


def _solve(rhs, y0, T, tol):
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=tol, atol=tol)
    if sol.status != 0:
        raise ToleranceNotMet(sol.message)
    return sol


def gradient_flow(p: ObjectiveProblem, x0, T: float, tol: float = 1e-10,
                  method: str = "auto") -> OdeSolution:
    """Solve dx/dt = -grad F(x), x(0) = x0, up to time T.

    ``auto`` uses the matrix exponential for quadratic problems and an
    embedded Runge-Kutta 8(5,3) pair otherwise.
    """
    if T < 0 or not tol > 0:
        raise ValueError("need T >= 0 and tol > 0")
    x0 = np.asarray(x0, dtype=float)
    if T == 0:
        return OdeSolution(state=x0.copy(), T=0.0, method="trivial")
    if method == "auto":
        method = "exact" if p.is_quadratic else "rk"
    if method == "exact":
        xs = p.minimizer
        return OdeSolution(state=xs + _expm_sym(p.matrix, T) @ (x0 - xs), T=T)
    sol = _solve(lambda t, x: -p.grad(x), x0, T, tol)
    return OdeSolution(state=sol.y[:, -1], T=T, steps=sol.t.size - 1, nfev=sol.nfev,
                       method="DOP853")


def tangent_ode(p: ObjectiveProblem, x0, k, T: float, tol: float = 1e-10,
                method: str = "auto"):
    """eta(T) for d eta/dt = -Hess F(X(t)) eta, eta(0) = k, along the gradient flow."""
    if T < 0 or not tol > 0:
        raise ValueError("need T >= 0 and tol > 0")
    k = np.asarray(k, dtype=float)
    if T == 0:
        return k.copy()
    if method == "auto":
        method = "exact" if p.is_quadratic else "rk"
    if method == "exact":
        return _expm_sym(p.matrix, T) @ k
    d = p.dim

    def rhs(t, z):
        x, eta = z[:d], z[d:]
        return np.concatenate([-p.grad(x), -p.hess_vec(x, eta)])

    sol = _solve(rhs, np.concatenate([np.asarray(x0, float), k]), T, tol)
    return sol.y[d:, -1]


# --- drift fields -----------------------------------------------------------

def drift_field(p: ObjectiveProblem, kind: str, h: float):
    """D with dY = -D(Y) dt + ...; D(x*) = 0 for every kind."""
    if kind == "plain":
        return p.grad
    if kind == "modified":
        return lambda x: modified_gradient(p, h, x)
    if kind in ("resolvent", "exponential"):
        return lambda x: -alternative_modified_drift(p, h, x, kind)
    raise ValueError(f"unknown drift {kind!r}")


def linear_drift_rates(lam, kind: str, h: float):
    """Per-eigenvalue rate beta with D(x) = beta (x - x*) for diagonal quadratics."""
    lam = np.asarray(lam, dtype=float)
    if kind == "plain":
        return lam.copy()
    if kind == "modified":
        return lam + 0.5 * h * lam * lam
    if kind == "resolvent":
        return lam / (1 - 0.5 * h * lam)
    if kind == "exponential":
        return lam * np.exp(0.5 * h * lam)
    raise ValueError(f"unknown drift {kind!r}")


def _linear_case(p: ObjectiveProblem, spec: Optional[DiffusionSpec]) -> bool:
    return p.is_diagonal_quadratic and (spec is None or not spec.state_dependent)


def _noise_scale(spec: Optional[DiffusionSpec], d: int):
    if spec is None:
        return np.zeros(d)
    if spec.shape == "diagonal":
        return spec.base.copy()
    return np.ones(d)


def _check_grid(h, T):
    N = int(round(T / h))
    if abs(N * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of h={h}")
    return N


def _check_finite(y, step, offset):
    if not np.all(np.isfinite(y)):
        bad = int(np.argmin(np.all(np.isfinite(y), axis=1)))
        raise NonFiniteState(f"non-finite SDE state at coarse step {step} (path {offset + bad})",
                             step=step, path=offset + bad)


# --- Euler-Maruyama on the fine grid ---------------------------------------

def _euler_block(p, spec, D, h, S, N, x0, rng, B, offset, coupled=False, checkpoints=()):
    """Fine Euler paths for B paths; with ``coupled`` the scheme runs alongside
    on the aggregated increments. Returns (Y_N, X_N or None, checkpoint dict)."""
    d = p.dim
    delta = h / S
    c = math.sqrt(h * delta)
    rs = math.sqrt(S)
    y = np.broadcast_to(x0, (B, d)).copy()
    x = y.copy() if coupled else None
    saved = {0: y.copy()} if 0 in checkpoints else {}
    for n in range(N):
        z = rng.standard_normal((S, B, d))
        if coupled:
            t_n = n * h
            gamma = z.sum(axis=0) / rs
            x = x - h * p.grad(x) if spec is None else \
                x - h * p.grad(x) + h * sigma_apply(spec, t_n, x, gamma)
            _check_finite(x, n + 1, offset)
        for j in range(S):
            if spec is None:
                y = y - delta * D(y)
            else:
                y = y - delta * D(y) + c * sigma_apply(spec, (n * S + j) * delta, y, z[j])
        _check_finite(y, n + 1, offset)
        if n + 1 in checkpoints:
            saved[n + 1] = y.copy()
    return y, x, saved


# --- exact aggregation of the fine Euler grid (linear, additive noise) ------

def _aggregated_coefficients(p, spec, kind, h, S, N):
    """Per coarse step and component: contraction P, noise variance V and the
    covariance C of the noise with the coarse increment dB_n.

    Over one coarse step the fine Euler recursion with rate beta is
    Y_{n+1} - x* = r^S (Y_n - x*) + sum_j r^(S-1-j) s_j dW_j, r = 1 - delta beta,
    s_j = sqrt(h) env(t_n + j delta) b, and dB_n = sum_j dW_j.
    """
    lam = np.diag(p.matrix)
    beta = linear_drift_rates(lam, kind, h)
    delta = h / S
    r = 1.0 - delta * beta                                  # (d,)
    P = r ** S
    b = _noise_scale(spec, p.dim)
    w = r[None, :] ** np.arange(S - 1, -1, -1)[:, None]     # (S, d)
    if spec is None:
        env = np.zeros((N, S))
    else:
        env = spec.envelope(delta * (np.arange(N)[:, None] * S + np.arange(S)[None, :]))
    s = math.sqrt(h) * env[:, :, None] * b[None, None, :]   # (N, S, d)
    V = delta * np.einsum("sd,nsd->nd", w * w, s * s)
    C = delta * np.einsum("sd,nsd->nd", w, s)
    return P, V, C


def _aggregated_block(p, spec, kind, h, S, N, x0, rng, B, coef, coupled=False,
                      checkpoints=()):
    P, V, C = coef
    d = p.dim
    xs = p.minimizer
    sh = math.sqrt(h)
    a1 = C / sh                                             # coefficient of xi_1
    a2 = np.sqrt(np.maximum(V - C * C / h, 0.0))            # of xi_2
    y = np.broadcast_to(np.asarray(x0, float) - xs, (B, d)).copy()
    x = np.broadcast_to(x0, (B, d)).copy() if coupled else None
    saved = {0: y + xs} if 0 in checkpoints else {}
    for n in range(N):
        xi = rng.standard_normal((2, B, d))
        if coupled:
            x = x - h * p.grad(x) if spec is None else \
                x - h * p.grad(x) + h * sigma_apply(spec, n * h, x, xi[0])
        y = P * y + a1[n] * xi[0] + a2[n] * xi[1]
        if n + 1 in checkpoints:
            saved[n + 1] = y + xs
    return y + xs, x, saved


def _resolve_method(method, p, spec):
    if method == "auto":
        return "aggregated" if _linear_case(p, spec) else "euler"
    if method == "aggregated" and not _linear_case(p, spec):
        raise ValueError("aggregated method needs a diagonal quadratic and "
                         "state-independent diffusion")
    if method not in ("euler", "aggregated"):
        raise ValueError(f"unknown method {method!r}")
    return method


def _simulate(p, spec, drift, h, x0, N, S, M, seed, stream, workers, method,
              coupled, checkpoints=()):
    if drift not in DRIFTS:
        raise ValueError(f"unknown drift {drift!r}")
    if S < 1:
        raise ValueError("fine_substeps must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(p.dim)
    method = _resolve_method(method, p, spec)
    cps = frozenset(int(c) for c in checkpoints)
    if method == "aggregated":
        coef = _aggregated_coefficients(p, spec, drift, h, S, N)

        def work(b, start, stop):
            rng = block_rng(seed, stream, b)
            return _aggregated_block(p, spec, drift, h, S, N, x0, rng, stop - start, coef,
                                     coupled, cps)
    else:
        D = drift_field(p, drift, h)

        def work(b, start, stop):
            rng = block_rng(seed, stream, b)
            return _euler_block(p, spec, D, h, S, N, x0, rng, stop - start, start,
                                coupled, cps)

    parts = map_blocks(work, M, workers)
    Y = np.concatenate([y for y, _, _ in parts])
    X = np.concatenate([x for _, x, _ in parts]) if coupled else None
    saved = {c: np.concatenate([s[c] for _, _, s in parts]) for c in sorted(cps)}
    return Y, X, saved, method


def simulate_sde(p: ObjectiveProblem, spec: Optional[DiffusionSpec], drift: str, h: float,
                 x0, T: float, fine_substeps: int = 1, ensemble: int = 1, seed: int = 0,
                 stream: int = 0, workers=None, method: str = "auto",
                 checkpoints: Sequence[int] = ()) -> SdePathSet:
    """Terminal states of ``ensemble`` paths of dY = -D(Y) dt + sqrt(h) sigma dB.

    ``checkpoints`` are coarse step indices (times n h) at which states are kept.
    ``method="aggregated"`` samples the fine Euler chain exactly in law through
    its per-step Gaussian transition; it needs a diagonal quadratic and a
    state-independent diffusion and is what ``auto`` picks in that case.
    """
    N = _check_grid(h, T)
    Y, _, saved, method = _simulate(p, spec, drift, h, x0, N, fine_substeps, ensemble,
                                    seed, stream, workers, method, False, checkpoints)
    return SdePathSet(terminal=Y, checkpoints=saved, drift=drift, h=h,
                      fine_substeps=fine_substeps, seed=seed, stream=stream, method=method)


def simulate_coupled(p: ObjectiveProblem, spec: Optional[DiffusionSpec], drift: str,
                     cfg: SchemeConfig, fine_substeps: int, M: int, workers=None,
                     method: str = "auto"):
    """Scheme and SDE driven by common Brownian increments.

    Returns ``(X_N, Y_N)``, each of shape (M, d). With ``method="euler"`` the
    scheme half is bit-identical to :func:`modeq.scheme.simulate_scheme` run in
    ``brownian_increments`` mode with the same seed, stream and substeps.
    """
    Y, X, _, _ = _simulate(p, spec, drift, cfg.h, cfg.x0, cfg.n_steps, fine_substeps, M,
                           cfg.seed, cfg.stream, workers, method, True)
    return X, Y


def simulate_independent(p, spec, drift, cfg: SchemeConfig, fine_substeps, M, workers=None,
                         method="auto") -> SdePathSet:
    """SDE ensemble on a stream disjoint from the scheme's (no coupling)."""
    return simulate_sde(p, spec, drift, cfg.h, cfg.x0, cfg.horizon, fine_substeps, M,
                        cfg.seed, INDEPENDENT_TAG + cfg.stream, workers, method)


# --- first variation of the SDE ---------------------------------------------

@dataclass
class TangentMoments:
    second: float           # E||eta(T)||^2
    second_se: float
    fourth: float           # E||eta(T)||^4
    fourth_se: float
    M: int
    method: str


def _tangent_block(p, spec, drift, h, S, N, x0, k, rng, B, offset):
    d = p.dim
    delta = h / S
    c = math.sqrt(h * delta)
    D = drift_field(p, drift, h)
    if drift == "plain":
        DD = p.hess_vec
    else:
        DD = lambda x, v: modified_hess_vec(p, h, x, v)
    y = np.broadcast_to(x0, (B, d)).copy()
    eta = np.broadcast_to(k, (B, d)).copy()
    for n in range(N):
        z = rng.standard_normal((S, B, d))
        for j in range(S):
            t = (n * S + j) * delta
            deta = -delta * DD(y, eta)
            if spec is None:
                y = y - delta * D(y)
            else:
                deta = deta + c * spec.derivative_apply(t, y, eta, z[j])
                y = y - delta * D(y) + c * sigma_apply(spec, t, y, z[j])
            eta = eta + deta
        _check_finite(y, n + 1, offset)
        _check_finite(eta, n + 1, offset)
    return eta


def tangent_sde(p: ObjectiveProblem, spec: Optional[DiffusionSpec], h: float, x0, k,
                T: float, fine_substeps: int = 64, ensemble: int = 1000, seed: int = 0,
                drift: str = "modified", stream: int = 0, workers=None,
                method: str = "auto") -> TangentMoments:
    """Monte Carlo moments of the first variation eta(T) of Y with eta(0) = k.

    d eta = -Hess F^h(Y) eta ds + sqrt(h) (D sigma(s, Y).eta) dB.
    For quadratics with state-independent diffusion eta is deterministic,
    exp(-Hess F^h T) k, and ``auto`` returns it exactly.
    """
    if drift not in ("plain", "modified"):
        raise ValueError("tangent processes are available for plain and modified drifts")
    N = _check_grid(h, T)
    k = np.asarray(k, dtype=float).reshape(p.dim)
    x0 = np.asarray(x0, dtype=float).reshape(p.dim)
    exact_ok = p.is_quadratic and (spec is None or not spec.state_dependent)
    if method == "auto":
        method = "exact" if exact_ok else "euler"
    if method == "exact":
        if not exact_ok:
            raise ValueError("exact tangent needs a quadratic and state-independent diffusion")
        A = p.matrix
        B = A if drift == "plain" else A + 0.5 * h * A @ A
        eta = _expm_sym(B, T) @ k
        n2 = float(eta @ eta)
        return TangentMoments(n2, 0.0, n2 * n2, 0.0, ensemble, "exact")

    def work(b, start, stop):
        rng = block_rng(seed, stream, b)
        return _tangent_block(p, spec, drift, h, fine_substeps, N, x0, k, rng,
                              stop - start, start)

    eta = np.concatenate(map_blocks(work, ensemble, workers))
    n2 = np.sum(eta * eta, axis=1)
    n4 = n2 * n2
    M = ensemble
    se = lambda v: float(v.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return TangentMoments(float(n2.mean()), se(n2), float(n4.mean()), se(n4), M, "euler")


# --- uniform moment bound for Y^h ---------------------------------------------

@dataclass
class MomentBoundCheck:
    C: float
    rows: list          # (T, h, estimate, std_error, bound, held_out, ok)
    passed: bool


def moment_bound_check(p: ObjectiveProblem, spec: Optional[DiffusionSpec], x0, T_grid,
                       h_grid, M: int = 10000, fine_substeps: int = 64, seed: int = 0,
                       drift: str = "modified", workers=None,
                       method: str = "auto") -> MomentBoundCheck:
    """E||Y^h(T) - x*||^2 <= C exp(-2 mu T)(r0^2 + h rho(T)(1 + r0^2)) on a (T, h) grid.

    C is fitted as the largest ratio over the shorter half of ``T_grid`` and
    the bound is then tested, with a 4 standard error margin, on the longer
    half.
    """
    from .diffusion import rho_decay_factor

    T_grid = sorted(float(t) for t in T_grid)
    if len(T_grid) < 2:
        raise ValueError("need at least two horizons")
    r2 = float(np.sum((np.asarray(x0, float) - p.minimizer) ** 2))
    cut = len(T_grid) // 2
    raw = []
    stream = 0
    for i, T in enumerate(T_grid):
        for h in h_grid:
            h = float(h)
            Y = simulate_sde(p, spec, drift, h, x0, T, fine_substeps, M, seed, stream,
                             workers, method).terminal
            stream += 1
            d2 = np.sum((Y - p.minimizer) ** 2, axis=1)
            est = float(d2.mean())
            se = float(d2.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
            noise = 0.0 if spec is None else rho_decay_factor(spec.envelope, p.mu, T)
            bound = math.exp(-2 * p.mu * T) * r2 + h * noise * (1 + r2)
            raw.append((T, h, est, se, bound, i >= cut))
    C = max(est / b for _, _, est, _, b, held in raw if not held and b > 0)
    rows = [(T, h, est, se, b, held, (not held) or est - 4 * se <= C * b)
            for T, h, est, se, b, held in raw]
    return MomentBoundCheck(C, rows, all(r[-1] for r in rows))
