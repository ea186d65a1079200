"""The stochastic gradient scheme X_{n+1} = X_n - h grad F(X_n) + h sigma(t_n, X_n) gamma_{n+1}."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffusion import DiffusionSpec, sigma_apply
from .errors import IncrementsNotRetained, NonFiniteState
from .objective import ObjectiveProblem
from .streams import BRIDGE_TAG, block_rng, keyed_rng, map_blocks

NOISE_MODES = ("gaussian_iid", "brownian_increments")


class StepSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SchemeConfig:
    h: float
    n_steps: int
    x0: np.ndarray
    seed: int = 0
    noise_mode: str = "gaussian_iid"
    substeps_per_step: int = 1
    stream: int = 0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.substeps_per_step < 1:
            raise ValueError("substeps_per_step must be >= 1")
        if self.noise_mode == "gaussian_iid" and self.substeps_per_step != 1:
            raise ValueError("gaussian_iid mode uses one draw per step")
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.h


@dataclass
class PathRecord:
    states: np.ndarray                  # (N+1, d)
    times: np.ndarray                   # (N+1,)
    h: float
    seed: int
    stream: int = 0
    increments: Optional[np.ndarray] = None   # (N, S, d) unit normals

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


@dataclass
class SchemeEnsemble:
    terminal: np.ndarray                        # (M, d)
    checkpoints: dict = field(default_factory=dict)   # n -> (M, d)
    config: Optional[SchemeConfig] = None


def step_size_bound(p: ObjectiveProblem, spec: Optional[DiffusionSpec]) -> float:
    """min(1/(2 mu), 2 mu / (L_F^2 + 2 s^2)) with s the sup of the growth envelope.

    Below this value the contraction factor of the second-moment recursion
    stays in (0, 1).
    """
    s = 0.0 if spec is None else spec.growth_constant * spec.envelope.sup
    return min(1.0 / (2 * p.mu), 2 * p.mu / (p.lip ** 2 + 2 * s ** 2))


def h1_threshold(p: ObjectiveProblem, spec: Optional[DiffusionSpec], h_max=math.inf) -> float:
    """H_1 = 1/2 min(1/(2 mu), 2 mu/(L_F^2 + 2 s^2), h_max)."""
    return 0.5 * min(step_size_bound(p, spec), h_max)


def check_step_size(p, spec, h, moment_order: int = 1) -> bool:
    """Warn if h is outside the range where uniform moment bounds are known."""
    ok = h < step_size_bound(p, spec)
    if not ok:
        warnings.warn(f"h={h} exceeds the uniform moment-bound threshold "
                      f"{step_size_bound(p, spec):.6g}", StepSizeWarning, stacklevel=3)
    if moment_order >= 2:
        warnings.warn("thresholds for moments of order >= 2 are not explicit; "
                      "only H_1 is checked", StepSizeWarning, stacklevel=3)
    return ok


def scheme_step(p: ObjectiveProblem, spec: Optional[DiffusionSpec], x, t_n: float,
                h: float, gamma):
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    out = x - h * p.grad(x)
    if spec is not None:
        out = out + h * sigma_apply(spec, t_n, x, gamma)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state at t={t_n}")
    return out


def _draw(rng, cfg: SchemeConfig, B: int, d: int):
    """Unit normals for one step, shape (S, B, d), and the aggregated gamma."""
    S = cfg.substeps_per_step
    if cfg.noise_mode == "gaussian_iid":
        g = rng.standard_normal((B, d))
        return g[None], g
    z = rng.standard_normal((S, B, d))
    # gamma = h^{-1/2} sum_j dB_j with dB_j = sqrt(h/S) z_j
    return z, z.sum(axis=0) / math.sqrt(S)


def _run_block(p, spec, cfg: SchemeConfig, rng, B, checkpoints=(), retain=False,
               offset=0):
    d = p.dim
    x = np.broadcast_to(cfg.x0, (B, d)).copy()
    h = cfg.h
    saved = {0: x.copy()} if 0 in checkpoints else {}
    incs = np.empty((cfg.n_steps, cfg.substeps_per_step, B, d)) if retain else None
    traj = [x.copy()] if retain else None
    for n in range(cfg.n_steps):
        z, gamma = _draw(rng, cfg, B, d)
        t_n = n * h
        x = x - h * p.grad(x) if spec is None else \
            x - h * p.grad(x) + h * sigma_apply(spec, t_n, x, gamma)
        if not np.all(np.isfinite(x)):
            bad = int(np.argmin(np.all(np.isfinite(x), axis=1)))
            raise NonFiniteState(f"non-finite state at step {n + 1} (path {offset + bad})",
                                 step=n + 1, path=offset + bad)
        if retain:
            incs[n] = z
            traj.append(x.copy())
        if n + 1 in checkpoints:
            saved[n + 1] = x.copy()
    return x, saved, incs, traj


def run_scheme(p: ObjectiveProblem, spec: Optional[DiffusionSpec], cfg: SchemeConfig,
               retain_increments: Optional[bool] = None) -> PathRecord:
    """Iterate the scheme for one path (path 0 of block 0 of the configured stream)."""
    if cfg.x0.shape != (p.dim,):
        raise ValueError("x0 has wrong dimension")
    if retain_increments is None:
        retain_increments = cfg.substeps_per_step > 1
    rng = block_rng(cfg.seed, cfg.stream, 0)
    _, _, incs, traj = _run_block(p, spec, cfg, rng, 1, retain=True)
    states = np.array([s[0] for s in traj])
    return PathRecord(
        states=states, times=cfg.h * np.arange(cfg.n_steps + 1), h=cfg.h,
        seed=cfg.seed, stream=cfg.stream,
        increments=incs[:, :, 0, :].copy() if retain_increments else None,
    )


def simulate_scheme(p: ObjectiveProblem, spec: Optional[DiffusionSpec], cfg: SchemeConfig,
                    M: int, checkpoints: Sequence[int] = (), workers=None) -> SchemeEnsemble:
    """M independent paths; terminal states and optional checkpoint states."""
    if cfg.x0.shape != (p.dim,):
        raise ValueError("x0 has wrong dimension")
    cps = frozenset(int(c) for c in checkpoints)
    if any(c < 0 or c > cfg.n_steps for c in cps):
        raise ValueError("checkpoints must lie in [0, n_steps]")

    def work(b, start, stop):
        rng = block_rng(cfg.seed, cfg.stream, b)
        x, saved, _, _ = _run_block(p, spec, cfg, rng, stop - start, cps, offset=start)
        return x, saved

    parts = map_blocks(work, M, workers)
    terminal = np.concatenate([x for x, _ in parts])
    saved = {c: np.concatenate([s[c] for _, s in parts]) for c in sorted(cps)}
    return SchemeEnsemble(terminal=terminal, checkpoints=saved, config=cfg)


def interpolate_tilde(p: ObjectiveProblem, spec: Optional[DiffusionSpec], path: PathRecord,
                      t: float):
    """X_n - grad F(X_n)(t - t_n) + sqrt(h) sigma(t_n, X_n)(B(t) - B(t_n)).

    B is rebuilt from the stored fine increments; inside a fine interval the
    Brownian bridge is sampled from a stream keyed by the path's seed and the
    interval index, so repeated queries are reproducible.
    """
    if path.increments is None:
        raise IncrementsNotRetained("path was simulated without retained increments")
    h = path.h
    N = path.n_steps
    if not 0 <= t <= N * h * (1 + 1e-14):
        raise ValueError("t outside [0, N h]")
    n = int(round(t / h))
    if abs(t - n * h) <= 1e-12 * max(1.0, t):
        return path.states[n].copy()
    n = min(int(math.floor(t / h)), N - 1)
    tau = t - n * h
    S = path.increments.shape[1]
    delta = h / S
    j = min(int(math.floor(tau / delta)), S - 1)
    r = tau - j * delta
    z = path.increments[n]
    dB = math.sqrt(delta) * z[:j].sum(axis=0)
    end = math.sqrt(delta) * z[j]
    xi = keyed_rng(path.seed, path.stream, BRIDGE_TAG, n, j).standard_normal(p.dim)
    dB = dB + (r / delta) * end + math.sqrt(max(r * (delta - r) / delta, 0.0)) * xi
    x_n = path.states[n]
    out = x_n - p.grad(x_n) * tau
    if spec is not None:
        out = out + math.sqrt(h) * sigma_apply(spec, n * h, x_n, dB)
    return out


def quadratic_second_moment_recursion(A_diag, sigma0: float, h: float, N: int, x0,
                                      shift=None) -> np.ndarray:
    """Exact E||X_n - x*||^2, n = 0..N, for diagonal quadratics with sigma = sigma0 I.

    Per eigenvalue: m_{n+1} = (1 - h lam)^2 m_n + h^2 sigma0^2.
    """
    lam = np.atleast_1d(np.asarray(A_diag, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if shift is not None:
        x0 = x0 - np.asarray(shift, dtype=float)
    m = x0 ** 2 * np.ones_like(lam)
    a = (1 - h * lam) ** 2
    b = h * h * sigma0 * sigma0
    out = np.empty(N + 1)
    out[0] = m.sum()
    for n in range(N):
        m = a * m + b
        out[n + 1] = m.sum()
    return out
