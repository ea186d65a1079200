"""Monte Carlo estimators of weak and strong errors, and convergence-order fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffusion import DiffusionSpec
from .errors import DegenerateFit
from .flows import gradient_flow, simulate_coupled, simulate_independent
from .objective import ObjectiveProblem
from .scheme import SchemeConfig, simulate_scheme

TARGETS = ("vs_minimizer", "vs_ode", "vs_modified_sde", "vs_plain_sde")
CSV_COLUMNS = ("target", "phi", "h", "N", "T", "M", "estimate", "std_error", "coupled", "seed")
MIN_REFERENCE_SUBSTEPS = 256


@dataclass(frozen=True)
class TestFunction:
    """phi(x): ``objective_residual`` F(x), ``quadratic_form`` <Q(x-x*), x-x*>,
    or ``smooth_bounded`` sum_i sin(x_i - x*_i)."""

    __test__ = False  # not a pytest class

    kind: str = "objective_residual"
    Q: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("objective_residual", "quadratic_form", "smooth_bounded"):
            raise ValueError(f"unknown test function {self.kind!r}")
        if self.Q is not None:
            Q = np.asarray(self.Q, dtype=float)
            object.__setattr__(self, "Q", np.diag(Q) if Q.ndim == 1 else Q)

    @property
    def name(self) -> str:
        return self.kind

    def evaluate(self, p: ObjectiveProblem, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "objective_residual":
            return p.eval(x)
        y = x - p.minimizer
        if self.kind == "quadratic_form":
            Qy = y if self.Q is None else y @ self.Q.T
            return np.sum(Qy * y, axis=-1)
        return np.sum(np.sin(y), axis=-1)


@dataclass
class ErrorReport:
    estimate: float
    std_error: float
    M: int
    h: float
    N: int
    target: str
    coupled: bool = False
    phi: str = ""
    seed: int = 0
    signed: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return self.N * self.h

    @property
    def half_width(self) -> float:
        return 1.96 * self.std_error

    def csv_row(self):
        f = lambda v: format(float(v), ".17g")
        return [self.target, self.phi, f(self.h), str(self.N), f(self.T), str(self.M),
                f(self.estimate), f(self.std_error), "true" if self.coupled else "false",
                str(self.seed)]


def write_reports_csv(reports: Sequence[ErrorReport], fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    m = float(np.mean(v))
    if v.size < 2 or np.ptp(v) == 0:
        return m, 0.0
    se = float(np.std(v, ddof=1) / math.sqrt(v.size))
    return m, se


def _report(vals, cfg, target, phi, coupled=False, **extras):
    m, se = _mean_se(vals)
    return ErrorReport(estimate=abs(m), std_error=se, M=int(np.size(vals)), h=cfg.h,
                       N=cfg.n_steps, target=target, coupled=coupled,
                       phi=phi.name if phi is not None else "", seed=cfg.seed, signed=m,
                       extras=extras)


def _need(M, lo=100):
    if M < lo:
        raise ValueError(f"ensemble size must be >= {lo}")


def weak_error_vs_minimizer(p: ObjectiveProblem, spec: Optional[DiffusionSpec],
                            phi: TestFunction, cfg: SchemeConfig, M: int,
                            workers=None) -> ErrorReport:
    """|E phi(X_N) - phi(x*)|."""
    _need(M)
    X = simulate_scheme(p, spec, cfg, M, workers=workers).terminal
    ref = float(phi.evaluate(p, p.minimizer))
    return _report(phi.evaluate(p, X) - ref, cfg, "vs_minimizer", phi)


def weak_error_vs_ode(p: ObjectiveProblem, spec: Optional[DiffusionSpec], phi: TestFunction,
                      cfg: SchemeConfig, M: int, workers=None, tol: float = 1e-10) -> ErrorReport:
    """|E phi(X_N) - phi(X0(N h))| with X0 the gradient flow."""
    _need(M)
    X = simulate_scheme(p, spec, cfg, M, workers=workers).terminal
    ref = gradient_flow(p, cfg.x0, cfg.horizon, tol=tol).state
    return _report(phi.evaluate(p, X) - float(phi.evaluate(p, ref)), cfg, "vs_ode", phi,
                   reference=ref)


def _weak_error_vs_sde(p, spec, phi, cfg, M, S, coupled, drift, target, workers, method):
    _need(M)
    if S < MIN_REFERENCE_SUBSTEPS:
        raise ValueError(f"reference SDE needs at least {MIN_REFERENCE_SUBSTEPS} substeps")
    if coupled:
        X, Y = simulate_coupled(p, spec, drift, cfg, S, M, workers=workers, method=method)
        return _report(phi.evaluate(p, X) - phi.evaluate(p, Y), cfg, target, phi,
                       coupled=True, substeps=S)
    X = simulate_scheme(p, spec, cfg, M, workers=workers).terminal
    Y = simulate_independent(p, spec, drift, cfg, S, M, workers=workers,
                             method=method).terminal
    mx, sx = _mean_se(phi.evaluate(p, X))
    my, sy = _mean_se(phi.evaluate(p, Y))
    return ErrorReport(estimate=abs(mx - my), std_error=math.hypot(sx, sy), M=M, h=cfg.h,
                       N=cfg.n_steps, target=target, coupled=False, phi=phi.name,
                       seed=cfg.seed, signed=mx - my, extras={"substeps": S})


def weak_error_vs_modified_sde(p: ObjectiveProblem, spec: Optional[DiffusionSpec],
                               phi: TestFunction, cfg: SchemeConfig, M: int, S: int = 1024,
                               coupled: bool = True, drift: str = "modified", workers=None,
                               method: str = "auto") -> ErrorReport:
    """|E[phi(X_N) - phi(Y^h(N h))]| with Y^h the modified SDE on a fine grid h/S.

    With ``coupled`` the pathwise difference over common Brownian increments is
    averaged; otherwise two independent ensembles are compared.
    """
    return _weak_error_vs_sde(p, spec, phi, cfg, M, S, coupled, drift, "vs_modified_sde",
                              workers, method)


def weak_error_vs_plain_sde(p, spec, phi, cfg, M, S=1024, coupled=True, workers=None,
                            method="auto") -> ErrorReport:
    """As :func:`weak_error_vs_modified_sde` for the unmodified SDE."""
    return _weak_error_vs_sde(p, spec, phi, cfg, M, S, coupled, "plain", "vs_plain_sde",
                              workers, method)


def strong_error(p: ObjectiveProblem, spec: Optional[DiffusionSpec], cfg: SchemeConfig,
                 M: int, workers=None) -> ErrorReport:
    """(E||X_N - x*||^2)^(1/2), standard error by the delta method.

    ``extras`` also carries E||X_N - x*|| and the raw second moment.
    """
    _need(M)
    X = simulate_scheme(p, spec, cfg, M, workers=workers).terminal
    r2 = np.sum((X - p.minimizer) ** 2, axis=1)
    m2, se2 = _mean_se(r2)
    m1, se1 = _mean_se(np.sqrt(r2))
    est = math.sqrt(m2)
    se = se2 / (2 * est) if est > 0 else 0.0
    return ErrorReport(estimate=est, std_error=se, M=M, h=cfg.h, N=cfg.n_steps,
                       target="vs_minimizer", phi="strong", seed=cfg.seed, signed=est,
                       extras={"second_moment": m2, "second_moment_se": se2,
                               "mean_norm": m1, "mean_norm_se": se1})


def residual_error(p: ObjectiveProblem, spec: Optional[DiffusionSpec], cfg: SchemeConfig,
                   M: int, workers=None) -> ErrorReport:
    """E[F(X_N) - F(x*)].

    ``extras["gap"]`` is the paired estimate of E[F(X_N) - F* - mu/2 ||X_N - x*||^2],
    nonnegative for a mu-convex F.
    """
    _need(M)
    X = simulate_scheme(p, spec, cfg, M, workers=workers).terminal
    res = p.eval(X) - float(p.eval(p.minimizer))
    r2 = np.sum((X - p.minimizer) ** 2, axis=1)
    gap, gap_se = _mean_se(res - 0.5 * p.mu * r2)
    rep = _report(res, cfg, "vs_minimizer", TestFunction("objective_residual"))
    rep.extras.update(gap=gap, gap_se=gap_se)
    return rep


@dataclass
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    points: list


def fit_order(points, weights=None) -> OrderFit:
    """Least squares fit of log(error) = slope * log(h) + intercept."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise DegenerateFit(f"need at least 3 points, got {len(pts)}")
    h = np.array([a for a, _ in pts])
    e = np.array([b for _, b in pts])
    if np.any(h <= 0) or np.any(e <= 0):
        raise DegenerateFit("step sizes and errors must be positive")
    x, y = np.log(h), np.log(e)
    if np.ptp(x) == 0:
        raise DegenerateFit("all step sizes are equal")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    slope = np.sum(w * (x - xm) * (y - ym)) / np.sum(w * (x - xm) ** 2)
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_tot = np.sum(w * (y - ym) ** 2)
    r2 = 1.0 - np.sum(w * resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(intercept), float(r2), pts)


@dataclass
class SweepResult:
    reports: list
    fit: Optional[OrderFit]
    discarded: list = field(default_factory=list)


def _estimate(target, p, spec, phi, cfg, M, S, coupled, workers, method):
    if target == "vs_minimizer":
        return weak_error_vs_minimizer(p, spec, phi, cfg, M, workers)
    if target == "vs_ode":
        return weak_error_vs_ode(p, spec, phi, cfg, M, workers)
    if target == "vs_modified_sde":
        return weak_error_vs_modified_sde(p, spec, phi, cfg, M, S, coupled, workers=workers,
                                          method=method)
    if target == "vs_plain_sde":
        return weak_error_vs_plain_sde(p, spec, phi, cfg, M, S, coupled, workers=workers,
                                       method=method)
    raise ValueError(f"unknown target {target!r}")


def sweep(p: ObjectiveProblem, spec: Optional[DiffusionSpec], phi: TestFunction, h_grid,
          T: float, M: int, target: str, x0, seed: int = 0, S: int = 1024,
          coupled: bool = True, workers=None, method: str = "auto",
          fit: bool = True) -> SweepResult:
    """Run one estimator per step size at horizon ~T and fit the order.

    N = round(T / h), so every report carries its exact N h. Step size i uses
    stream i of the master seed. Points with error below 10 standard errors
    are left out of the fit.
    """
    h_grid = [float(h) for h in h_grid]
    if not h_grid:
        raise DegenerateFit("empty step-size grid")
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}")
    reports = []
    for i, h in enumerate(h_grid):
        N = max(1, int(round(T / h)))
        cfg = SchemeConfig(h=h, n_steps=N, x0=x0, seed=seed, stream=i)
        reports.append(_estimate(target, p, spec, phi, cfg, M, S, coupled, workers, method))
    kept = [r for r in reports if r.estimate > 0 and r.estimate >= 10 * r.std_error]
    dropped = [r for r in reports if r not in kept]
    order = fit_order([(r.h, r.estimate) for r in kept]) if fit else None
    return SweepResult(reports, order, dropped)
