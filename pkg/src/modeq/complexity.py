"""Tolerance-to-cost planning for the first- and second-order error bounds.

All "approximately equal" relations use unit constants. The horizon carries
an explicit 1/mu: ln(1/eps)/mu for weak errors and 2 ln(1/eps)/mu for strong
errors (so that exp(-mu N h / 2) = eps). Under polynomially decaying noise
the horizon comes from h / (N h)^(2 alpha) = eps^2 (weak) or eps^4 (strong)
and does not involve mu.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidRegime

DECAYS = ("bounded", "exponential", "polynomial")


@dataclass(frozen=True)
class Regime:
    error_kind: str = "weak"        # weak | strong
    order: str = "first"            # first | second
    decay: str = "bounded"          # bounded | exponential | polynomial
    nu: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.error_kind not in ("weak", "strong"):
            raise InvalidRegime(f"unknown error kind {self.error_kind!r}")
        if self.order not in ("first", "second"):
            raise InvalidRegime(f"unknown order {self.order!r}")
        if self.decay not in DECAYS:
            raise InvalidRegime(f"unknown decay {self.decay!r}")
        if self.decay == "polynomial" and not (self.alpha is not None and self.alpha > 0):
            raise InvalidRegime("polynomial decay needs alpha > 0")
        if self.nu is not None and not self.nu > 0:
            raise InvalidRegime("nu must be positive")

    @property
    def tag(self) -> str:
        w = "w" if self.error_kind == "weak" else "s"
        if self.order == "first":
            return f"N_1{w}"
        return f"N_2{w}{'e' if self.decay == 'exponential' else 'p'}"

    @property
    def exponent(self) -> float:
        """Power of 1/eps in N."""
        strong = self.error_kind == "strong"
        if self.order == "first" or self.decay == "exponential":
            base = 1.0 if self.order == "first" else 0.5
            return 2 * base if strong else base
        a = self.alpha
        return 1 + 3 / (2 * a) if strong else 0.5 + 3 / (4 * a)

    @property
    def log_power(self) -> int:
        """Power of ln(1/eps) in N."""
        return 0 if self.decay == "polynomial" else 1


@dataclass(frozen=True)
class ComplexityPlan:
    epsilon: float
    h_star: float
    n_star: int
    formula_tag: str
    regime: Regime
    horizon: float
    raw_n: float            # horizon / h before rounding
    exponent: float
    log_power: int

    @property
    def predicted_cost(self) -> int:
        return self.n_star


def _check_eps(eps):
    if not 0 < eps < 1:
        raise InvalidRegime(f"epsilon must lie in (0, 1), got {eps}")


def _step_and_horizon(regime: Regime, eps: float, mu: float):
    L = math.log(1.0 / eps)
    strong = regime.error_kind == "strong"
    if regime.order == "first":
        if regime.decay == "polynomial":
            raise InvalidRegime("no first-order cost rule for polynomially decaying noise")
        return (eps * eps if strong else eps), (2 * L / mu if strong else L / mu)
    if regime.decay == "bounded":
        raise InvalidRegime("second-order cost rules need decaying noise "
                            "(exponential or polynomial)")
    if regime.decay == "exponential":
        rate = mu if regime.nu is None else min(mu, regime.nu)
        return (eps if strong else math.sqrt(eps)), (2 * L / rate if strong else L / rate)
    h = eps if strong else math.sqrt(eps)
    target = eps ** 4 if strong else eps ** 2
    return h, (h / target) ** (1 / (2 * regime.alpha))


def plan(regime: Regime, epsilon: float, mu: float = 1.0) -> ComplexityPlan:
    """Step size and step count meeting tolerance ``epsilon``.

    N = ceil(horizon / h), then h is recomputed as horizon / N so the
    horizon equals N h exactly.
    """
    _check_eps(epsilon)
    if not mu > 0:
        raise InvalidRegime("mu must be positive")
    h, horizon = _step_and_horizon(regime, float(epsilon), float(mu))
    raw = horizon / h
    n = max(1, math.ceil(raw - 1e-9 * raw))
    return ComplexityPlan(epsilon=float(epsilon), h_star=horizon / n, n_star=n,
                          formula_tag=regime.tag, regime=regime, horizon=horizon, raw_n=raw,
                          exponent=regime.exponent, log_power=regime.log_power)


def cost_formula(regime: Regime, epsilon: float) -> float:
    """Un-rounded N = eps^(-exponent) ln(1/eps)^log_power."""
    _check_eps(epsilon)
    return epsilon ** -regime.exponent * math.log(1 / epsilon) ** regime.log_power


def power_part(regime: Regime, epsilon: float) -> float:
    return epsilon ** -regime.exponent


def reduction_verdict(alpha: float) -> str:
    """Whether second order under polynomial decay beats first order (exponent test)."""
    second = Regime("weak", "second", "polynomial", alpha=alpha).exponent
    first = Regime("weak", "first").exponent
    return "reduction" if second < first else "no reduction"


@dataclass
class ComparisonRow:
    epsilon: float
    costs: dict                 # tag -> un-rounded N
    identities: dict            # name -> relative residual on power parts
    verdict: Optional[str] = None
    alpha: Optional[float] = None


def compare_regimes(epsilon_grid, mu: float = 1.0, alpha: Optional[float] = None,
                    nu: Optional[float] = None):
    """Per eps: every applicable un-rounded cost and the structural identities.

    The squared-cost relations N_1s = N_1w^2, N_2se = N_2we^2, N_2sp = N_2wp^2
    and N_2we = N_1w^(1/2) are exact for the power-of-eps parts; the
    logarithmic factors are not squared and are reported separately in
    ``costs``.
    """
    grid = [float(e) for e in epsilon_grid]
    if not grid:
        raise ValueError("empty epsilon grid")
    regs = {
        "N_1w": Regime("weak", "first"), "N_1s": Regime("strong", "first"),
        "N_2we": Regime("weak", "second", "exponential", nu=nu),
        "N_2se": Regime("strong", "second", "exponential", nu=nu),
    }
    if alpha is not None:
        regs["N_2wp"] = Regime("weak", "second", "polynomial", alpha=alpha)
        regs["N_2sp"] = Regime("strong", "second", "polynomial", alpha=alpha)
    rows = []
    for eps in grid:
        costs = {k: cost_formula(r, eps) for k, r in regs.items()}
        pw = {k: power_part(r, eps) for k, r in regs.items()}
        rel = lambda a, b: abs(a / b - 1.0)
        ident = {
            "N_1s=N_1w^2": rel(pw["N_1s"], pw["N_1w"] ** 2),
            "N_2se=N_2we^2": rel(pw["N_2se"], pw["N_2we"] ** 2),
            "N_2we=N_1w^(1/2)": rel(pw["N_2we"], math.sqrt(pw["N_1w"])),
        }
        if alpha is not None:
            ident["N_2sp=N_2wp^2"] = rel(pw["N_2sp"], pw["N_2wp"] ** 2)
        rows.append(ComparisonRow(eps, costs, ident,
                                  reduction_verdict(alpha) if alpha is not None else None,
                                  alpha))
    return rows


VALIDATION_SLACK = 1.5


@dataclass
class ValidationReport:
    plan: ComplexityPlan
    measured_error: float
    std_error: float
    pilot_plan: ComplexityPlan
    pilot_error: float
    pilot_C: float
    passed: bool
    extras: dict = field(default_factory=dict)


def validate_plan(p, spec, phi, the_plan: ComplexityPlan, M: int, seed: int = 0, x0=None,
                  mu: Optional[float] = None, workers=None) -> ValidationReport:
    """Run the matching estimator at the plan and at a pilot plan for 2 eps.

    C = pilot_error / (2 eps); the plan passes when the measured error is at
    most VALIDATION_SLACK * C * eps. Weak regimes use |E phi(X_N) - phi(x*)|,
    strong regimes the root mean square distance to x*.
    """
    from .estimators import strong_error, weak_error_vs_minimizer
    from .scheme import SchemeConfig

    mu = p.mu if mu is None else mu
    x0 = np.zeros(p.dim) + 1.0 if x0 is None else x0
    eps = the_plan.epsilon
    if not 2 * eps < 1:
        raise InvalidRegime("pilot tolerance 2 eps must lie in (0, 1)")
    pilot = plan(the_plan.regime, 2 * eps, mu)

    def measure(pl, stream):
        cfg = SchemeConfig(h=pl.h_star, n_steps=pl.n_star, x0=x0, seed=seed, stream=stream)
        if pl.regime.error_kind == "strong":
            return strong_error(p, spec, cfg, M, workers=workers)
        return weak_error_vs_minimizer(p, spec, phi, cfg, M, workers=workers)

    rep = measure(the_plan, 0)
    pil = measure(pilot, 1)
    C = pil.estimate / (2 * eps)
    ok = rep.estimate <= VALIDATION_SLACK * C * eps
    return ValidationReport(the_plan, rep.estimate, rep.std_error, pilot, pil.estimate, C, ok,
                            {"pilot_std_error": pil.std_error,
                             "ratio": pil.estimate / rep.estimate if rep.estimate else math.inf})
