"""Time-dependent diffusion coefficients sigma(t, x) and the rate integral rho(T)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class EnvelopeSchedule:
    """Scalar envelope: c, c*exp(-nu*s) or c/(1 + s**alpha)."""

    kind: str = "constant"
    c: float = 1.0
    nu: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "polynomial"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.kind == "exponential" and not self.nu > 0:
            raise ValueError("exponential envelope needs nu > 0")
        if self.kind == "polynomial" and not self.alpha > 0:
            raise ValueError("polynomial envelope needs alpha > 0")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            return np.full_like(s, self.c)
        if self.kind == "exponential":
            return self.c * np.exp(-self.nu * s)
        return self.c / (1.0 + s ** self.alpha)

    @property
    def sup(self) -> float:
        return self.c

    def time_lipschitz(self) -> float:
        """Lipschitz constant of s -> envelope(s) on [0, inf)."""
        if self.kind == "constant" or self.c == 0:
            return 0.0
        if self.kind == "exponential":
            return self.c * self.nu
        a = self.alpha
        if a < 1:
            return math.inf
        if a == 1:
            return self.c
        # |d/ds (1+s^a)^-1| = a s^(a-1) / (1+s^a)^2, maximised at s^a = (a-1)/(a+1)
        s = ((a - 1) / (a + 1)) ** (1 / a)
        return self.c * a * s ** (a - 1) / (1 + s ** a) ** 2


SHAPES = ("scalar_identity", "diagonal", "state_scaled")


@dataclass(frozen=True)
class DiffusionSpec:
    """sigma(t, x) = envelope(t) * S(x).

    ``scalar_identity``: S = I.  ``diagonal``: S = diag(base).
    ``state_scaled``: S = (1 + gain * r / (1 + r)) I with r = ||x - center||.
    """

    envelope: EnvelopeSchedule
    dim: int
    shape: str = "scalar_identity"
    base: Optional[np.ndarray] = None
    state_gain: float = 0.0
    center: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown diffusion shape {self.shape!r}")
        if self.shape == "diagonal":
            if self.base is None:
                raise ValueError("diagonal shape needs a base vector")
            b = np.asarray(self.base, dtype=float)
            if b.ndim == 2:
                b = np.diag(b)
            if b.shape != (self.dim,):
                raise ValueError("base must have length dim")
            object.__setattr__(self, "base", b)
        if self.state_gain < 0:
            raise ValueError("state_gain must be nonnegative")
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, float)
        object.__setattr__(self, "center", c.reshape(self.dim))

    @property
    def state_dependent(self) -> bool:
        return self.shape == "state_scaled" and self.state_gain > 0

    @property
    def growth_constant(self) -> float:
        """C with ||sigma(t,x)|| <= C env(t) (1 + ||x-x*||) and Lip <= C env(t) (Frobenius)."""
        rd = math.sqrt(self.dim)
        if self.shape == "scalar_identity":
            return rd
        if self.shape == "diagonal":
            return float(np.linalg.norm(self.base))
        return rd * (1.0 + self.state_gain)

    @property
    def time_lipschitz(self) -> float:
        return self.growth_constant * self.envelope.time_lipschitz()

    def _state_factor(self, x):
        r = np.linalg.norm(np.asarray(x, float) - self.center, axis=-1)
        return 1.0 + self.state_gain * r / (1.0 + r)

    def apply(self, t, x, g):
        return sigma_apply(self, t, x, g)

    def derivative_apply(self, t, x, eta, g):
        """(D_x sigma(t, x).eta) g; zero unless the shape is state_scaled."""
        g = np.asarray(g, float)
        if not self.state_dependent:
            return np.zeros(np.broadcast_shapes(np.shape(x), g.shape))
        y = np.asarray(x, float) - self.center
        r = np.linalg.norm(y, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        dr = np.where(r > 0, np.sum(y * np.asarray(eta, float), axis=-1) / safe, 0.0)
        df = self.state_gain / (1.0 + r) ** 2 * dr
        return (float(self.envelope(t)) * df)[..., None] * g


def sigma_apply(spec: DiffusionSpec, t: float, x, g):
    """sigma(t, x) g without forming the matrix."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    g = np.asarray(g, dtype=float)
    e = float(spec.envelope(t))
    if spec.shape == "scalar_identity":
        return e * g
    if spec.shape == "diagonal":
        return e * spec.base * g
    return (e * spec._state_factor(x))[..., None] * g


def sigma_matrix(spec: DiffusionSpec, t: float, x):
    x = np.asarray(x, dtype=float)
    eye = np.eye(spec.dim)
    return np.stack([sigma_apply(spec, t, x, np.broadcast_to(eye[j], x.shape))
                     for j in range(spec.dim)], axis=-1)


def a_matrix(spec: DiffusionSpec, t: float, x):
    """a(t, x) = sigma sigma^T."""
    s = sigma_matrix(spec, t, x)
    return s @ np.swapaxes(s, -1, -2)


def _rho_scaled_quad(env: EnvelopeSchedule, mu: float, T: float) -> float:
    """exp(-2 mu T) rho(T) = int_0^T exp(-2 mu u) env(T-u)^2 du by adaptive quadrature.

    The integrand decays on the scale 1/(2 mu), so the range is cut into
    pieces of that length (and truncated where the weight underflows).
    """
    if T == 0:
        return 0.0
    scale = 1.0 / (2.0 * mu)
    upper = min(T, 800.0 * scale)
    n = max(1, min(200, math.ceil(upper / scale)))
    edges = np.linspace(0.0, upper, n + 1)
    f = lambda u: math.exp(-2.0 * mu * u) * float(env(T - u)) ** 2
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        total += val
    return total


def rho(envelope: EnvelopeSchedule, mu: float, T: float) -> float:
    """rho(T) = int_0^T exp(2 mu s) env(s)^2 ds.

    Closed forms for constant and exponential envelopes, quadrature otherwise.
    """
    if T < 0 or not mu > 0:
        raise ValueError("need T >= 0 and mu > 0")
    if T == 0:
        return 0.0
    c2 = envelope.c ** 2
    if envelope.kind == "constant":
        return c2 * math.expm1(2 * mu * T) / (2 * mu)
    if envelope.kind == "exponential":
        k = 2.0 * (mu - envelope.nu)
        return c2 * _expm1_over(k, T)
    return math.exp(2 * mu * T) * _rho_scaled_quad(envelope, mu, T)


def _expm1_over(k: float, T: float) -> float:
    """(exp(k T) - 1) / k, continuous at k = 0."""
    if abs(k * T) < 1e-8:
        return T * (1 + 0.5 * k * T)
    return math.expm1(k * T) / k


def rho_decay_factor(envelope: EnvelopeSchedule, mu: float, T: float) -> float:
    """exp(-2 mu T) rho(T), evaluated without forming the large exponential."""
    if T < 0 or not mu > 0:
        raise ValueError("need T >= 0 and mu > 0")
    if T == 0:
        return 0.0
    c2 = envelope.c ** 2
    if envelope.kind == "constant":
        return c2 * -math.expm1(-2 * mu * T) / (2 * mu)
    if envelope.kind == "exponential":
        # exp(-2 mu T) (exp(kT) - 1)/k = (exp(-2 nu T) - exp(-2 mu T)) / k
        k = 2.0 * (mu - envelope.nu)
        if abs(k * T) < 1e-8:
            return c2 * math.exp(-2 * mu * T) * _expm1_over(k, T)
        return c2 * (math.exp(-2 * envelope.nu * T) - math.exp(-2 * mu * T)) / k
    return _rho_scaled_quad(envelope, mu, T)


def rho_quadrature(envelope: EnvelopeSchedule, mu: float, T: float) -> float:
    """rho(T) by quadrature for any envelope kind."""
    if T == 0:
        return 0.0
    return math.exp(2 * mu * T) * _rho_scaled_quad(envelope, mu, T)


def fit_decay_constant(envelope: EnvelopeSchedule, mu: float, T_grid, bound) -> float:
    """Smallest C with rho_decay_factor(T) <= C * bound(T) on ``T_grid``."""
    return max(rho_decay_factor(envelope, mu, T) / bound(T) for T in T_grid)


@dataclass
class DiffusionCheck:
    growth_observed: float
    lipschitz_observed: float
    bound: float
    growth_ok: bool
    lipschitz_ok: bool
    time_lipschitz: float

    @property
    def passed(self) -> bool:
        return self.growth_ok and self.lipschitz_ok

    def rows(self):
        return [("sigma_growth", self.growth_observed, self.growth_ok),
                ("sigma_lipschitz", self.lipschitz_observed, self.lipschitz_ok)]


def check_diffusion(spec: DiffusionSpec, center=None, sample_count: int = 2000, seed=0,
                    radius: float = 10.0, horizon: float = 10.0,
                    tol: float = 1e-10) -> DiffusionCheck:
    """Sampled check of ||sigma(t,x)|| <= C env(t)(1 + ||x - x*||) and of the
    Lipschitz bound ||sigma(t,x) - sigma(t,y)|| <= C env(t) ||x - y|| (Frobenius).

    Observed values are the largest ratios with C env(t) divided out.
    """
    rng = np.random.default_rng(seed)
    c = spec.center if center is None else np.asarray(center, float)
    d = spec.dim
    t = rng.uniform(0.0, horizon, sample_count)
    x = c + rng.uniform(-radius, radius, (sample_count, d))
    y = c + rng.uniform(-radius, radius, (sample_count, d))
    env = np.asarray(spec.envelope(t), float)
    keep = env > 0
    g_obs = l_obs = 0.0
    if np.any(keep):
        sx = np.stack([sigma_matrix(spec, ti, xi) for ti, xi in zip(t[keep], x[keep])])
        sy = np.stack([sigma_matrix(spec, ti, yi) for ti, yi in zip(t[keep], y[keep])])
        e = env[keep]
        nx = np.linalg.norm(sx, axis=(1, 2))
        g_obs = float(np.max(nx / (e * (1 + np.linalg.norm(x[keep] - c, axis=1)))))
        dxy = np.linalg.norm(x[keep] - y[keep], axis=1)
        ok = dxy > 0
        l_obs = float(np.max(np.linalg.norm(sx - sy, axis=(1, 2))[ok] / (e[ok] * dxy[ok]),
                             initial=0.0))
    C = spec.growth_constant
    return DiffusionCheck(g_obs, l_obs, C, g_obs <= C + tol, l_obs <= C + tol,
                          spec.time_lipschitz)


__all__ = [
    "EnvelopeSchedule", "DiffusionSpec", "sigma_apply", "sigma_matrix", "a_matrix",
    "rho", "rho_decay_factor", "rho_quadrature", "fit_decay_constant",
    "DiffusionCheck", "check_diffusion",
]
