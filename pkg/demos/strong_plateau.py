"""With noise that never decays the strong error stops improving with N.

For F(x) = x^2/2 and sigma = 1 the stationary second moment of the scheme is
h^2 / (1 - (1 - h)^2), so at h = 0.1 the root mean square distance to the
minimiser settles near 0.229 however many steps are taken.

Run:  python3 demos/strong_plateau.py
"""
import math

from modeq.diffusion import DiffusionSpec, EnvelopeSchedule
from modeq.estimators import strong_error
from modeq.objective import quadratic_problem
from modeq.scheme import SchemeConfig

p = quadratic_problem([1.0])
h = 0.1
plateau = math.sqrt(h * h / (1 - (1 - h) ** 2))
for label, env in (("constant", EnvelopeSchedule("constant", 1.0)),
                   ("exp decay", EnvelopeSchedule("exponential", 1.0, 0.5))):
    spec = DiffusionSpec(env, 1)
    print(f"noise envelope: {label}")
    for N in (10, 50, 200, 500):
        rep = strong_error(p, spec, SchemeConfig(h=h, n_steps=N, x0=[1.0], seed=1), 50_000)
        print(f"  N={N:4d}  strong error {rep.estimate:.3e} +/- {rep.half_width:.1e}")
print(f"constant-noise plateau {plateau:.5f}")
