"""Step counts needed for a target tolerance, and when second order pays off.

Run:  python3 demos/complexity_table.py
"""
from modeq.complexity import Regime, compare_regimes, plan, reduction_verdict

regimes = {
    "first-weak": Regime("weak", "first"),
    "first-strong": Regime("strong", "first"),
    "second-weak-exp": Regime("weak", "second", "exponential"),
    "second-strong-exp": Regime("strong", "second", "exponential"),
    "second-weak-poly(2)": Regime("weak", "second", "polynomial", alpha=2.0),
}
eps_grid = (0.1, 0.01, 0.001)
print(f"{'regime':<20}" + "".join(f"{'eps=' + str(e):>14}" for e in eps_grid))
for name, reg in regimes.items():
    print(f"{name:<20}" + "".join(f"{plan(reg, e).n_star:>14d}" for e in eps_grid))

print("\npolynomially decaying noise, sigma ~ t^-alpha:")
for alpha in (1.0, 1.5, 2.0, 4.0):
    print(f"  alpha={alpha:<4g} -> {reduction_verdict(alpha)}")

row = compare_regimes([1e-4], alpha=2.0)[0]
print("\nsquared-cost identities at eps=1e-4 (relative residual):")
for k, v in row.identities.items():
    print(f"  {k:<18} {v:.1e}")
