"""Weak error of the noisy gradient scheme against the gradient flow shrinks like h.

Run:  python3 demos/weak_order_first.py
"""
from modeq.config import build_diffusion, build_phi, build_problem, load_config
from modeq.estimators import sweep

cfg = load_config("theorem1_order")
p = build_problem(cfg["problem"])
spec = build_diffusion(cfg["diffusion"], p.dim)
s = cfg["sweep"]

res = sweep(p, spec, build_phi(cfg["phi"]), s["h_grid"], s["T"], s["M"], s["target"],
            x0=s["x0"], seed=cfg["seed"])

print(f"{'h':>8} {'N':>5} {'error':>12} {'95% half-width':>15}")
for r in res.reports:
    print(f"{r.h:8.4f} {r.N:5d} {r.estimate:12.4e} {r.half_width:15.2e}")
print(f"\nfitted order {res.fit.slope:.3f} (R^2 = {res.fit.r_squared:.5f})")
