"""Command-line front end: ``modeq {run,sweep,plan,check,validate-plan}``.

CSV goes to ``--out`` (or stdout); human-readable summaries go to stderr.
Exit codes: 0 success, 2 configuration or validation error, 3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys

import numpy as np

from . import config as C
from .complexity import compare_regimes, plan, validate_plan
from .diffusion import check_diffusion
from .errors import (ConfigError, DegenerateFit, InvalidRegime, NonFiniteState,
                     ToleranceNotMet)
from .estimators import fit_order, sweep, write_reports_csv
from .flows import moment_bound_check, tangent_ode, tangent_sde
from .objective import check_assumptions
from .scheme import SchemeConfig, quadratic_second_moment_recursion, run_scheme, \
    simulate_scheme

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE = 0, 2, 3


def _f(v) -> str:
    return format(float(v), ".17g")


def _writer(buf):
    return csv.writer(buf, lineterminator="\n")


def _say(msg):
    print(msg, file=sys.stderr)


def _load(args, required=()):
    cfg = C.load_config(args.config)
    for s in args.set or ():
        cfg = C.apply_override(cfg, s)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return C.validate(cfg, required)


# --- run ----------------------------------------------------------------------

def _oracle_second_moment(p, spec, sc):
    """Exact E||X_N - x*||^2 when the scheme is linear with constant scalar noise."""
    if not p.is_diagonal_quadratic:
        return None
    if spec is None:
        sigma0 = 0.0
    elif spec.shape == "scalar_identity" and spec.envelope.kind == "constant":
        sigma0 = spec.envelope.c
    else:
        return None
    lam = np.diag(p.matrix)
    return float(quadratic_second_moment_recursion(lam, sigma0, sc.h, sc.n_steps, sc.x0,
                                                   p.minimizer)[-1])


def cmd_run(args, buf):
    cfg = _load(args, ("problem", "scheme"))
    p = C.build_problem(cfg["problem"])
    spec = C.build_diffusion(cfg.get("diffusion"), p.dim)
    s = cfg["scheme"]
    try:
        sc = SchemeConfig(h=s["h"], n_steps=s["n_steps"], x0=s["x0"], seed=cfg.get("seed", 0),
                          noise_mode=s.get("noise_mode", "gaussian_iid"),
                          substeps_per_step=s.get("substeps_per_step", 1))
    except ValueError as e:
        raise ConfigError(f"scheme: {e}") from None
    if sc.x0.shape != (p.dim,):
        raise ConfigError("scheme.x0 has the wrong dimension")
    M = s.get("M", 1)
    w = _writer(buf)
    if M == 1:
        path = run_scheme(p, spec, sc, retain_increments=False)
        w.writerow(["n", "t"] + [f"x{i}" for i in range(p.dim)])
        for n, (t, x) in enumerate(zip(path.times, path.states)):
            w.writerow([str(n), _f(t)] + [_f(v) for v in x])
        _say(f"final state: {np.array2string(path.states[-1], precision=10)}")
        return EXIT_OK
    ens = simulate_scheme(p, spec, sc, M, workers=args.threads)
    X = ens.terminal
    d2 = np.sum((X - p.minimizer) ** 2, axis=1)
    se = lambda v: float(np.std(v, ddof=1) / math.sqrt(M))
    m2 = float(np.mean(d2))
    rows = [(f"mean[{i}]", float(np.mean(X[:, i])), se(X[:, i])) for i in range(p.dim)]
    rows.append(("second_moment", m2, se(d2)))
    rows.append(("strong_error", math.sqrt(m2), se(d2) / (2 * math.sqrt(m2)) if m2 > 0 else 0.0))
    rows.append(("mean_norm", float(np.mean(np.sqrt(d2))), se(np.sqrt(d2))))
    oracle = _oracle_second_moment(p, spec, sc)
    if oracle is not None:
        rows.append(("oracle_second_moment", oracle, 0.0))
        rows.append(("oracle_strong_error", math.sqrt(oracle), 0.0))
    w.writerow(["quantity", "value", "std_error"])
    for name, v, e in rows:
        w.writerow([name, _f(v), _f(e)])
    _say(f"M={M} N={sc.n_steps} h={sc.h:g}: E||X_N-x*||^2 = {m2:.6g} +/- {se(d2):.2g}")
    if oracle is not None:
        z = (m2 - oracle) / se(d2) if se(d2) > 0 else 0.0
        _say(f"recursion oracle {oracle:.6g} (z = {z:+.2f})")
    return EXIT_OK


# --- sweep --------------------------------------------------------------------

def cmd_sweep(args, buf):
    cfg = _load(args, ("problem", "sweep"))
    p = C.build_problem(cfg["problem"])
    spec = C.build_diffusion(cfg.get("diffusion"), p.dim)
    phi = C.build_phi(cfg.get("phi"))
    s = cfg["sweep"]
    if len(s["x0"]) != p.dim:
        raise ConfigError("sweep.x0 has the wrong dimension")
    try:
        res = sweep(p, spec, phi, s["h_grid"], s["T"], s["M"], s["target"], x0=s["x0"],
                    seed=cfg.get("seed", 0), S=s.get("S", 1024), coupled=s.get("coupled", True),
                    workers=args.threads, method=s.get("method", "auto"), fit=False)
    except ValueError as e:
        if isinstance(e, (DegenerateFit, ConfigError)):
            raise
        raise ConfigError(str(e)) from None
    write_reports_csv(res.reports, buf)
    kept = [r for r in res.reports if r.estimate > 0 and r.estimate >= 10 * r.std_error]
    for r in res.reports:
        _say(f"h={r.h:<8g} N={r.N:<6d} error={r.estimate:.6e} +/- {r.std_error:.2e}")
    fit = fit_order([(r.h, r.estimate) for r in kept])
    buf.write(f"# fit slope={_f(fit.slope)} intercept={_f(fit.intercept)} "
              f"r_squared={_f(fit.r_squared)} points={len(fit.points)}\n")
    _say(f"order fit: slope {fit.slope:.4f}, R^2 {fit.r_squared:.5f} "
         f"({len(fit.points)} of {len(res.reports)} points)")
    return EXIT_OK


# --- plan ---------------------------------------------------------------------

def cmd_plan(args, buf):
    cfg = _load(args)
    pc = cfg.get("plan", {})
    regimes = args.regime or pc.get("regimes")
    eps = args.eps or pc.get("epsilon")
    mu = args.mu if args.mu is not None else pc.get("mu", 1.0)
    alpha = args.alpha if args.alpha is not None else pc.get("alpha")
    nu = args.nu if args.nu is not None else pc.get("nu")
    compare = args.compare or pc.get("compare", False)
    if eps is None:
        if not compare:
            raise ConfigError("no tolerance given (use --eps)")
        eps = [0.1, 0.01, 0.001]
    for e in eps:
        if not 0 < e < 1:
            raise InvalidRegime(f"epsilon must lie in (0, 1), got {e}")
    w = _writer(buf)
    if compare:
        rows = compare_regimes(eps, mu, alpha, nu)
        tags = list(rows[0].costs)
        idents = list(rows[0].identities)
        w.writerow(["epsilon", "alpha"] + tags + idents + ["verdict"])
        for r in rows:
            w.writerow([_f(r.epsilon), "" if alpha is None else _f(alpha)]
                       + [_f(r.costs[t]) for t in tags]
                       + [_f(r.identities[i]) for i in idents] + [r.verdict or ""])
        if alpha is not None:
            _say(f"alpha={alpha:g}: {rows[0].verdict}")
        return EXIT_OK
    if not regimes:
        raise ConfigError("no regime given (use --regime)")
    w.writerow(["epsilon", "regime", "h_star", "n_star", "formula_tag", "predicted_cost"])
    for name in regimes:
        reg = C.build_regime(name, alpha, nu)
        for e in eps:
            pl = plan(reg, e, mu)
            w.writerow([_f(e), name, _f(pl.h_star), str(pl.n_star), pl.formula_tag,
                        str(pl.predicted_cost)])
            _say(f"{name} eps={e:g}: h={pl.h_star:.6g} N={pl.n_star}")
    return EXIT_OK


# --- check --------------------------------------------------------------------

def _tangent_rows(p, spec, tc, seed):
    rows = []
    T = tc.get("T", 1.0)
    h = tc.get("h", 0.1)
    tol = tc.get("tol", 1e-10)
    rng = np.random.default_rng(seed)
    worst = -math.inf
    try:
        for _ in range(tc.get("instances", 5)):
            x0 = p.minimizer + rng.standard_normal(p.dim)
            k = rng.standard_normal(p.dim)
            eta = tangent_ode(p, x0, k, T, tol=tol)
            worst = max(worst, np.linalg.norm(eta) - math.exp(-p.mu * T) * np.linalg.norm(k))
        rows.append(("tangent_ode_decay", worst, worst <= 10 * tol))
    except (NonFiniteState, ToleranceNotMet) as e:
        rows.append(("tangent_ode_decay", math.nan, False))
        _say(f"tangent_ode: {e}")
    k = np.ones(p.dim) / math.sqrt(p.dim)
    try:
        tm = tangent_sde(p, spec, h, p.minimizer + 1.0, k, T,
                         fine_substeps=tc.get("fine_substeps", 16),
                         ensemble=tc.get("ensemble", 200), seed=seed)
        excess = tm.second - math.exp(-2 * p.mu * T)
        rows.append(("tangent_sde_decay", excess, excess <= 4 * tm.second_se + 10 * tol))
    except NonFiniteState as e:
        rows.append(("tangent_sde_decay", math.nan, False))
        _say(f"tangent_sde: {e}")
    return rows


def cmd_check(args, buf):
    cfg = _load(args, ("problem",))
    p = C.build_problem(cfg["problem"])
    spec = C.build_diffusion(cfg.get("diffusion"), p.dim)
    ck = cfg.get("check", {})
    seed = cfg.get("seed", 0)
    h_grid = ck.get("h_grid", [0.1, 0.05, 0.01])
    rep = check_assumptions(p, h_grid, ck.get("sample_count", 2000), seed,
                            ck.get("radius", 10.0))
    rows = list(rep.rows())
    if spec is not None:
        rows += check_diffusion(spec, p.minimizer, ck.get("sample_count", 2000), seed,
                                ck.get("radius", 10.0)).rows()
    rows += _tangent_rows(p, spec, ck.get("tangent", {}), seed)
    if "contraction" in ck:
        cc = ck["contraction"]
        if len(cc["x0"]) != p.dim:
            raise ConfigError("check.contraction.x0 has the wrong dimension")
        try:
            mb = moment_bound_check(p, spec, cc["x0"], cc["T_grid"], cc["h_grid"],
                                    cc.get("M", 10000), cc.get("fine_substeps", 64), seed,
                                    workers=args.threads)
            rows.append(("moment_bound_fitted_C", mb.C, mb.passed))
            for T, h, est, se, b, held, ok in mb.rows:
                if held:
                    rows.append((f"moment_bound[T={T:g};h={h:g}]", est / b, ok))
        except ValueError as e:
            raise ConfigError(f"check.contraction: {e}") from None
        except NonFiniteState as e:
            rows.append(("moment_bound_fitted_C", math.nan, False))
            _say(f"moment bound: {e}")
    w = _writer(buf)
    w.writerow(["check", "observed", "passed"])
    for name, v, ok in rows:
        w.writerow([name, _f(v), "pass" if ok else "fail"])
        _say(f"{'PASS' if ok else 'FAIL'}  {name:<40s} {v:.6g}")
    return EXIT_OK


# --- validate-plan ------------------------------------------------------------

def cmd_validate(args, buf):
    cfg = _load(args, ("problem", "validate"))
    p = C.build_problem(cfg["problem"])
    spec = C.build_diffusion(cfg.get("diffusion"), p.dim)
    phi = C.build_phi(cfg.get("phi"))
    v = cfg["validate"]
    if len(v["x0"]) != p.dim:
        raise ConfigError("validate.x0 has the wrong dimension")
    reg = C.build_regime(v["regime"], v.get("alpha"), v.get("nu"))
    mu = v.get("mu", p.mu)
    pl = plan(reg, v["epsilon"], mu)
    rep = validate_plan(p, spec, phi, pl, v["M"], cfg.get("seed", 0), v["x0"], mu,
                        workers=args.threads)
    w = _writer(buf)
    w.writerow(["epsilon", "regime", "h_star", "n_star", "formula_tag", "predicted_cost",
                "measured_error", "std_error", "pilot_C", "pass"])
    w.writerow([_f(pl.epsilon), v["regime"], _f(pl.h_star), str(pl.n_star), pl.formula_tag,
                str(pl.predicted_cost), _f(rep.measured_error), _f(rep.std_error),
                _f(rep.pilot_C), "pass" if rep.passed else "fail"])
    _say(f"measured {rep.measured_error:.4g} vs C eps = {rep.pilot_C * pl.epsilon:.4g}: "
         f"{'pass' if rep.passed else 'fail'}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "plan": cmd_plan, "check": cmd_check,
            "validate-plan": cmd_validate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file or bundled config name")
    common.add_argument("--set", action="append", metavar="KEY=VAL",
                        help="override a config leaf by dotted path (repeatable)")
    common.add_argument("--out", help="CSV destination (default: stdout)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int,
                        help="worker threads (overrides MODEQ_THREADS)")
    ap = argparse.ArgumentParser(prog="modeq", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "check", "validate-plan"):
        sub.add_parser(name, parents=[common])
    pp = sub.add_parser("plan", parents=[common])
    pp.add_argument("--regime", action="append", choices=sorted(C.REGIME_NAMES))
    pp.add_argument("--eps", type=float, nargs="+")
    pp.add_argument("--mu", type=float)
    pp.add_argument("--alpha", type=float)
    pp.add_argument("--nu", type=float)
    pp.add_argument("--compare", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        _say("error: --threads must be >= 1")
        return EXIT_CONFIG
    buf = io.StringIO()
    try:
        code = COMMANDS[args.command](args, buf)
    except NonFiniteState as e:
        _say(f"error: numerical blow-up: {e}")
        code = EXIT_NONFINITE
    except (ConfigError, DegenerateFit, InvalidRegime, ValueError) as e:
        _say(f"error: {type(e).__name__}: {e}")
        code = EXIT_CONFIG
    if buf.getvalue():
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            sys.stdout.write(buf.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
