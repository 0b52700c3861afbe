"""Command line entry point ``kacldp``.

Every subcommand exits 0 exactly when its checks pass.  Set ``KACLDP_THREADS``
to bound the simulation threads.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .cost import action, optimal_nucleation, translating_instanton_path
from .field import Grid, convolve_values, free_energy, instanton_solve, mean_field_fixed_point, mobility, weighted_norm_sq
from .harness import (
    ConfigError, ExperimentConfig, emit_report, nucleation_table, run_switching_experiment,
    run_tube_experiment,
)
from .kernel import make_kernel
from .tubelet import ScaleSchedule, validate_schedule


def _load_config(args, kind: str) -> ExperimentConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    d["kind"] = kind
    for key in ("replicas", "seed", "windows", "R", "T", "beta"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "gamma", None) is not None:
        d["schedule"] = {**d.get("schedule", {}), "gamma": args.gamma}
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    return ExperimentConfig.from_dict(d)


def _emit(rec, cfg, fmt):
    out = cfg.output_dir
    if out:
        for p in emit_report(rec, fmt, out, stem=cfg.kind):
            print(f"wrote {p}")


def _print_rows(rows, keys):
    print("\t".join(keys))
    for r in rows:
        print("\t".join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys))


def cmd_validate_schedule(args) -> int:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh).get("schedule", {})
    for key in ("gamma", "alpha", "a", "b", "c", "lam0", "lam1", "lam2", "lam3", "lam4"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    s = ScaleSchedule(**d)
    bad = validate_schedule(s)
    print(f"eps={s.eps:.6g} |I|={s.block_length:.6g} dt={s.dt:.6g} Delta={s.Delta:.6g} "
          f"delta={s.delta:.6g} delta'={s.delta_prime:.6g} N={s.jump_cap:.6g} kbar={s.bad_budget:.6g}")
    for v in bad:
        print(f"FAIL {v.name}: {v.expression} (margin {v.value:.4g})")
    if not bad:
        print("schedule OK")
    return 1 if bad else 0


def cmd_instanton(args) -> int:
    kernel = make_kernel(args.kernel)
    grid = Grid.symmetric(args.half, args.dx)
    inst = instanton_solve(args.beta, grid, kernel)
    mb = mean_field_fixed_point(args.beta)
    m = inst.values
    resid = float(np.max(np.abs(m - np.tanh(args.beta * convolve_values(m, kernel, grid.dx)))))
    anti = float(np.max(np.abs(m + m[::-1])))
    F = free_energy(inst, grid, kernel, args.beta).total
    mu = mobility(inst)
    print(f"m_beta={mb:.12g} residual={resid:.3g} antisymmetry={anti:.3g} F(mbar)={F:.12g} mu={mu:.12g} "
          f"crossover V^2T={3 * mu * F:.12g}")
    if args.out:
        inst.to_csv(args.out)
        print(f"wrote {args.out}")
    ok = (resid <= 1e-8 and anti <= 1e-8 and np.min(np.diff(m)) >= -1e-12
          and abs(m[-1] - mb) <= 1e-6 and abs(m[0] + mb) <= 1e-6)
    return 0 if ok else 1


def cmd_cost(args) -> int:
    kernel = make_kernel(args.kernel)
    inst = instanton_solve(args.beta, Grid.symmetric(14.0, 0.005), kernel)
    reach = args.V * args.T / args.eps
    grid = Grid.symmetric(reach / 2 + args.half, args.dx)
    path = translating_instanton_path(inst, grid, args.eps, args.V, args.T, nt=args.nt, x0=-reach / 2)
    got = action(path, kernel, args.beta).total
    want = 0.25 * weighted_norm_sq(inst) * args.V**2 * args.T
    rel = abs(got - want) / want
    print(f"action={got:.10g} predicted={want:.10g} relative_error={rel:.3g}")
    return 0 if rel <= args.rtol else 1


def cmd_tube(args) -> int:
    cfg = _load_config(args, "tube")
    rec = run_tube_experiment(cfg)
    _print_rows(rec.estimates, ["target", "action", "hits", "p_direct", "cost", "cost_se", "slack", "in_band"])
    print("checks: " + " ".join(f"{k}={v}" for k, v in rec.checks.items()))
    _emit(rec, cfg, args.format)
    return 0 if rec.passed else 1


def cmd_switching(args) -> int:
    cfg = _load_config(args, "switching")
    rec = run_switching_experiment(cfg)
    _print_rows(rec.estimates, ["n_C", "n_AC", "p_A_given_C", "ci_low", "ci_high", "inconclusive"])
    print(f"n_opt={rec.constants['n_opt']} threshold={rec.constants['threshold']:.6g}")
    print("checks: " + " ".join(f"{k}={v}" for k, v in rec.checks.items()))
    _emit(rec, cfg, args.format)
    return 0 if rec.passed else 1


def cmd_nucleation_table(args) -> int:
    tab = nucleation_table(args.R, args.T, args.Fbar, args.mu, args.n_max)
    best = optimal_nucleation(args.R, args.T, args.Fbar, args.mu)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["n", "w_n"])
        for n, v in tab:
            w.writerow([n, repr(float(v))])
    finally:
        if args.out:
            fh.close()
    print(f"argmin n = {', '.join(map(str, best))}", file=sys.stderr if not args.out else sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kacldp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate-schedule", help="check the scale schedule constraints")
    v.add_argument("--config")
    for key in ("gamma", "alpha", "a", "b", "c", "lam0", "lam1", "lam2", "lam3", "lam4"):
        v.add_argument(f"--{key}", type=float)
    v.set_defaults(func=cmd_validate_schedule)

    i = sub.add_parser("instanton", help="solve for the instanton and report F(mbar) and mu")
    i.add_argument("--beta", type=float, default=2.0)
    i.add_argument("--half", type=float, default=12.0, help="half-width of the symmetric grid")
    i.add_argument("--dx", type=float, default=0.01)
    i.add_argument("--kernel", default="poly")
    i.add_argument("--out", help="CSV file for the profile")
    i.set_defaults(func=cmd_instanton)

    c = sub.add_parser("cost", help="action of the translating instanton against V^2 T / mu")
    c.add_argument("--beta", type=float, default=2.0)
    c.add_argument("--V", type=float, default=0.5)
    c.add_argument("--T", type=float, default=1.0)
    c.add_argument("--eps", type=float, default=0.05)
    c.add_argument("--half", type=float, default=8.0, help="margin beyond the swept region")
    c.add_argument("--dx", type=float, default=0.025)
    c.add_argument("--nt", type=int, default=21)
    c.add_argument("--kernel", default="poly")
    c.add_argument("--rtol", type=float, default=0.01)
    c.set_defaults(func=cmd_cost)

    for name, func, hlp in (("tube", cmd_tube, "Monte Carlo tube probabilities against the discrete action"),
                            ("switching", cmd_switching, "conditional free-energy frequency of front switching")):
        t = sub.add_parser(name, help=hlp)
        t.add_argument("--config", help="JSON experiment config")
        t.add_argument("--replicas", type=int)
        t.add_argument("--seed", type=int)
        t.add_argument("--gamma", type=float)
        t.add_argument("--R", type=float)
        t.add_argument("--T", type=float)
        t.add_argument("--beta", type=float)
        if name == "tube":
            t.add_argument("--windows", type=int)
        t.add_argument("--out", help="report directory")
        t.add_argument("--format", choices=["csv", "json"], default="csv")
        t.set_defaults(func=func)

    n = sub.add_parser("nucleation-table", help="w_n for n = 0..n_max")
    n.add_argument("--R", type=float, required=True)
    n.add_argument("--T", type=float, required=True)
    n.add_argument("--Fbar", type=float, default=1.0)
    n.add_argument("--mu", type=float, default=1.0)
    n.add_argument("--n-max", type=int, default=5)
    n.add_argument("--out")
    n.set_defaults(func=cmd_nucleation_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
