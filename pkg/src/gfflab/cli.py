"""Command line entry point: ``gfflab <verb> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time

from . import corrector_lab as cl
from . import harness
from . import parabolic_check as pc
from . import renorm_flow as rf
from . import sde_engine as sde
from . import suites

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _floats(text: str) -> list[float]:
    out = [float(t) for t in text.split(",") if t.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _finish(args, name, params, metrics, tables, checks, started) -> int:
    run_dir, man = harness.write_run(name, {"params": params}, "", params.get("seed", 0),
                                     "adhoc", metrics, tables, checks, started, args.output)
    print(f"wrote {run_dir}")
    if checks:
        print(harness.check_report(checks))
    return EXIT_OK if man.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    t0 = time.time()
    times = args.record or [args.t_max * (i + 1) / 10 for i in range(10)]
    cfg = sde.SimConfig(epsilon2=args.epsilon2, L=args.L, dt=args.dt, t_max=max(times),
                        n_paths=args.n_paths, n_fields=args.n_fields, seed=args.seed,
                        record_times=tuple(times), modes_per_octave=args.modes_per_octave)
    res = sde.simulate_ensemble(cfg)
    metrics = {"n_aborted": res.n_aborted}
    if args.window:
        est = sde.estimate_lambda(res, tuple(args.window))
        metrics["lambda"] = est.to_dict()
        print(f"lambda_hat = {est.lambda_hat:.4f} +- {est.half_width:.4f}")
    return _finish(args, "simulate", cfg.to_dict(), metrics, {"msd": res.table()}, [], t0)


def cmd_renorm(args) -> int:
    t0 = time.time()
    st = rf.iterate_lambda(args.epsilon2, args.M, args.steps)
    try:
        certs = rf.certify_bounds(st)
        ok, detail = True, f"{len(certs)} rungs"
    except rf.SandwichViolation as exc:
        certs, ok, detail = [], False, str(exc)
    params = {"epsilon2": args.epsilon2, "M": args.M, "steps": args.steps}
    return _finish(args, "renorm", params, {"identity_residual_max": float(abs(st.identity_residual).max())},
                   {"ladder": st.rows(), "bounds": [c.to_dict() for c in certs]},
                   [suites.Check("sandwich", ok, detail)], t0)


def cmd_rg_ode(args) -> int:
    t0 = time.time()
    try:
        tr = rf.rg_ode_integrate(args.z0, args.decades * math.log(10), args.step)
    except rf.BasinExit as exc:
        print(f"basin exit: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rows = [{"log_time": float(u), "z": float(z), "z_closed": float(zc), "log_msd": float(m)}
            for u, z, zc, m in zip(tr.log_time, tr.z, tr.closed_form_z(), tr.log_msd)]
    err = float(abs(tr.z - tr.closed_form_z()).max()) if args.z0 < 2 else 0.0
    params = {"z0": args.z0, "decades": args.decades, "step": args.step}
    return _finish(args, "rg-ode", params, {"z_error": err}, {"rg_ode": rows[:: args.stride]},
                   [], t0)


def cmd_correctors(args) -> int:
    t0 = time.time()
    if args.mode == "verify-prime":
        rows = cl.verify_lemma_prime(args.L, args.M, args.lambda_tilde, mc_samples=args.samples,
                                     seed=args.seed)
        params = {"L": args.L, "M": args.M, "lambda_tilde": args.lambda_tilde,
                  "samples": args.samples, "seed": args.seed}
        checks = [suites.Check(r["quantity"], r["pass"],
                               f"quad {r['quadrature']:.6g}, mc {r['mc_mean']:.6g}+-{r['mc_se']:.2g}")
                  for r in rows]
        return _finish(args, "correctors-prime", params, {}, {"lemma51": rows}, checks, t0)
    p = {"epsilon2": args.epsilon2, "M": args.M, "levels": args.levels, "samples": args.samples,
         "modes_per_level": 64, "fd_points": 100, "seed": args.seed}
    node = suites._proxy(p)
    r61 = suites.run_lemma61(p, node=node)
    r71 = suites.run_lemma71(p, node=node)
    return _finish(args, "correctors-proxy", p, {**r61.metrics, **r71.metrics},
                   {**r61.tables, **r71.tables}, r61.checks + r71.checks, t0)


def cmd_rep_check(args) -> int:
    t0 = time.time()
    rep = pc.representation_identity_check(args.epsilon2, args.L, args.T, n_fields=args.n_fields,
                                           n_paths=args.n_paths, grid=args.grid,
                                           dt_pde=args.dt_pde, dt_sde=args.dt_sde, seed=args.seed)
    d = rep.to_dict()
    print(f"LHS {rep.lhs:.4f} +- {rep.lhs_se:.4f}  RHS {rep.rhs:.4f}  ratio {rep.ratio:.4f}")
    params = {k: getattr(args, k) for k in ("epsilon2", "L", "T", "n_fields", "n_paths", "grid",
                                            "dt_pde", "dt_sde", "seed")}
    curve = [{"t": t, "lhs": l, "rhs": r} for (t, l), (_, r) in zip(rep.lhs_curve, rep.rhs_curve)]
    return _finish(args, "rep-check", params, d, {"representation": curve},
                   [suites.Check("representation", abs(rep.ratio - 1) <= args.tolerance,
                                 f"ratio {rep.ratio:.4f}")], t0)


def cmd_run(args) -> int:
    try:
        if args.config:
            cfg = harness.load_config(args.config)
            if args.suite and args.suite != cfg.suite:
                raise harness.ConfigError(f"config is for suite {cfg.suite}, not {args.suite}")
        else:
            cfg = harness.parse_config(harness.dump_config(
                harness.default_config(args.suite, args.preset)))
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_dir, man, res = harness.run_suite(cfg, args.output)
    except ValueError as exc:
        # parameter combinations the schema cannot see, e.g. L off the ladder
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {run_dir}")
    print(harness.check_report(man.checks))
    return EXIT_OK if man.passed else EXIT_FAIL


def cmd_plot(args) -> int:
    from . import plots

    made = plots.emit_plots(args.manifest, args.out)
    for p in made:
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gfflab", description=__doc__)
    ap.add_argument("--output", default=None,
                    help=f"output root (default ${harness.OUTPUT_ENV} or ./{harness.DEFAULT_OUTPUT})")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("simulate", help="MSD ensemble for one cutoff")
    s.add_argument("--epsilon2", type=float, required=True)
    s.add_argument("--L", type=float, required=True)
    s.add_argument("--dt", type=float, default=0.02)
    s.add_argument("--t-max", type=float, default=100.0)
    s.add_argument("--record", type=_floats, default=None, help="comma separated record times")
    s.add_argument("--n-paths", type=int, default=4096)
    s.add_argument("--n-fields", type=int, default=16)
    s.add_argument("--modes-per-octave", type=int, default=32)
    s.add_argument("--window", type=float, nargs=2, default=None, help="fit window t1 t2")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("renorm", help="discrete recursion ladder and bound certificates")
    s.add_argument("--epsilon2", type=float, required=True)
    s.add_argument("--M", type=float, default=4.0)
    s.add_argument("--steps", type=int, default=20)
    s.set_defaults(func=cmd_renorm)

    s = sub.add_parser("rg-ode", help="integrate the scaling-exponent flow")
    s.add_argument("--z0", type=float, default=1.0)
    s.add_argument("--decades", type=float, default=3.0)
    s.add_argument("--step", type=float, default=1e-3)
    s.add_argument("--stride", type=int, default=10, help="keep every n-th row")
    s.set_defaults(func=cmd_rg_ode)

    s = sub.add_parser("correctors", help="incremental and proxy corrector checks")
    s.add_argument("mode", choices=("verify-prime", "proxy"))
    s.add_argument("--L", type=float, default=1.0)
    s.add_argument("--M", type=float, default=4.0)
    s.add_argument("--lambda-tilde", type=float, default=1.0)
    s.add_argument("--epsilon2", type=float, default=0.5)
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--samples", type=int, default=20000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_correctors)

    s = sub.add_parser("rep-check", help="particle side against the periodic PDE energy")
    s.add_argument("--epsilon2", type=float, default=0.5)
    s.add_argument("--L", type=float, default=4.0)
    s.add_argument("--T", type=float, default=16.0)
    s.add_argument("--n-fields", type=int, default=1)
    s.add_argument("--n-paths", type=int, default=20000)
    s.add_argument("--grid", type=int, default=512)
    s.add_argument("--dt-pde", type=float, default=0.05)
    s.add_argument("--dt-sde", type=float, default=0.01)
    s.add_argument("--tolerance", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_rep_check)

    s = sub.add_parser("run", help="run a named suite")
    s.add_argument("suite", nargs="?", choices=suites.SUITES)
    s.add_argument("--preset", default=None, help="quick or paper (default $GFFLAB_PRESET or quick)")
    s.add_argument("--config", default=None, help="INI config; overrides --preset")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("plot", help="SVG figures for a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", default=None, help="directory (default: next to the manifest)")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("config", help="print the config for a suite preset")
    s.add_argument("suite", choices=suites.SUITES)
    s.add_argument("--preset", default=None)
    s.set_defaults(func=lambda a: print(harness.dump_config(harness.default_config(a.suite, a.preset)),
                                        end="") or EXIT_OK)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "run" and not (args.suite or args.config):
        print("run needs a suite name or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
