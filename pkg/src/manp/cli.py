"""Command-line interface: run, example, converge, validate."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .model import materialize
from .runner import (
    ConfigError,
    default_example_config,
    convergence_study,
    load_config,
    run,
    write_convergence_csv,
)


def _add_common_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nx", type=int, help="override grid cells in x")
    p.add_argument("--ny", type=int, help="override grid cells in y")
    p.add_argument("--dt", type=float, help="override time step")
    p.add_argument("--t-final", type=float, help="override final time")
    p.add_argument("--scheme", choices=("euler", "bdf2"), help="override time scheme")
    p.add_argument("--gauss", dest="gauss", action="store_true", default=None)
    p.add_argument("--no-gauss", dest="gauss", action="store_false")
    p.add_argument("--faraday", dest="faraday", action="store_true", default=None)
    p.add_argument("--no-faraday", dest="faraday", action="store_false")
    p.add_argument("--sweep-order", choices=("LL_to_UR", "UL_to_LR", "LR_to_UL", "UR_to_LL"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--snapshots", help="comma-separated snapshot times")
    p.add_argument("--mu-reference", choices=("previous_step", "initial"))


def _collect_overrides(args) -> dict:
    out = {}
    for src, dst in [
        ("nx", "nx"), ("ny", "ny"), ("dt", "dt"), ("t_final", "t_final"),
        ("scheme", "scheme"), ("gauss", "gauss"), ("faraday", "faraday"),
        ("sweep_order", "sweep_order"), ("out", "output_dir"),
        ("mu_reference", "mu_reference"),
    ]:
        v = getattr(args, src, None)
        if v is not None:
            out[dst] = v
    if getattr(args, "snapshots", None):
        out["snapshot_times"] = tuple(float(s) for s in args.snapshots.split(","))
    return out


def _print_run_summary(summary) -> None:
    rec = summary.records[-1]
    print(f"steps: {summary.n_steps}  wall: {summary.wall_time:.2f}s  "
          f"solver iterations: {summary.solver_iterations}")
    print(f"final t={rec.t:g}  mass={[format(m, '.12g') for m in rec.mass]}  "
          f"min_c={[format(m, '.6g') for m in rec.min_c]}")
    print(f"gauss residual: {rec.gauss_residual:.6e}  "
          f"faraday residual: {rec.faraday_residual:.6e}  energy: {rec.free_energy:.12g}")
    if summary.output_dir:
        print(f"outputs in {summary.output_dir}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="manp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a simulation from a JSON config file")
    p_run.add_argument("--config", required=True)

    p_ex = sub.add_parser("example", help="run a builtin example with paper defaults")
    p_ex.add_argument("--id", type=int, required=True, choices=(1, 2, 3))
    _add_common_overrides(p_ex)

    p_conv = sub.add_parser("converge", help="convergence study on a problem with exact solutions")
    p_conv.add_argument("--id", type=int, default=1, choices=(1,))
    p_conv.add_argument("--scheme", choices=("euler", "bdf2"), default="euler")
    p_conv.add_argument("--levels", required=True, help="comma-separated h values, coarse to fine")
    p_conv.add_argument("--dt-rule", choices=("h2", "h_over_500"), default=None)
    p_conv.add_argument("--t-final", type=float, default=1.0)
    p_conv.add_argument("--out", help="directory for convergence.csv")

    p_val = sub.add_parser("validate", help="materialize a config and check invariants only")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            _print_run_summary(run(load_config(args.config)))
        elif args.command == "example":
            cfg = default_example_config(args.id, **_collect_overrides(args))
            _print_run_summary(run(cfg))
        elif args.command == "converge":
            rule = args.dt_rule or ("h2" if args.scheme == "euler" else "h_over_500")
            levels = [float(s) for s in args.levels.split(",")]
            cfg = default_example_config(args.id, scheme=args.scheme, t_final=args.t_final)
            report = convergence_study(cfg, levels, rule)
            print(report.table())
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                write_convergence_csv(os.path.join(args.out, "convergence.csv"), report)
                print(f"wrote {os.path.join(args.out, 'convergence.csv')}")
        elif args.command == "validate":
            cfg = load_config(args.config)
            problem = materialize(cfg.problem_spec(), cfg.grid())
            print(json.dumps(cfg.canonical_dict(), sort_keys=True, indent=2))
            print(f"materialized OK: grid {problem.grid.nx}x{problem.grid.ny}, "
                  f"{problem.nspecies} species, kappa={problem.kappa:g}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
