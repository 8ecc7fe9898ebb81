"""Command line entry point: ``obstaclelab <command> ...``."""

import argparse
import os
import sys

import numpy as np

from ..capacity import capacity, parse_grid_set
from ..errors import ObstacleLabError
from .experiments import REGISTRY, describe, run_experiment
from .output import FORMATS, emit_all, to_csv
from .refine import LevelError, run_refinement, solve_level
from .scenario import load_scenario, load_shipped, shipped_scenario_path

OUTPUT_ENV = "OBSTACLELAB_OUTPUT_DIR"


def _load(ref):
    if os.path.exists(ref):
        return load_scenario(ref)
    if shipped_scenario_path(ref).is_file():
        return load_shipped(ref)
    raise FileNotFoundError(f"no scenario file or shipped scenario named {ref!r}")


def _overrides(args):
    return {"tol": args.tol, "method": args.method, "omega": args.omega, "q": args.q}


def _out_dir(args, scn=None):
    return args.out or os.environ.get(OUTPUT_ENV) or (scn.output if scn else None)


def _write(table, stem, args, scn=None):
    directory = _out_dir(args, scn)
    if directory is None:
        sys.stdout.write(to_csv(table))
        return
    for path in emit_all(table, os.path.join(directory, stem), args.format):
        print(f"wrote {path}")


def cmd_solve(args):
    scn = _load(args.scenario).with_overrides(**_overrides(args))
    level = args.level if args.level is not None else scn.levels[-1]
    sol, grid, op, load = solve_level(scn, level)
    from ..obstacle import check_mass_bound

    bound = check_mass_bound(sol, rho=scn.rho_measure())
    print(f"scenario {scn.name}  level {level}  h {grid.h:g}  nodes {op.n}")
    print(f"method {sol.method}  iterations {sol.iterations}")
    print(f"mass(lambda) {sol.mass:.10g}  bound {bound.tv_bound:.10g}  "
          f"{'PASS' if bound.passed else 'FAIL'}")
    print(f"max|u| {float(np.abs(sol.u).max(initial=0)):.10g}  contact nodes {sol.contact_nodes}")
    print(f"complementarity {sol.complementarity_residual:.3e}  "
          f"feasibility {sol.feasibility_residual:.3e}")
    return 0 if bound.passed else 1


def cmd_refine(args):
    scn = _load(args.scenario).with_overrides(**_overrides(args), levels=args.levels)
    table = run_refinement(scn)
    _write(table, scn.name, args, scn)
    for check in table.metadata["checks"]:
        if not check["passed"]:
            print(f"FAIL  {check['check']} at level {check['level']}", file=sys.stderr)
    return 0 if table.metadata["passed"] else 1


def cmd_experiment(args):
    overrides = {k: v for k, v in _overrides(args).items() if v is not None}
    if args.levels:
        overrides["levels"] = args.levels
    result = run_experiment(args.name, **overrides)
    _write(result.table, args.name, args)
    print(result.report())
    return 0 if result.passed else 1


def cmd_capacity(args):
    scn = _load(args.scenario).with_overrides(**_overrides(args))
    level = args.level if args.level is not None else scn.levels[-1]
    op = scn.operator(level)
    E = parse_grid_set(args.set, op.grid)
    cap, sol = capacity(op, E, scn.vi_config(), return_potential=True)
    agree = abs(cap - sol.mass) <= 1e-8 * max(1.0, abs(cap))
    print(f"set nodes {len(E)}  capacity {cap:.10g}  reaction mass {sol.mass:.10g}  "
          f"{'PASS' if agree else 'FAIL'}")
    return 0 if agree else 1


def cmd_list(args):
    for name in REGISTRY:
        print(f"{name:24s} {describe(name)}")
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, help="solver tolerance")
    common.add_argument("--method", choices=["psor", "activeset"], help="VI solver")
    common.add_argument("--omega", type=float, help="PSOR relaxation factor")
    common.add_argument("--q", type=float, help="Sobolev exponent for reported norms")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV})")
    common.add_argument("--format", nargs="+", default=["csv"], choices=sorted(FORMATS),
                        help="output formats")

    parser = argparse.ArgumentParser(prog="obstaclelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one level of a scenario")
    p.add_argument("scenario", help="scenario file or shipped scenario name")
    p.add_argument("--level", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("refine", parents=[common], help="run a refinement study")
    p.add_argument("scenario")
    p.add_argument("--levels", type=int, nargs="+")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("experiment", parents=[common], help="run a registered experiment")
    p.add_argument("name")
    p.add_argument("--levels", type=int, nargs="+")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("capacity", parents=[common], help="capacity of a grid set")
    p.add_argument("scenario")
    p.add_argument("--set", required=True, help="e.g. 'ball([0.5, 0.5], 0.1) | points([[0.2, 0.2]])'")
    p.add_argument("--level", type=int)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("list-experiments", help="list registered experiments")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ObstacleLabError, LevelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
