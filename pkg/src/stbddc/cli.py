"""Command line entry point: ``stbddc {solve,convergence,sweep,export}``."""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import experiments as ex
from .fem import manufactured_solution
from .mesh import generate_structured, write_vtk
from .partition import write_partition_csv

_FLAG_TO_FIELD = {
    "n": "mesh_n", "dim": "dim_x", "theta": "theta", "subdomains": "n_subdomains",
    "partitioner": "partitioner", "constraints": "constraint_level", "tol": "tol",
    "max_it": "max_it", "side": "gmres_side", "seed": "seed", "csv": "csv",
    "vtk": "vtk", "memory_cap_mb": "memory_cap_mb",
}


def _int_list(text):
    return [int(s) for s in text.split(",") if s.strip()]


def _float_list(text):
    return [float(s) for s in text.split(",") if s.strip()]


def _str_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with RunConfig keys")
    p.add_argument("--n", type=int, help="cells per axis of the generating grid")
    p.add_argument("--dim", type=int, choices=(1, 2), help="spatial dimension")
    p.add_argument("--theta", type=float)
    p.add_argument("--subdomains", type=int)
    p.add_argument("--partitioner", choices=ex.PARTITIONERS)
    p.add_argument("--constraints", choices=ex.LEVELS)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-it", dest="max_it", type=int)
    p.add_argument("--side", choices=("left", "right"))
    p.add_argument("--seed", type=int)
    p.add_argument("--csv")
    p.add_argument("--vtk")
    p.add_argument("--memory-cap-mb", dest="memory_cap_mb", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stbddc",
        description="Space-time FEM for the heat equation with BDDC-preconditioned GMRES.")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("solve", help="single solve, one CSV row"))

    p = sub.add_parser("convergence", help="h-convergence study")
    _common(p)
    p.add_argument("--n-list", type=_int_list, default=[8, 16, 32])

    p = sub.add_parser("sweep", help="subdomain x constraint sweep")
    _common(p)
    p.add_argument("--preset", choices=sorted(ex.PRESETS))
    p.add_argument("--n-list", type=_int_list)
    p.add_argument("--subdomains-list", type=_int_list)
    p.add_argument("--levels", type=_str_list)
    p.add_argument("--thetas", type=_float_list)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("export", help="write mesh, partition and exact field as VTK")
    _common(p)
    return parser


def config_from_args(args) -> ex.RunConfig:
    overrides = {field: getattr(args, flag) for flag, field in _FLAG_TO_FIELD.items()
                 if getattr(args, flag, None) is not None}
    if args.config:
        return ex.RunConfig.from_file(args.config, **overrides)
    return ex.RunConfig(**overrides)


def _cmd_solve(args, cfg):
    result = ex.run_solve(cfg)
    sys.stdout.write(ex.write_csv([result.row()]))


def _cmd_convergence(args, cfg):
    rows = ex.run_convergence_study(cfg, args.n_list)
    print(f"{'n':>5} {'dofs':>8} {'err_h':>12} {'err_l2':>12} {'order_h':>8} {'order_l2':>8}")
    for r in rows:
        oh = f"{r['order_h']:8.3f}" if "order_h" in r else " " * 8
        ol = f"{r['order_l2']:8.3f}" if "order_l2" in r else " " * 8
        print(f"{r['n']:>5} {r['dofs_total']:>8} {r['err_h']:12.4e} {r['err_l2']:12.4e} {oh} {ol}")


def _cmd_sweep(args, cfg):
    preset = ex.PRESETS.get(args.preset, {})
    if "theta" in preset and args.theta is None:
        cfg = cfg.replace(theta=preset["theta"])
    rows = ex.run_scaling_study(
        cfg,
        N_list=args.subdomains_list or preset.get("N_list") or [cfg.n_subdomains],
        levels=args.levels or preset.get("levels") or ex.LEVELS,
        thetas=args.thetas,
        n_list=args.n_list or preset.get("n_list"),
        workers=args.workers,
    )
    print(ex.format_table(rows))


def _cmd_export(args, cfg):
    mesh = generate_structured(cfg.mesh_n, cfg.dim_x)
    partition = ex.make_partition(mesh, cfg)
    path = cfg.vtk or "mesh.vtk"
    write_vtk(mesh, path, point_data={"solution": manufactured_solution(mesh.vertices)},
              cell_data={"owner": partition.cell_owner})
    if cfg.csv:
        write_partition_csv(partition, cfg.csv)
    owners = np.unique(partition.cell_owner).size
    print(f"wrote {path}: {mesh.n_vertices} points, {mesh.n_cells} cells, {owners} subdomains")


_COMMANDS = {"solve": _cmd_solve, "convergence": _cmd_convergence,
             "sweep": _cmd_sweep, "export": _cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        _COMMANDS[args.command](args, cfg)
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        print(f"stbddc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
