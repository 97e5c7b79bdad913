"""Experiment drivers: single solves, h-convergence and subdomain sweeps."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bddc import build_bddc
from .fem import assemble, assemble_triplets, error_norm_h, l2_error, manufactured_problem
from .krylov import SolveReport, gmres
from .mesh import generate_structured, write_vtk
from .partition import block_partition, rcb_partition
from .schur import build_schur, solve_direct, split_dofs

log = logging.getLogger(__name__)

LEVELS = ("none", "C", "CE", "CEF")
PARTITIONERS = ("block", "rcb")
CSV_HEADER = ("dofs_total", "dofs_free", "N", "level", "theta", "iterations",
              "converged", "setup_s", "solve_s", "err_h", "err_l2", "status")

PRESETS = {
    "table1": dict(theta=0.5, n_list=(16, 32), N_list=(8, 16, 32, 64), levels=LEVELS),
    "table2": dict(theta=2.5, n_list=(16, 32), N_list=(8, 16, 32, 64), levels=LEVELS),
}


@dataclass
class RunConfig:
    mesh_n: int = 16
    dim_x: int = 2
    theta: float = 0.5
    n_subdomains: int = 8
    partitioner: str = "rcb"
    constraint_level: str = "CEF"
    tol: float = 1e-9
    max_it: int = 500
    gmres_side: str = "left"
    csv: str | None = None
    vtk: str | None = None
    seed: int = 0
    memory_cap_mb: float = 2048.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.n_subdomains < 1:
            raise ValueError(f"n_subdomains must be >= 1, got {self.n_subdomains}")
        if self.partitioner not in PARTITIONERS:
            raise ValueError(f"unknown partitioner {self.partitioner!r}")
        if self.constraint_level not in LEVELS:
            raise ValueError(f"unknown constraint level {self.constraint_level!r}")
        if self.gmres_side not in ("left", "right"):
            raise ValueError(f"unknown GMRES side {self.gmres_side!r}")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.max_it < 1:
            raise ValueError("max_it must be >= 1")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        """Load flat JSON keys matching the field names; ``overrides`` win."""
        data = json.loads(Path(path).read_text())
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


@dataclass
class RunResult:
    config: RunConfig
    dofs_total: int
    dofs_free: int
    report: SolveReport | None
    err_h: float = math.nan
    err_l2: float = math.nan
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        c = self.config
        rep = self.report
        if rep is None:
            iters, conv, setup, solve = "", "", math.nan, math.nan
        else:
            iters = rep.iterations_label()
            conv = str(bool(rep.converged)).lower()
            setup, solve = rep.setup_seconds, rep.solve_seconds
        return {
            "dofs_total": self.dofs_total,
            "dofs_free": self.dofs_free,
            "N": c.n_subdomains,
            "level": c.constraint_level,
            "theta": _fmt(c.theta),
            "iterations": iters,
            "converged": conv,
            "setup_s": _fmt(setup, ".4f"),
            "solve_s": _fmt(solve, ".4f"),
            "err_h": _fmt(self.err_h, ".6e"),
            "err_l2": _fmt(self.err_l2, ".6e"),
            "status": self.status,
        }


def _fmt(x, spec: str = "g") -> str:
    if isinstance(x, float) and math.isnan(x):
        return ""
    return format(x, spec)


def block_factors(N: int, n: int, dim_x: int) -> tuple[int, ...]:
    """Split ``N`` into per-axis block counts dividing ``n``, as even as possible."""
    d = dim_x + 1
    factors = [1] * d
    rest, p = N, 2
    primes = []
    while rest > 1:
        while rest % p == 0:
            primes.append(p)
            rest //= p
        p += 1
    for q in sorted(primes, reverse=True):
        order = sorted(range(d), key=lambda a: (factors[a], a))
        for a in order:
            if n % (factors[a] * q) == 0:
                factors[a] *= q
                break
        else:
            raise ValueError(f"cannot split a grid of {n} cells into {N} blocks")
    return tuple(factors)


def make_partition(mesh, config: RunConfig):
    if config.partitioner == "rcb":
        return rcb_partition(mesh, config.n_subdomains)
    f = block_factors(config.n_subdomains, mesh.n, mesh.dim_x)
    if mesh.dim_x == 1:
        return block_partition(mesh, f[0], 1, f[1])
    return block_partition(mesh, *f)


def estimate_workspace_mb(split, config: RunConfig) -> float:
    """Dense BDDC storage plus the Krylov basis, in megabytes."""
    words = split.n_interface * (config.max_it + 1)
    if config.constraint_level != "none":
        for loc in split.local_interface:
            words += 3 * loc.size ** 2
    return 8.0 * words / 2**20


def run_solve(config: RunConfig) -> RunResult:
    """Assemble, decompose, solve and measure errors for one configuration."""
    t_setup = time.perf_counter()
    mesh = generate_structured(config.mesh_n, config.dim_x)
    spec = manufactured_problem(config.theta)
    K, f, dof_map = assemble(mesh, spec)
    partition = make_partition(mesh, config)

    if config.n_subdomains == 1:
        x = solve_direct(K, f)
        setup_s = time.perf_counter() - t_setup
        res = float(np.linalg.norm(K @ x - f) / max(np.linalg.norm(f), 1e-300))
        report = SolveReport(0, True, [res], setup_s, 0.0, config.max_it)
        extra = {"full_residual": res}
    else:
        split = split_dofs(partition)
        need = estimate_workspace_mb(split, config)
        if need > config.memory_cap_mb:
            log.warning("skipping run: %.0f MB exceeds cap %.0f MB", need, config.memory_cap_mb)
            return RunResult(config, mesh.n_vertices, dof_map.n_free, None,
                             status="skipped(memory-guard)")
        trip = assemble_triplets(mesh, config.theta, dof_map)
        op = build_schur(K, split, trip, partition.cell_owner)
        g = op.reduce_rhs(f)
        P = None
        extra = {"n_interface": split.n_interface}
        if config.constraint_level != "none":
            coords = mesh.vertices[dof_map.free_vertices]
            P, geometry = build_bddc(op, partition, coords, config.constraint_level)
            extra.update(P.diagnostics(geometry))
        setup_s = time.perf_counter() - t_setup
        x_gamma, report = gmres(op, g, P, tol=config.tol, max_it=config.max_it,
                                side=config.gmres_side)
        report.setup_seconds = setup_s
        x = op.back_substitute(x_gamma, f)
        extra["full_residual"] = float(np.linalg.norm(K @ x - f) / np.linalg.norm(f))

    u_h = dof_map.expand(x)
    result = RunResult(config, mesh.n_vertices, dof_map.n_free, report,
                       error_norm_h(mesh, u_h, spec), l2_error(mesh, u_h, spec),
                       "ok" if report.converged else "not-converged", extra)
    if config.vtk:
        write_vtk(mesh, config.vtk,
                  point_data={"solution": u_h, "exact": spec.exact.value(mesh.vertices)},
                  cell_data={"owner": partition.cell_owner})
    if config.csv:
        write_csv([result.row()], config.csv)
    return result


def write_csv(rows, path=None, header=CSV_HEADER) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    text = buf.getvalue()
    if path:
        Path(path).write_text(text)
    return text


CONVERGENCE_HEADER = ("n", "dofs_total", "err_h", "err_l2", "order_h", "order_l2")


def run_convergence_study(config: RunConfig, n_list) -> list[dict]:
    n_list = list(n_list)
    if len(n_list) < 2:
        raise ValueError("a convergence study needs at least two mesh sizes")
    rows = []
    for n in n_list:
        r = run_solve(config.replace(mesh_n=n, csv=None, vtk=None))
        rows.append({"n": n, "dofs_total": r.dofs_total, "err_h": r.err_h, "err_l2": r.err_l2})
    for prev, cur in zip(rows, rows[1:]):
        ratio = math.log(cur["n"] / prev["n"])
        cur["order_h"] = math.log(prev["err_h"] / cur["err_h"]) / ratio
        cur["order_l2"] = math.log(prev["err_l2"] / cur["err_l2"]) / ratio
    if config.csv:
        write_csv([{k: (_fmt(v, ".6e") if isinstance(v, float) else v) for k, v in r.items()}
                   for r in rows], config.csv, CONVERGENCE_HEADER)
    return rows


def _sweep_one(cfg: RunConfig) -> dict:
    try:
        return run_solve(cfg).row()
    except Exception as exc:  # a failed cell must not abort the sweep
        log.error("run failed (n=%d N=%d level=%s): %s", cfg.mesh_n, cfg.n_subdomains,
                  cfg.constraint_level, exc)
        row = RunResult(cfg, (cfg.mesh_n + 1) ** (cfg.dim_x + 1), 0, None).row()
        row["dofs_free"] = ""
        row["status"] = f"error: {exc}".replace(",", ";")
        return row


def _sort_key(row):
    return (float(row["theta"]), LEVELS.index(row["level"]), int(row["dofs_total"]),
            int(row["N"]))


def run_scaling_study(config: RunConfig, N_list, levels=LEVELS, thetas=None,
                      n_list=None, workers: int = 1) -> list[dict]:
    """Cross product of subdomain counts, constraint levels, thetas and mesh sizes."""
    thetas = list(thetas) if thetas else [config.theta]
    n_list = list(n_list) if n_list else [config.mesh_n]
    for lev in levels:
        if lev not in LEVELS:
            raise ValueError(f"unknown constraint level {lev!r}")
    configs = [config.replace(theta=th, mesh_n=n, n_subdomains=N, constraint_level=lev,
                              csv=None, vtk=None)
               for th in thetas for lev in levels for n in n_list for N in N_list]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_one, c) for c in configs]
            for fut in as_completed(futures):
                rows.append(fut.result())
    else:
        rows = [_sweep_one(c) for c in configs]
    rows.sort(key=_sort_key)
    if config.csv:
        write_csv(rows, config.csv)
    return rows


def format_table(rows) -> str:
    """Iteration counts laid out as a grid of size by subdomain count.

    One block per constraint level, one line per problem size, one column
    per subdomain count.
    """
    Ns = sorted({int(r["N"]) for r in rows})
    out = []
    for theta in sorted({r["theta"] for r in rows}, key=float):
        out.append(f"theta = {theta}")
        for lev in LEVELS:
            sel = [r for r in rows if r["level"] == lev and r["theta"] == theta]
            if not sel:
                continue
            title = "No preconditioner" if lev == "none" else f"{lev} preconditioner"
            out.append(f"  {title}")
            out.append("  " + "dofs".ljust(10) + "".join(f"{N:>12}" for N in Ns))
            for dofs in sorted({int(r["dofs_total"]) for r in sel}):
                cells = {int(r["N"]): r for r in sel if int(r["dofs_total"]) == dofs}
                line = "  " + str(dofs).ljust(10)
                for N in Ns:
                    r = cells.get(N)
                    if r is None:
                        text = "-"
                    elif r["status"] in ("ok", "not-converged"):
                        text = r["iterations"]
                    else:
                        text = r["status"].split(":")[0]
                    line += f"{text:>12}"
                out.append(line)
    return "\n".join(out)
