"""Stabilized space-time P1 discretization of ``u_t - Lap_x u = f``.

The test function on each cell is ``v + theta * h_K * dv/dt``. For P1 trial
functions the term ``-theta h_K Lap_x u dv/dt`` vanishes cell-wise and is
not assembled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import CellGeometry, SpaceTimeMesh, cell_geometry, geometry_arrays, top_facets
from .quadrature import simplex_rule

NORM_QUAD_DEGREE = 4

Field = Callable[[np.ndarray], np.ndarray]


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class ExactSolution:
    """Exact field with its spatial gradient and time derivative.

    All callables take points of shape ``(..., d)`` with time last.
    """
    value: Field
    grad_x: Field
    dt: Field


@dataclass(frozen=True)
class ProblemSpec:
    theta: float
    rhs: Field
    exact: ExactSolution | None = None

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")


@dataclass(frozen=True)
class DofMap:
    """Free-dof numbering. Dirichlet vertices map to ``-1``."""
    free_vertices: np.ndarray
    vertex_to_dof: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free_vertices.size

    @property
    def n_total(self) -> int:
        return self.vertex_to_dof.size

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        """Nodal vector over all vertices, zero on the Dirichlet set."""
        full = np.zeros(self.n_total)
        full[self.free_vertices] = x_free
        return full


def make_dof_map(mesh: SpaceTimeMesh) -> DofMap:
    free = np.flatnonzero(~mesh.dirichlet_mask())
    v2d = np.full(mesh.n_vertices, -1, dtype=np.int64)
    v2d[free] = np.arange(free.size)
    return DofMap(free, v2d)


# -- manufactured solution ---------------------------------------------------

def manufactured_solution(p) -> np.ndarray:
    """``sin(pi x) sin(pi y) sin(pi t)``; the ``y`` factor is absent for 1D space."""
    p = np.asarray(p, dtype=float)
    return np.prod(np.sin(np.pi * p), axis=-1)


def manufactured_rhs(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    dim_x = p.shape[-1] - 1
    s = np.sin(np.pi * p)
    space = np.prod(s[..., :-1], axis=-1)
    t = p[..., -1]
    return space * (np.pi * np.cos(np.pi * t) + dim_x * np.pi**2 * np.sin(np.pi * t))


def _manufactured_grad_x(p):
    p = np.asarray(p, dtype=float)
    s = np.sin(np.pi * p)
    c = np.cos(np.pi * p)
    dim_x = p.shape[-1] - 1
    out = np.empty(p.shape[:-1] + (dim_x,))
    for k in range(dim_x):
        f = s.copy()
        f[..., k] = np.pi * c[..., k]
        out[..., k] = np.prod(f, axis=-1)
    return out


def _manufactured_dt(p):
    p = np.asarray(p, dtype=float)
    s = np.sin(np.pi * p)
    return np.prod(s[..., :-1], axis=-1) * np.pi * np.cos(np.pi * p[..., -1])


MANUFACTURED = ExactSolution(manufactured_solution, _manufactured_grad_x, _manufactured_dt)


def manufactured_problem(theta: float) -> ProblemSpec:
    return ProblemSpec(theta=theta, rhs=manufactured_rhs, exact=MANUFACTURED)


# -- element kernels ---------------------------------------------------------

def _local_matrices(volume, grads, h, theta):
    """Batched local matrices ``A[c, i, j]``: row ``i`` test, column ``j`` trial."""
    nv = grads.shape[1]
    gx = grads[..., :-1]
    gt = grads[..., -1]
    lap = np.einsum("cik,cjk->cij", gx, gx)
    stab = (theta * h)[:, None, None] * gt[:, :, None] * gt[:, None, :]
    conv = np.broadcast_to(gt[:, None, :] / nv, lap.shape)
    return volume[:, None, None] * (lap + stab + conv)


def element_matrix(geom: CellGeometry, theta: float) -> np.ndarray:
    return _local_matrices(np.array([geom.volume]), geom.grads[None],
                           np.array([geom.h]), theta)[0]


def _local_loads(points, volume, grads, h, theta, rhs, quad_degree):
    d = points.shape[2]
    bary, w = simplex_rule(d, quad_degree)
    qp = np.einsum("qi,cid->cqd", bary, points)
    fq = np.asarray(rhs(qp), dtype=float) * w[None, :]
    scale = volume * math.factorial(d)
    gt = grads[..., -1]
    b = fq @ bary + fq.sum(axis=1)[:, None] * (theta * h)[:, None] * gt
    return scale[:, None] * b


def element_load(geom: CellGeometry, theta: float, rhs: Field,
                 quad_degree: int = NORM_QUAD_DEGREE) -> np.ndarray:
    return _local_loads(geom.points[None], np.array([geom.volume]), geom.grads[None],
                        np.array([geom.h]), theta, rhs, quad_degree)[0]


# -- global assembly ---------------------------------------------------------

@dataclass(frozen=True)
class Triplets:
    """Unreduced COO contributions restricted to free-free pairs.

    ``cell`` records the originating cell of each entry so subdomain
    (Neumann) matrices can be summed from the same data.
    """
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    cell: np.ndarray


def assemble_triplets(mesh: SpaceTimeMesh, theta: float, dof_map: DofMap) -> Triplets:
    volume, grads, h = geometry_arrays(mesh.vertices, mesh.cells)
    local = _local_matrices(volume, grads, h, theta)
    nv = mesh.cells.shape[1]
    dofs = dof_map.vertex_to_dof[mesh.cells]
    rows = np.repeat(dofs, nv, axis=1).ravel()
    cols = np.tile(dofs, (1, nv)).ravel()
    cell = np.repeat(np.arange(mesh.n_cells), nv * nv)
    keep = (rows >= 0) & (cols >= 0)
    return Triplets(rows[keep], cols[keep], local.ravel()[keep], cell[keep])


def triplets_to_csr(t: Triplets, n: int, mask=None) -> sp.csr_matrix:
    if mask is not None:
        t = Triplets(t.rows[mask], t.cols[mask], t.vals[mask], t.cell[mask])
    mat = sp.coo_matrix((t.vals, (t.rows, t.cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def assemble_load(mesh: SpaceTimeMesh, spec: ProblemSpec, dof_map: DofMap,
                  quad_degree: int = NORM_QUAD_DEGREE) -> np.ndarray:
    volume, grads, h = geometry_arrays(mesh.vertices, mesh.cells)
    b = _local_loads(mesh.vertices[mesh.cells], volume, grads, h, spec.theta,
                     spec.rhs, quad_degree)
    dofs = dof_map.vertex_to_dof[mesh.cells].ravel()
    keep = dofs >= 0
    return np.bincount(dofs[keep], weights=b.ravel()[keep], minlength=dof_map.n_free)


def assemble(mesh: SpaceTimeMesh, spec: ProblemSpec, quad_degree: int = NORM_QUAD_DEGREE):
    """Global system over free dofs.

    Returns
    -------
    K : scipy.sparse.csr_matrix
    f : ndarray
    dof_map : DofMap
    """
    dof_map = make_dof_map(mesh)
    if dof_map.n_free == 0:
        raise AssemblyError("mesh has no free degrees of freedom")
    trip = assemble_triplets(mesh, spec.theta, dof_map)
    K = triplets_to_csr(trip, dof_map.n_free)
    f = assemble_load(mesh, spec, dof_map, quad_degree)
    return K, f, dof_map


def assemble_dense(mesh: SpaceTimeMesh, theta: float) -> np.ndarray:
    """Reference assembly over all vertices by an explicit cell loop."""
    A = np.zeros((mesh.n_vertices, mesh.n_vertices))
    for c in range(mesh.n_cells):
        local = element_matrix(cell_geometry(mesh, c), theta)
        idx = mesh.cells[c]
        A[np.ix_(idx, idx)] += local
    return A


# -- error norms -------------------------------------------------------------

def _require_exact(spec: ProblemSpec) -> ExactSolution:
    if spec.exact is None:
        raise ValueError("problem has no exact solution; error norms unavailable")
    return spec.exact


def _cell_quadrature(mesh: SpaceTimeMesh, degree: int):
    volume, grads, h = geometry_arrays(mesh.vertices, mesh.cells)
    bary, w = simplex_rule(mesh.dim, degree)
    qp = np.einsum("qi,cid->cqd", bary, mesh.vertices[mesh.cells])
    wq = w[None, :] * (volume * math.factorial(mesh.dim))[:, None]
    return volume, grads, h, bary, qp, wq


def _top_term(mesh: SpaceTimeMesh, diff_at: Callable, degree: int) -> float:
    facets = top_facets(mesh)
    if facets.size == 0:
        return 0.0
    k = mesh.dim_x
    pts = mesh.vertices[facets]
    if k == 1:
        measure = np.abs(pts[:, 1, 0] - pts[:, 0, 0])
    else:
        e = pts[:, 1:, :k] - pts[:, :1, :k]
        measure = np.abs(np.linalg.det(e)) / math.factorial(k)
    bary, w = simplex_rule(k, degree)
    qp = np.einsum("qi,cid->cqd", bary, pts)
    vals = diff_at(facets, bary, qp)
    return float(np.sum(vals**2 * w[None, :] * (measure * math.factorial(k))[:, None]))


def error_norm_h(mesh: SpaceTimeMesh, u_h: np.ndarray, spec: ProblemSpec,
                 degree: int = NORM_QUAD_DEGREE) -> float:
    """``||u - u_h||_h`` for a nodal vector ``u_h`` over all vertices."""
    exact = _require_exact(spec)
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_vertices,):
        raise ValueError(f"u_h must have {mesh.n_vertices} entries, got {u_h.shape}")
    volume, grads, h, bary, qp, wq = _cell_quadrature(mesh, degree)
    nodal = u_h[mesh.cells]
    gh = np.einsum("ci,cid->cd", nodal, grads)
    ex_gx = exact.grad_x(qp)
    ex_dt = exact.dt(qp)
    ex = np.sum((ex_gx - gh[:, None, :-1]) ** 2, axis=2)
    et = (ex_dt - gh[:, None, -1]) ** 2
    total = np.sum(wq * (ex + (spec.theta * h)[:, None] * et))

    def top_diff(facets, fb, fq):
        return exact.value(fq) - u_h[facets] @ fb.T

    total += 0.5 * _top_term(mesh, top_diff, degree)
    return math.sqrt(total)


def l2_error(mesh: SpaceTimeMesh, u_h: np.ndarray, spec: ProblemSpec,
             degree: int = NORM_QUAD_DEGREE) -> float:
    exact = _require_exact(spec)
    u_h = np.asarray(u_h, dtype=float)
    if u_h.shape != (mesh.n_vertices,):
        raise ValueError(f"u_h must have {mesh.n_vertices} entries, got {u_h.shape}")
    _, _, _, bary, qp, wq = _cell_quadrature(mesh, degree)
    uh_q = u_h[mesh.cells] @ bary.T
    return math.sqrt(float(np.sum(wq * (exact.value(qp) - uh_q) ** 2)))


def norm_h_matrix(mesh: SpaceTimeMesh, theta: float, dof_map: DofMap) -> sp.csr_matrix:
    """Sparse Gram matrix of the discrete ``||.||_h`` norm over free dofs."""
    volume, grads, h = geometry_arrays(mesh.vertices, mesh.cells)
    gx = grads[..., :-1]
    gt = grads[..., -1]
    local = volume[:, None, None] * (
        np.einsum("cik,cjk->cij", gx, gx)
        + (theta * h)[:, None, None] * gt[:, :, None] * gt[:, None, :])
    rows = [np.repeat(mesh.cells, mesh.dim + 1, axis=1).ravel()]
    cols = [np.tile(mesh.cells, (1, mesh.dim + 1)).ravel()]
    vals = [local.ravel()]

    facets = top_facets(mesh)
    if facets.size:
        k = mesh.dim_x
        pts = mesh.vertices[facets][:, :, :k]
        measure = np.abs(np.linalg.det(pts[:, 1:] - pts[:, :1])) / math.factorial(k)
        mass = (np.ones((k + 1, k + 1)) + np.eye(k + 1)) / ((k + 1) * (k + 2))
        rows.append(np.repeat(facets, k + 1, axis=1).ravel())
        cols.append(np.tile(facets, (1, k + 1)).ravel())
        vals.append((0.5 * measure[:, None, None] * mass).ravel())

    rows = dof_map.vertex_to_dof[np.concatenate(rows)]
    cols = dof_map.vertex_to_dof[np.concatenate(cols)]
    vals = np.concatenate(vals)
    keep = (rows >= 0) & (cols >= 0)
    n = dof_map.n_free
    return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()


def coercivity_probe(K, dof_map: DofMap, mesh: SpaceTimeMesh, spec: ProblemSpec,
                     trials: int = 100, seed: int = 0) -> float:
    """Minimum of ``v^T K v / ||v||_h^2`` over random nonzero free vectors."""
    N = norm_h_matrix(mesh, spec.theta, dof_map)
    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(trials):
        v = rng.standard_normal(dof_map.n_free)
        while not np.any(v):
            v = rng.standard_normal(dof_map.n_free)
        best = min(best, float(v @ (K @ v)) / float(v @ (N @ v)))
    return best
