"""Structured simplicial meshes of the space-time cylinder ``(0,1)^d x (0,1)``.

Vertices carry coordinates ``(x[, y], t)`` with time as the last axis. Cubes
(squares for ``dim_x=1``) are split by the Kuhn rule, one simplex per axis
permutation, which gives a conforming mesh without extra vertices.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_EPS = 1e-12


class MeshError(ValueError):
    """Raised for invalid mesh parameters or degenerate cells."""


class Tag(enum.IntEnum):
    INTERIOR = 0
    LATERAL = 1
    BOTTOM = 2
    TOP = 3
    BOTTOM_LATERAL = 4


DIRICHLET_TAGS = (Tag.LATERAL, Tag.BOTTOM, Tag.BOTTOM_LATERAL)


@dataclass(frozen=True)
class SpaceTimeMesh:
    dim_x: int
    vertices: np.ndarray
    cells: np.ndarray
    n: int
    boundary_tag: np.ndarray | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        """Space-time dimension ``dim_x + 1``."""
        return self.dim_x + 1

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def dirichlet_mask(self) -> np.ndarray:
        if self.boundary_tag is None:
            raise MeshError("mesh has no boundary tags; call classify_boundary first")
        return np.isin(self.boundary_tag, np.array(DIRICHLET_TAGS))

    def barycenters(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)


@dataclass(frozen=True)
class CellGeometry:
    volume: float
    grads: np.ndarray
    h: float
    points: np.ndarray

    @property
    def grad_x(self) -> np.ndarray:
        return self.grads[:, :-1]

    @property
    def grad_t(self) -> np.ndarray:
        return self.grads[:, -1]


def generate_structured(n: int, dim_x: int = 2) -> SpaceTimeMesh:
    """Kuhn-split ``n^(dim_x+1)`` grid of the unit space-time box, tags filled."""
    if int(n) != n or n < 1:
        raise MeshError(f"grid size must be a positive integer, got {n!r}")
    if dim_x not in (1, 2):
        raise MeshError(f"dim_x must be 1 or 2, got {dim_x!r}")
    n = int(n)
    d = dim_x + 1
    shape = (n + 1,) * d

    # vertex index = sum_k i_k * (n+1)^k, axis 0 fastest
    idx = np.indices(shape[::-1]).reshape(d, -1)[::-1]
    vertices = idx.T.astype(float) / n
    strides = (n + 1) ** np.arange(d)

    base = np.indices((n,) * d).reshape(d, -1)[::-1].T @ strides
    cells = []
    for perm in itertools.permutations(range(d)):
        path = [np.zeros(d, dtype=np.int64)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] += 1
            path.append(step)
        offsets = np.array([p @ strides for p in path])
        cells.append(base[:, None] + offsets[None, :])
    # cube-major ordering keeps the simplices of a cube adjacent
    cells = np.stack(cells, axis=1).reshape(-1, d + 1)

    cells = _orient_positive(vertices, cells)
    mesh = SpaceTimeMesh(dim_x=dim_x, vertices=vertices, cells=cells, n=n)
    return classify_boundary(mesh)


def _orient_positive(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    det = np.linalg.det(p[:, 1:] - p[:, :1])
    cells = cells.copy()
    flip = det < 0
    cells[flip, -2], cells[flip, -1] = cells[flip, -1], cells[flip, -2].copy()
    return cells


def classify_boundary(mesh: SpaceTimeMesh) -> SpaceTimeMesh:
    x = mesh.vertices[:, :-1]
    t = mesh.vertices[:, -1]
    on_wall = np.any((x < _EPS) | (x > 1.0 - _EPS), axis=1)
    bottom = t < _EPS
    top = t > 1.0 - _EPS

    tag = np.full(mesh.n_vertices, Tag.INTERIOR, dtype=np.int8)
    tag[top & ~on_wall] = Tag.TOP
    tag[on_wall & ~bottom] = Tag.LATERAL
    tag[bottom & ~on_wall] = Tag.BOTTOM
    tag[bottom & on_wall] = Tag.BOTTOM_LATERAL
    return SpaceTimeMesh(mesh.dim_x, mesh.vertices, mesh.cells, mesh.n, tag)


def geometry_arrays(vertices: np.ndarray, cells: np.ndarray):
    """Batched cell geometry.

    Returns
    -------
    volume : (C,) array
    grads : (C, d+1, d) array
        Constant gradients of the barycentric basis functions; the last
        column is the time derivative.
    h : (C,) array
        Longest edge length.
    """
    p = vertices[cells]
    d = p.shape[2]
    jac = p[:, 1:] - p[:, :1]  # rows are edge vectors
    det = np.linalg.det(jac)
    volume = np.abs(det) / math.factorial(d)
    bad = np.flatnonzero(volume <= _EPS * 1e-3)
    if bad.size:
        raise MeshError(f"degenerate cell {int(bad[0])} (volume {volume[bad[0]]:.3e})")
    # lambda_k(p) = inv(jac.T) (p - p0), so grad lambda_k is column k of inv(jac)
    inv = np.linalg.inv(jac)
    grads = np.empty((p.shape[0], d + 1, d))
    grads[:, 1:] = np.swapaxes(inv, 1, 2)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)

    i, j = np.triu_indices(d + 1, k=1)
    h = np.linalg.norm(p[:, i] - p[:, j], axis=2).max(axis=1)
    return volume, grads, h


def cell_geometry(mesh: SpaceTimeMesh, index: int) -> CellGeometry:
    if not 0 <= index < mesh.n_cells:
        raise IndexError(f"cell index {index} out of range")
    cell = mesh.cells[index : index + 1]
    vol, grads, h = geometry_arrays(mesh.vertices, cell)
    return CellGeometry(float(vol[0]), grads[0], float(h[0]), mesh.vertices[cell[0]])


def simplex_geometry(points) -> CellGeometry:
    """Geometry of a single simplex given by its vertex coordinates."""
    pts = np.asarray(points, dtype=float)
    vol, grads, h = geometry_arrays(pts, np.arange(pts.shape[0])[None, :])
    return CellGeometry(float(vol[0]), grads[0], float(h[0]), pts)


def top_facets(mesh: SpaceTimeMesh) -> np.ndarray:
    """Boundary facets lying in ``t = 1``, as vertex-index tuples."""
    on_top = mesh.vertices[:, -1] > 1.0 - _EPS
    d = mesh.dim
    facets = []
    for drop in range(d + 1):
        keep = [k for k in range(d + 1) if k != drop]
        sub = mesh.cells[:, keep]
        facets.append(sub[np.all(on_top[sub], axis=1)])
    return np.concatenate(facets, axis=0)


_VTK_CELL_TYPE = {3: 5, 4: 10}  # triangle, tetrahedron (keyed by vertex count)


def write_vtk(mesh: SpaceTimeMesh, path, point_data=None, cell_data=None) -> Path:
    """Write a legacy ASCII VTK unstructured grid.

    ``point_data`` and ``cell_data`` map field names to arrays sized to the
    vertex and cell counts respectively.
    """
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    for name, values in point_data.items():
        if len(values) != mesh.n_vertices:
            raise ValueError(f"point field {name!r} has {len(values)} values, "
                             f"expected {mesh.n_vertices}")
    for name, values in cell_data.items():
        if len(values) != mesh.n_cells:
            raise ValueError(f"cell field {name!r} has {len(values)} values, "
                             f"expected {mesh.n_cells}")

    d = mesh.dim
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, :d] = mesh.vertices
    nv = d + 1
    lines = [
        "# vtk DataFile Version 3.0",
        f"space-time mesh n={mesh.n} dim_x={mesh.dim_x}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{a!r} {b!r} {c!r}" for a, b, c in pts.tolist()]
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nv + 1)}")
    lines += [f"{nv} " + " ".join(map(str, c)) for c in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(_VTK_CELL_TYPE[nv])] * mesh.n_cells
    for header, count, fields in (("POINT_DATA", mesh.n_vertices, point_data),
                                  ("CELL_DATA", mesh.n_cells, cell_data)):
        if not fields:
            continue
        lines.append(f"{header} {count}")
        for name, values in fields.items():
            values = np.asarray(values)
            kind = "int" if np.issubdtype(values.dtype, np.integer) else "double"
            lines.append(f"SCALARS {name} {kind} 1")
            lines.append("LOOKUP_TABLE default")
            lines += [repr(v) for v in values.tolist()]

    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path
