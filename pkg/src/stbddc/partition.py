"""Element-based non-overlapping decompositions of a space-time mesh."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fem import DofMap, make_dof_map
from .mesh import SpaceTimeMesh


class PartitionError(ValueError):
    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {detail}" if detail else kind)


@dataclass(frozen=True)
class Partition:
    """Cell ownership plus, for every free dof, the subdomains touching it.

    Membership is stored CSR-style: the sorted ids of free dof ``k`` are
    ``member_ids[member_offsets[k]:member_offsets[k+1]]``.
    """
    n_subdomains: int
    cell_owner: np.ndarray
    member_offsets: np.ndarray
    member_ids: np.ndarray
    dof_map: DofMap

    @property
    def multiplicity(self) -> np.ndarray:
        return np.diff(self.member_offsets)

    def membership(self, dof: int) -> tuple[int, ...]:
        a, b = self.member_offsets[dof], self.member_offsets[dof + 1]
        return tuple(int(s) for s in self.member_ids[a:b])

    def interface_mask(self) -> np.ndarray:
        return self.multiplicity >= 2

    def cells_of(self, sub: int) -> np.ndarray:
        return np.flatnonzero(self.cell_owner == sub)


def _membership(mesh: SpaceTimeMesh, owner: np.ndarray, dof_map: DofMap):
    nv = mesh.cells.shape[1]
    dofs = dof_map.vertex_to_dof[mesh.cells].ravel()
    subs = np.repeat(owner, nv)
    keep = dofs >= 0
    n_sub = int(owner.max()) + 1 if owner.size else 1
    key = np.unique(dofs[keep].astype(np.int64) * n_sub + subs[keep])
    dof_of, sub_of = np.divmod(key, n_sub)
    counts = np.bincount(dof_of, minlength=dof_map.n_free)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, sub_of.astype(np.int64)


def partition_from_owner(mesh: SpaceTimeMesh, owner, n_subdomains: int) -> Partition:
    """Wrap a raw ownership array; run :func:`validate_partition` to check it."""
    owner = np.asarray(owner, dtype=np.int64)
    dof_map = make_dof_map(mesh)
    offsets, ids = _membership(mesh, owner, dof_map)
    return Partition(int(n_subdomains), owner, offsets, ids, dof_map)


def block_partition(mesh: SpaceTimeMesh, px: int, py: int = 1, pt: int = 1) -> Partition:
    """Tensor-product blocks; a cell belongs to the block holding its barycenter.

    For ``dim_x=1`` only ``px`` and ``pt`` are used and ``py`` must be 1.
    """
    factors = (px, pt) if mesh.dim_x == 1 else (px, py, pt)
    if mesh.dim_x == 1 and py != 1:
        raise PartitionError("indivisible grid", "py must be 1 for dim_x=1")
    for p in factors:
        if p < 1 or mesh.n % p:
            raise PartitionError("indivisible grid", f"n={mesh.n} not divisible by {p}")
    bc = mesh.barycenters()
    owner = np.zeros(mesh.n_cells, dtype=np.int64)
    stride = 1
    for axis, p in enumerate(factors):
        block = np.minimum((bc[:, axis] * p).astype(np.int64), p - 1)
        owner += stride * block
        stride *= p
    return partition_from_owner(mesh, owner, stride)


def rcb_partition(mesh: SpaceTimeMesh, n_subdomains: int) -> Partition:
    """Recursive coordinate bisection of cell barycenters.

    Each split cuts the widest axis (lowest index on ties) so that the two
    sides receive cell counts proportional to their subdomain counts.
    Equal coordinates are ordered by cell index.
    """
    N = int(n_subdomains)
    if N < 1:
        raise PartitionError("invalid subdomain count", str(n_subdomains))
    if N > mesh.n_cells:
        raise PartitionError("too many subdomains",
                             f"{N} subdomains for {mesh.n_cells} cells")
    bc = mesh.barycenters()
    owner = np.empty(mesh.n_cells, dtype=np.int64)
    stack = [(np.arange(mesh.n_cells), N, 0)]
    while stack:
        idx, k, label = stack.pop()
        if k == 1:
            owner[idx] = label
            continue
        pts = bc[idx]
        axis = int(np.argmax(np.ptp(pts, axis=0)))
        order = np.lexsort((idx, pts[:, axis]))
        k_left = k // 2
        n_left = int(round(idx.size * k_left / k))
        stack.append((idx[order[n_left:]], k - k_left, label + k_left))
        stack.append((idx[order[:n_left]], k_left, label))
    return partition_from_owner(mesh, owner, N)


@dataclass(frozen=True)
class PartitionDiagnostics:
    cells_per_subdomain: np.ndarray
    dofs_per_subdomain: np.ndarray
    n_interface: int
    interface_fraction: float


def validate_partition(mesh: SpaceTimeMesh, partition: Partition) -> PartitionDiagnostics:
    owner = partition.cell_owner
    N = partition.n_subdomains
    if owner.shape != (mesh.n_cells,):
        raise PartitionError("length mismatch",
                             f"{owner.shape[0]} owners for {mesh.n_cells} cells")
    if owner.size and (owner.min() < 0 or owner.max() >= N):
        raise PartitionError("owner out of range", f"ids must lie in [0, {N})")
    cells = np.bincount(owner, minlength=N)
    empty = np.flatnonzero(cells == 0)
    if empty.size:
        raise PartitionError("empty subdomain", f"subdomain {int(empty[0])} owns no cells")

    mult = partition.multiplicity
    if np.any(mult == 0):
        raise PartitionError("empty membership",
                             f"free dof {int(np.argmin(mult))} touches no subdomain")
    offsets, ids = _membership(mesh, owner, partition.dof_map)
    if not (np.array_equal(offsets, partition.member_offsets)
            and np.array_equal(ids, partition.member_ids)):
        raise PartitionError("membership mismatch", "stored membership differs from recount")

    dofs = np.bincount(partition.member_ids, minlength=N)
    n_if = int(np.count_nonzero(mult >= 2))
    frac = n_if / mult.size if mult.size else 0.0
    return PartitionDiagnostics(cells, dofs, n_if, frac)


def write_partition_csv(partition: Partition, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_index", "owner"])
        w.writerows(enumerate(partition.cell_owner.tolist()))
    return path
