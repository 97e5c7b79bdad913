"""Interior/interface splitting and the matrix-free interface Schur complement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import Triplets, triplets_to_csr
from .partition import Partition


class SchurError(RuntimeError):
    pass


@dataclass(frozen=True)
class DofSplit:
    """Global interior/interface numbering.

    ``interior[i]`` holds the free dofs owned only by subdomain ``i``.
    ``interface`` lists all shared free dofs in ascending order, and
    ``local_interface[i]`` holds positions into ``interface`` for the shared
    dofs of subdomain ``i`` (the restriction ``R_Gamma^i``).
    """
    interior: list
    interface: np.ndarray
    local_interface: list
    multiplicity: np.ndarray

    @property
    def n_subdomains(self) -> int:
        return len(self.interior)

    @property
    def n_interface(self) -> int:
        return self.interface.size


def split_dofs(partition: Partition) -> DofSplit:
    mult = partition.multiplicity
    ids = partition.member_ids
    dof_of_entry = np.repeat(np.arange(mult.size), mult)
    N = partition.n_subdomains

    interface = np.flatnonzero(mult >= 2)
    pos = np.full(mult.size, -1, dtype=np.int64)
    pos[interface] = np.arange(interface.size)

    shared = mult[dof_of_entry] >= 2
    interior, local_if = [], []
    for i in range(N):
        mine = ids == i
        interior.append(dof_of_entry[mine & ~shared])
        local_if.append(pos[dof_of_entry[mine & shared]])
    return DofSplit(interior, interface, local_if, mult[interface])


@dataclass
class SchurOperator:
    split: DofSplit
    K_II: list
    K_IG: list
    K_GI: list
    K_GG: sp.csr_matrix
    neumann_GG: list | None = None
    _lu: list = field(default_factory=list, repr=False)

    @property
    def shape(self):
        n = self.split.n_interface
        return (n, n)

    @property
    def factorized(self) -> bool:
        return len(self._lu) == self.split.n_subdomains

    def interior_solve(self, i: int, rhs: np.ndarray) -> np.ndarray:
        if self.split.interior[i].size == 0:
            return np.zeros((0,) + rhs.shape[1:])
        return self._lu[i].solve(rhs)

    def _check(self, v, n, what):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != n:
            raise ValueError(f"{what} has length {v.shape[0]}, expected {n}")
        return v

    def apply(self, v):
        v = self._check(v, self.split.n_interface, "interface vector")
        w = self.K_GG @ v
        for i, loc in enumerate(self.split.local_interface):
            if self.split.interior[i].size == 0 or loc.size == 0:
                continue
            y = self.interior_solve(i, self.K_IG[i] @ v[loc])
            w[loc] -= self.K_GI[i] @ y
        return w

    __call__ = apply

    def reduce_rhs(self, f):
        f = self._check(f, self._n_free(), "load vector")
        g = f[self.split.interface].copy()
        for i, loc in enumerate(self.split.local_interface):
            I = self.split.interior[i]
            if I.size == 0 or loc.size == 0:
                continue
            g[loc] -= self.K_GI[i] @ self.interior_solve(i, f[I])
        return g

    def back_substitute(self, x_gamma, f):
        f = self._check(f, self._n_free(), "load vector")
        x_gamma = self._check(x_gamma, self.split.n_interface, "interface solution")
        x = np.zeros(self._n_free())
        x[self.split.interface] = x_gamma
        for i, loc in enumerate(self.split.local_interface):
            I = self.split.interior[i]
            if I.size == 0:
                continue
            x[I] = self.interior_solve(i, f[I] - self.K_IG[i] @ x_gamma[loc])
        return x

    def _n_free(self) -> int:
        return (sum(I.size for I in self.split.interior) + self.split.n_interface)

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.apply, dtype=float)


def extract_blocks(K, split: DofSplit, triplets: Triplets | None = None,
                   cell_owner: np.ndarray | None = None) -> SchurOperator:
    """Slice ``K`` into per-subdomain interior blocks and the interface block.

    When the unreduced ``triplets`` and ``cell_owner`` are given, the
    subdomain-assembled interface matrices needed by BDDC are built too.
    """
    K = sp.csr_matrix(K)
    gamma = split.interface
    K_II, K_IG, K_GI = [], [], []
    for I, loc in zip(split.interior, split.local_interface):
        gl = gamma[loc]
        K_II.append(K[I][:, I].tocsc())
        K_IG.append(K[I][:, gl].tocsr())
        K_GI.append(K[gl][:, I].tocsr())
    op = SchurOperator(split, K_II, K_IG, K_GI, K[gamma][:, gamma].tocsr())
    if triplets is not None:
        if cell_owner is None:
            raise ValueError("cell_owner is required with triplets")
        op.neumann_GG = subdomain_interface_matrices(triplets, cell_owner, split)
    return op


def subdomain_interface_matrices(triplets: Triplets, cell_owner, split: DofSplit) -> list:
    """Interface blocks ``K_GG^(i)`` assembled from the cells of subdomain ``i`` only."""
    n_free = sum(I.size for I in split.interior) + split.n_interface
    pos = np.full(n_free, -1, dtype=np.int64)
    pos[split.interface] = np.arange(split.n_interface)
    rpos, cpos = pos[triplets.rows], pos[triplets.cols]
    owner = np.asarray(cell_owner)[triplets.cell]
    both = (rpos >= 0) & (cpos >= 0)
    out = []
    for i, loc in enumerate(split.local_interface):
        m = both & (owner == i)
        lmap = np.full(split.n_interface, -1, dtype=np.int64)
        lmap[loc] = np.arange(loc.size)
        t = Triplets(lmap[rpos[m]], lmap[cpos[m]], triplets.vals[m], triplets.cell[m])
        out.append(triplets_to_csr(t, loc.size))
    return out


def factorize_interiors(op: SchurOperator) -> SchurOperator:
    op._lu = []
    for i, A in enumerate(op.K_II):
        if A.shape[0] == 0:
            op._lu.append(None)
            continue
        try:
            op._lu.append(spla.splu(A, permc_spec="COLAMD"))
        except RuntimeError as exc:
            raise SchurError(f"interior block of subdomain {i} is singular: {exc}") from exc
    return op


def build_schur(K, split: DofSplit, triplets: Triplets | None = None,
                cell_owner=None) -> SchurOperator:
    return factorize_interiors(extract_blocks(K, split, triplets, cell_owner))


def schur_apply(op: SchurOperator, v):
    return op.apply(v)


def reduce_rhs(op: SchurOperator, f):
    return op.reduce_rhs(f)


def back_substitute(op: SchurOperator, x_gamma, f):
    return op.back_substitute(x_gamma, f)


def solve_direct(K, f) -> np.ndarray:
    """Sparse LU solve of the full system; used for the single-subdomain path."""
    return spla.splu(sp.csc_matrix(K), permc_spec="COLAMD").solve(np.asarray(f, dtype=float))
