"""Two-level BDDC preconditioner for the interface Schur complement.

The preconditioner is ``R_D^T (T_sub + T_0) R_D`` where ``R_D`` restricts an
interface vector to the subdomains with multiplicity weights, ``T_sub``
solves the local saddle systems with all primal values clamped to zero, and
``T_0`` is the Galerkin coarse correction ``Phi (Phi^T S Phi)^{-1} Phi^T``.
Nothing here assumes symmetry of ``S``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .partition import Partition
from .schur import DofSplit, SchurOperator


class BddcError(RuntimeError):
    pass


class GlobKind(enum.IntEnum):
    CORNER = 0
    EDGE = 1
    FACE = 2


class Level(str, enum.Enum):
    C = "C"
    CE = "CE"
    CEF = "CEF"

    @property
    def kinds(self) -> tuple[GlobKind, ...]:
        return {"C": (GlobKind.CORNER,),
                "CE": (GlobKind.CORNER, GlobKind.EDGE),
                "CEF": (GlobKind.CORNER, GlobKind.EDGE, GlobKind.FACE)}[self.value]


@dataclass(frozen=True)
class Glob:
    kind: GlobKind
    dofs: np.ndarray  # positions into the global interface array
    subdomains: tuple[int, ...]


@dataclass(frozen=True)
class InterfaceGeometry:
    globs: list
    subdomain_globs: list  # per subdomain, indices into ``globs``

    def count(self, kind: GlobKind) -> int:
        return sum(g.kind == kind for g in self.globs)


def classify_interface(split: DofSplit, partition: Partition, coords: np.ndarray,
                       all_corners: bool = False) -> InterfaceGeometry:
    """Group interface dofs by their exact subdomain set.

    ``coords`` are the coordinates of the free dofs. Two-subdomain sets
    become faces, larger sets edges. Singleton globs are promoted to
    corners, and each edge loses its two extremal dofs along its longest
    coordinate extent to new corner globs. ``all_corners`` makes every
    interface dof its own corner, which turns the coarse space into the
    whole interface.
    """
    if split.n_interface == 0:
        raise BddcError("interface is empty; BDDC needs at least two subdomains")
    gamma = split.interface
    off, ids = partition.member_offsets, partition.member_ids

    groups: dict[tuple, list] = {}
    for k, dof in enumerate(gamma.tolist()):
        key = tuple(ids[off[dof]:off[dof + 1]].tolist())
        groups.setdefault(key, []).append(k)

    globs = []
    for key, members in groups.items():
        members = np.asarray(members, dtype=np.int64)
        if all_corners:
            globs.extend(Glob(GlobKind.CORNER, np.array([m]), key) for m in members)
            continue
        if members.size == 1:
            globs.append(Glob(GlobKind.CORNER, members, key))
            continue
        if len(key) == 2:
            globs.append(Glob(GlobKind.FACE, members, key))
            continue
        x = coords[gamma[members]]
        axis = int(np.argmax(np.ptp(x, axis=0)))
        order = np.lexsort((gamma[members], x[:, axis]))
        ends = sorted({int(order[0]), int(order[-1])})
        for e in ends:
            globs.append(Glob(GlobKind.CORNER, members[e:e + 1], key))
        rest = np.delete(members, ends)
        if rest.size:
            kind = GlobKind.CORNER if rest.size == 1 else GlobKind.EDGE
            globs.append(Glob(kind, rest, key))

    globs.sort(key=lambda g: int(g.dofs.min()))
    sub_globs = [[] for _ in range(split.n_subdomains)]
    for gi, g in enumerate(globs):
        for s in g.subdomains:
            sub_globs[s].append(gi)
    return InterfaceGeometry(globs, sub_globs)


@dataclass(frozen=True)
class PrimalSpace:
    level: Level
    coarse_globs: np.ndarray  # glob index of each coarse dof
    C: list  # dense (n_c_i, n_gamma_i) per subdomain
    R_pi: list  # global coarse index of each local constraint row

    @property
    def n_coarse(self) -> int:
        return self.coarse_globs.size


def build_constraints(geometry: InterfaceGeometry, split: DofSplit, level) -> PrimalSpace:
    level = Level(level)
    selected = [gi for gi, g in enumerate(geometry.globs) if g.kind in level.kinds]
    coarse_of = {gi: c for c, gi in enumerate(selected)}

    C, R_pi = [], []
    for i, loc in enumerate(split.local_interface):
        rows = [gi for gi in geometry.subdomain_globs[i] if gi in coarse_of]
        if not rows and split.n_subdomains >= 2:
            raise BddcError(f"subdomain {i} has no primal constraints at level {level.value}")
        Ci = np.zeros((len(rows), loc.size))
        for r, gi in enumerate(rows):
            dofs = geometry.globs[gi].dofs
            cols = np.searchsorted(loc, dofs)
            Ci[r, cols] = 1.0 / dofs.size
        C.append(Ci)
        R_pi.append(np.array([coarse_of[gi] for gi in rows], dtype=np.int64))
    return PrimalSpace(level, np.asarray(selected, dtype=np.int64), C, R_pi)


def build_local_schur(op: SchurOperator, i: int) -> np.ndarray:
    """Dense ``S^i`` from the subdomain-assembled (Neumann) interface block."""
    if op.neumann_GG is None:
        raise BddcError("Schur operator lacks subdomain interface matrices")
    S = op.neumann_GG[i].toarray()
    if S.shape[0] == 0 or op.split.interior[i].size == 0:
        return S
    Y = op.interior_solve(i, op.K_IG[i].toarray())
    S -= op.K_GI[i] @ Y
    return S


def _lu_checked(A: np.ndarray, what: str):
    lu, piv = sla.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    scale = max(np.abs(A).max(), 1.0) if A.size else 1.0
    if d.size and d.min() <= 1e-13 * scale:
        raise BddcError(f"singular {what}")
    return lu, piv


class BddcOperator:
    """Assembled two-level preconditioner.

    Build with :func:`build_bddc`; apply with ``P(r)``.
    """

    def __init__(self, split, primal, S_local, aug, Phi, Lam, coarse_lu, S_c, weights):
        self.split = split
        self.primal = primal
        self.S_local = S_local
        self._aug = aug
        self.Phi = Phi
        self.Lam = Lam
        self._coarse = coarse_lu
        self.S_c = S_c
        self.weights = weights

    @property
    def n_coarse(self) -> int:
        return self.primal.n_coarse

    @property
    def shape(self):
        n = self.split.n_interface
        return (n, n)

    def restrict(self, r) -> list:
        return [w * r[loc] for w, loc in zip(self.weights, self.split.local_interface)]

    def prolong(self, stacked) -> np.ndarray:
        z = np.zeros(self.split.n_interface)
        for w, loc, u in zip(self.weights, self.split.local_interface, stacked):
            z[loc] += w * u
        return z

    def apply_Tsub(self, stacked) -> list:
        out = []
        for (lu, piv), r, Ci in zip(self._aug, stacked, self.primal.C):
            rhs = np.concatenate([r, np.zeros(Ci.shape[0])])
            out.append(sla.lu_solve((lu, piv), rhs, check_finite=False)[: r.size])
        return out

    def apply_T0(self, stacked) -> list:
        rc = np.zeros(self.n_coarse)
        for P, idx, r in zip(self.Phi, self.primal.R_pi, stacked):
            rc[idx] += P.T @ r
        y = sla.lu_solve(self._coarse, rc, check_finite=False)
        return [P @ y[idx] for P, idx in zip(self.Phi, self.primal.R_pi)]

    def apply(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.split.n_interface,):
            raise ValueError(f"residual has shape {r.shape}, expected ({self.split.n_interface},)")
        stacked = self.restrict(r)
        sub = self.apply_Tsub(stacked)
        coarse = self.apply_T0(stacked)
        return self.prolong([a + b for a, b in zip(sub, coarse)])

    __call__ = apply

    def coarse_matrix_explicit(self) -> np.ndarray:
        """``sum_i Phi^i^T S^i Phi^i`` scattered to global coarse indices."""
        S_c = np.zeros((self.n_coarse, self.n_coarse))
        for P, S, idx in zip(self.Phi, self.S_local, self.primal.R_pi):
            S_c[np.ix_(idx, idx)] += P.T @ S @ P
        return S_c

    def diagnostics(self, geometry: InterfaceGeometry) -> dict:
        return {
            "corners": geometry.count(GlobKind.CORNER),
            "edges": geometry.count(GlobKind.EDGE),
            "faces": geometry.count(GlobKind.FACE),
            "coarse_dim": self.n_coarse,
            "interface_sizes": [loc.size for loc in self.split.local_interface],
        }


def build_coarse_basis(S_i: np.ndarray, C_i: np.ndarray, what: str = "augmented system"):
    """Solve ``[[S, C^T], [C, 0]] [Phi; Lam] = [0; I]`` for the local primal columns.

    Returns ``(Phi, Lam, (lu, piv))``. Columns of coarse dofs absent from the
    subdomain are zero and not stored.
    """
    n, m = S_i.shape[0], C_i.shape[0]
    A = np.zeros((n + m, n + m))
    A[:n, :n] = S_i
    A[:n, n:] = C_i.T
    A[n:, :n] = C_i
    lu = _lu_checked(A, what)
    rhs = np.zeros((n + m, m))
    rhs[n:] = np.eye(m)
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    return sol[:n], sol[n:], lu


def assemble_coarse(Lam: list, R_pi: list, n_coarse: int):
    """``S_c = -sum_i R_pi^i^T Lam^i R_pi^i``, returned with its LU factors."""
    if n_coarse == 0:
        raise BddcError("coarse space is empty")
    S_c = np.zeros((n_coarse, n_coarse))
    for L, idx in zip(Lam, R_pi):
        S_c[np.ix_(idx, idx)] -= L
    return S_c, _lu_checked(S_c, "coarse matrix")


def build_bddc(op: SchurOperator, partition: Partition, coords: np.ndarray, level,
               all_corners: bool = False) -> tuple[BddcOperator, InterfaceGeometry]:
    """Set up the preconditioner for a factorized Schur operator.

    ``coords`` are free-dof coordinates, used to pick edge corners.
    """
    split = op.split
    level = Level(level)
    geometry = classify_interface(split, partition, coords, all_corners=all_corners)
    primal = build_constraints(geometry, split, level)

    S_local, aug, Phi, Lam = [], [], [], []
    for i in range(split.n_subdomains):
        S_i = build_local_schur(op, i)
        P, L, lu = build_coarse_basis(
            S_i, primal.C[i], f"augmented system of subdomain {i} (level {level.value})")
        S_local.append(S_i)
        aug.append(lu)
        Phi.append(P)
        Lam.append(L)
    S_c, coarse_lu = assemble_coarse(Lam, primal.R_pi, primal.n_coarse)
    weights = [1.0 / split.multiplicity[loc] for loc in split.local_interface]
    P = BddcOperator(split, primal, S_local, aug, Phi, Lam, coarse_lu, S_c, weights)
    return P, geometry


def write_diagnostics_csv(P: BddcOperator, geometry: InterfaceGeometry, path) -> Path:
    """Per-subdomain rows plus a summary header line of glob counts."""
    diag = P.diagnostics(geometry)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subdomain", "interface_dofs", "constraints", "corners", "edges",
                    "faces", "coarse_dim"])
        for i, loc in enumerate(P.split.local_interface):
            w.writerow([i, loc.size, P.primal.C[i].shape[0], diag["corners"],
                        diag["edges"], diag["faces"], diag["coarse_dim"]])
    return path
