"""Full GMRES with modified Gram-Schmidt Arnoldi and Givens rotations."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np


class BreakdownError(ArithmeticError):
    """Arnoldi broke down while the residual was still above tolerance."""


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    relative_residuals: list = field(default_factory=list)
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    max_iterations: int = 500

    def iterations_label(self) -> str:
        """Iteration count as printed in tables: ``">500"`` when not converged."""
        return str(self.iterations) if self.converged else f">{self.max_iterations}"


def residual_history(report: SolveReport) -> list:
    return list(report.relative_residuals)


def _as_callable(A):
    if A is None:
        return None
    if hasattr(A, "matvec"):
        return A.matvec
    if callable(A):
        return A
    return lambda v: A @ v


def gmres(A, b, M=None, tol: float = 1e-9, max_it: int = 500, side: str = "left",
          reorthogonalize: bool = False):
    """Solve ``A x = b`` from a zero initial guess.

    Parameters
    ----------
    A, M : matrix, LinearOperator or callable
        System operator and optional preconditioner (applies ``P^{-1}``).
    side : {"left", "right"}
        Left preconditioning monitors ``||P^{-1}(b - A x)|| / ||P^{-1} b||``;
        right preconditioning monitors the true relative residual.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_it < 1:
        raise ValueError("max_it must be at least 1")

    t0 = time.perf_counter()
    apply_A = _as_callable(A)
    apply_M = _as_callable(M) or (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]

    if side == "left":
        op = lambda v: apply_M(apply_A(v))  # noqa: E731
        r0 = apply_M(b)
    else:
        op = lambda v: apply_A(apply_M(v))  # noqa: E731
        r0 = b.copy()
    beta = float(np.linalg.norm(r0))
    if r0.shape != (n,):
        raise ValueError("preconditioner changed the vector length")
    if beta == 0.0:
        return np.zeros(n), SolveReport(0, True, [0.0], 0.0,
                                        time.perf_counter() - t0, max_it)

    V = [r0 / beta]
    H = np.zeros((max_it + 1, max_it))
    cs = np.zeros(max_it)
    sn = np.zeros(max_it)
    g = np.zeros(max_it + 1)
    g[0] = beta
    history = [1.0]
    converged = False
    j = 0
    for j in range(max_it):
        w = op(V[j])
        w_norm = float(np.linalg.norm(w))
        for _ in range(2 if reorthogonalize else 1):
            for i in range(j + 1):
                hij = float(V[i] @ w)
                H[i, j] += hij
                w -= hij * V[i]
        H[j + 1, j] = float(np.linalg.norm(w))

        for i in range(j):
            a, c = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * a + sn[i] * c
            H[i + 1, j] = -sn[i] * a + cs[i] * c
        denom = math.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            raise BreakdownError(f"singular Hessenberg matrix at iteration {j + 1}")
        cs[j] = H[j, j] / denom
        sn[j] = H[j + 1, j] / denom
        H[j, j] = denom
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        H[j + 1, j] = 0.0

        rel = abs(g[j + 1]) / beta
        history.append(rel)
        if rel <= tol:
            converged = True
            break
        h_next = float(np.linalg.norm(w))
        if h_next <= 1e-14 * max(w_norm, 1e-300):
            raise BreakdownError(
                f"Krylov space became invariant at iteration {j + 1} "
                f"with relative residual {rel:.3e}")
        V.append(w / h_next)

    k = j + 1
    y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
    u = np.zeros(n)
    for i in range(k):
        u += y[i] * V[i]
    x = u if side == "left" else apply_M(u)
    return x, SolveReport(k, converged, history, 0.0, time.perf_counter() - t0, max_it)
