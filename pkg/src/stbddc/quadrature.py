"""Quadrature on the reference simplex via collapsed Gauss-Jacobi products."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 6


@lru_cache(maxsize=None)
def simplex_rule(dim: int, degree: int):
    """Rule on ``{x >= 0, sum(x) <= 1}`` in ``dim`` dimensions.

    Exact for polynomials of total degree ``degree``.

    Returns
    -------
    bary : (Q, dim+1) array
        Barycentric coordinates of the points; column 0 is ``1 - sum(x)``.
    weights : (Q,) array
        Weights summing to the reference volume ``1/dim!``.
    """
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree} (1..{MAX_DEGREE})")
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    m = (degree + 2) // 2

    nodes, weights = [], []
    for k in range(dim):
        alpha = dim - 1 - k
        s, w = roots_jacobi(m, alpha, 0.0)
        nodes.append((1.0 + s) / 2.0)
        weights.append(w / 2.0 ** (alpha + 1))

    grids = np.meshgrid(*nodes, indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.meshgrid(*weights, indexing="ij"), axis=0).ravel()

    x = np.empty_like(xi)
    scale = np.ones(xi.shape[0])
    for k in range(dim):
        x[:, k] = xi[:, k] * scale
        scale = scale * (1.0 - xi[:, k])
    bary = np.column_stack([1.0 - x.sum(axis=1), x])
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w


def reference_volume(dim: int) -> float:
    return 1.0 / math.factorial(dim)
