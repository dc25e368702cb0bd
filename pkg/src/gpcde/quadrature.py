"""Gauss-Hermite quadrature against the standard normal measure."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass
class QuadratureRule:
    """nodes: (Q, D) points; weights: (Q,) summing to one under N(0, I)."""

    nodes: np.ndarray
    weights: np.ndarray
    dim: int

    @property
    def num_points(self):
        return self.weights.shape[0]


MAX_POINTS_1D = 512
MAX_DIM = 3
MAX_TENSOR_POINTS = 10_000


def gauss_hermite_rule(num_points: int, dim: int = 1) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule; exact for polynomials of degree
    2Q-1 in 1D, tensor-product grid for dim > 1."""
    if not 1 <= num_points <= MAX_POINTS_1D:
        raise ValueError(f"num_points must be in [1, {MAX_POINTS_1D}]")
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dim must be in [1, {MAX_DIM}]")
    if num_points ** dim > MAX_TENSOR_POINTS:
        raise ValueError("tensor-product rule too large; reduce num_points")
    x, w = np.polynomial.hermite_e.hermegauss(num_points)
    w = w / w.sum()
    if dim == 1:
        return QuadratureRule(nodes=x[:, None], weights=w, dim=1)
    nodes = np.array(list(product(x, repeat=dim)))
    weights = np.prod(np.array(list(product(w, repeat=dim))), axis=1)
    return QuadratureRule(nodes=nodes, weights=weights, dim=dim)
