"""Kernel density estimation baselines.

U-KDE smooths the training outputs with an isotropic Gaussian kernel,
ignoring the conditions.  C-KDE restricts the same mixture to the k
nearest training inputs of the query condition, with the bandwidth taken
from the unconditional model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import LOG_2PI

UNCONDITIONAL = "unconditional"
CONDITIONAL = "conditional"


@dataclass
class KdeModel:
    Y: np.ndarray
    bandwidth: float
    mode: str = UNCONDITIONAL
    X: np.ndarray = None
    k_neighbors: int = 50

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.mode not in (UNCONDITIONAL, CONDITIONAL):
            raise ValueError(f"unknown KDE mode {self.mode!r}")
        if self.mode == CONDITIONAL:
            if self.X is None:
                raise ValueError("conditional mode needs training inputs")
            self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
            if self.k_neighbors < 1:
                raise ValueError("k_neighbors must be at least 1")
            if self.k_neighbors > self.Y.shape[0]:
                raise ValueError("k_neighbors exceeds training size")


def _mixture_logpdf(y_star, centers, h):
    """log[(1/N) sum_n N(y*; y_n, h^2 I)]."""
    d = centers.shape[1]
    sq = np.sum((centers - y_star) ** 2, axis=1)
    comps = -0.5 * d * (LOG_2PI + 2.0 * np.log(h)) - sq / (2.0 * h * h)
    shift = comps.max()
    return float(np.log(np.mean(np.exp(comps - shift))) + shift)


def kde_logpdf(model: KdeModel, x_star=None, y_star=None):
    """Log density of a single query output, optionally conditioned."""
    y_star = np.asarray(y_star, dtype=np.float64).ravel()
    if y_star.shape[0] != model.Y.shape[1]:
        raise ValueError("query output dimension mismatch")
    if model.mode == UNCONDITIONAL:
        return _mixture_logpdf(y_star, model.Y, model.bandwidth)
    if x_star is None:
        raise ValueError("conditional KDE needs a query condition")
    x_star = np.asarray(x_star, dtype=np.float64).ravel()
    dist = np.linalg.norm(model.X - x_star, axis=1)
    # stable argsort: ties break by ascending training index
    order = np.argsort(dist, kind="stable")[:model.k_neighbors]
    return _mixture_logpdf(y_star, model.Y[order], model.bandwidth)


def kde_nlpp(model: KdeModel, x_test, y_test):
    y_test = np.atleast_2d(np.asarray(y_test, dtype=np.float64))
    if y_test.shape[0] == 0:
        raise ValueError("empty test set")
    xs = [None] * y_test.shape[0] if x_test is None else np.atleast_2d(x_test)
    vals = [kde_logpdf(model, x, y) for x, y in zip(xs, y_test)]
    return float(-np.mean(vals))


def default_bandwidth_grid(y, num=20):
    """Log-spaced candidates spanning [0.01, 10] times the output scale."""
    scale = float(np.mean(np.atleast_2d(y).std(axis=0)))
    scale = scale if scale > 0 else 1.0
    return list(scale * np.logspace(-2, 1, num))


def kde_select_bandwidth(y, folds=5, grid=None, seed=0):
    """Bandwidth maximizing mean held-out log density across folds; ties
    break toward the larger candidate."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n = y.shape[0]
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < folds:
        raise ValueError("need at least one point per fold")
    grid = default_bandwidth_grid(y) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty candidate grid")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_ids = np.arange(n) % folds
    best_h, best_score = None, -np.inf
    for h in grid:
        scores = []
        for f in range(folds):
            held = perm[fold_ids == f]
            kept = perm[fold_ids != f]
            m = KdeModel(y[kept], h)
            scores.append(np.mean([kde_logpdf(m, None, y[i]) for i in held]))
        score = float(np.mean(scores))
        if score > best_score or (score == best_score and best_h is not None
                                  and h > best_h):
            best_h, best_score = h, score
    return float(best_h)
