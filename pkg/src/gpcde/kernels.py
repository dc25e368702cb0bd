"""Stationary covariance functions (RBF, Matern-5/2) with ARD lengthscales.

The evaluation functions accept either plain numpy arrays or autodiff
nodes for the hyperparameters and inputs, so the same code serves both
graph construction and plain prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

RBF = "RBF"
MATERN52 = "Matern52"

_FAMILIES = (RBF, MATERN52)

# floor on squared distances before the Matern sqrt; keeps the gradient
# finite at coincident inputs
_SQDIST_FLOOR = 1e-36


@dataclass
class KernelSpec:
    family: str = RBF
    signal_variance: float = 1.0
    lengthscales: np.ndarray = None
    jitter: float = 1e-6

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.lengthscales is not None:
            self.lengthscales = np.atleast_1d(
                np.asarray(self.lengthscales, dtype=np.float64))
        if self.jitter <= 0:
            raise ValueError("jitter must be positive")


def _check_dims(x, d):
    if ad.value_of(x).shape[1] != d:
        raise ValueError(
            f"input has {ad.value_of(x).shape[1]} columns, kernel has {d} "
            "lengthscales")


def scaled_sqdist(x1, x2, lengthscales):
    """Pairwise squared distances of rows after per-dimension scaling."""
    xs1 = x1 / lengthscales
    xs2 = x2 / lengthscales
    n1 = ad.sum_(ad.square(xs1), axis=1)
    n2 = ad.sum_(ad.square(xs2), axis=1)
    cross = xs1 @ ad.transpose(xs2)
    d2 = ad.reshape(n1, (-1, 1)) + ad.reshape(n2, (1, -1)) - 2.0 * cross
    return ad.clip_min(d2, 0.0)


def kernel_matrix(family, signal_variance, lengthscales, x1, x2):
    """Gram matrix K[i, j] = k(x1_i, x2_j)."""
    d = np.atleast_1d(ad.value_of(lengthscales)).shape[-1]
    _check_dims(x1, d)
    _check_dims(x2, d)
    d2 = scaled_sqdist(x1, x2, lengthscales)
    if family == RBF:
        return signal_variance * ad.exp(-0.5 * d2)
    r = ad.sqrt(ad.clip_min(d2, _SQDIST_FLOOR))
    s5r = np.sqrt(5.0) * r
    return signal_variance * (1.0 + s5r + (5.0 / 3.0) * d2) * ad.exp(-s5r)


def kernel_diag(family, signal_variance, x):
    """k(x_n, x_n) per row; constant for stationary kernels."""
    n = ad.value_of(x).shape[0]
    return signal_variance * np.ones(n)


# -- plain-numpy convenience over a KernelSpec ----------------------------

def gram(spec: KernelSpec, x1, x2=None):
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    x2 = x1 if x2 is None else np.atleast_2d(np.asarray(x2, dtype=np.float64))
    ls = spec.lengthscales
    if ls is None:
        ls = np.ones(x1.shape[1])
    return ad.value_of(
        kernel_matrix(spec.family, spec.signal_variance, ls, x1, x2))


def gram_with_jitter(spec: KernelSpec, x):
    k = gram(spec, x)
    return k + spec.jitter * spec.signal_variance * np.eye(k.shape[0])
