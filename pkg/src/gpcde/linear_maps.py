"""Linear input projection (Bayesian, variational) and output mixing.

The input projection has an elementwise Gaussian posterior over a
(D_q, D_x) matrix with a standard-normal prior.  The output mixing matrix
P is a plain (L, D_y) hyperparameter: row l maps GP output l onto the
observed dimensions, so the predictive mean is P^T f.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .kernels import KernelSpec, MATERN52, gram


@dataclass
class InputProjection:
    q_mean: np.ndarray     # (D_q, D_x)
    q_logvar: np.ndarray   # (D_q, D_x)

    def __post_init__(self):
        self.q_mean = np.atleast_2d(np.asarray(self.q_mean, dtype=np.float64))
        self.q_logvar = np.atleast_2d(
            np.asarray(self.q_logvar, dtype=np.float64))
        if self.q_mean.shape != self.q_logvar.shape:
            raise ValueError("q_mean and q_logvar shapes differ")
        dq, dx = self.q_mean.shape
        if dq >= dx:
            raise ValueError("projection must reduce dimension (D_q < D_x)")

    @staticmethod
    def initial(d_q, d_x, rng):
        return InputProjection(
            q_mean=rng.standard_normal((d_q, d_x)) / np.sqrt(d_x),
            q_logvar=np.full((d_q, d_x), np.log(1e-2)))


@dataclass
class OutputMixing:
    P: np.ndarray          # (L, D_y)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=np.float64))
        if self.P.shape[0] > self.P.shape[1]:
            raise ValueError("need L <= D_y")

    @staticmethod
    def truncated_identity(num_outputs, d_y):
        return OutputMixing(np.eye(num_outputs, d_y))


def project_input(q_mean, q_logvar, x, mode="mean", rng=None):
    """Project rows of x; (B, D_x) -> (B, D_q).

    mode='mean' uses the posterior mean of the matrix; mode='sample' draws
    one reparameterized matrix (shared across the batch).  q_mean/q_logvar
    may be autodiff nodes.
    """
    if ad.value_of(x).shape[-1] != ad.value_of(q_mean).shape[-1]:
        raise ValueError("input dimension does not match projection")
    if mode == "mean":
        a = q_mean
    elif mode == "sample":
        eps = rng.standard_normal(ad.value_of(q_mean).shape)
        a = q_mean + ad.sqrt(ad.exp(q_logvar)) * eps
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return x @ ad.transpose(a)


def kl_input_projection(q_mean, q_logvar):
    """KL to the elementwise standard-normal prior."""
    var = ad.exp(q_logvar)
    return 0.5 * ad.sum_(var + ad.square(q_mean) - 1.0 - q_logvar)


def matern_pixel_gram(pixel_coords, lengthscale):
    spec = KernelSpec(family=MATERN52, signal_variance=1.0,
                      lengthscales=np.full(2, float(lengthscale)))
    return gram(spec, np.atleast_2d(pixel_coords))


def init_mixing_matern(pixel_coords, num_outputs, lengthscale=1.0):
    """Rows of P = sqrt(eigenvalue) * eigenvector of a Matern-5/2 Gram on
    the pixel coordinates, largest eigenvalues first."""
    pixel_coords = np.atleast_2d(np.asarray(pixel_coords, dtype=np.float64))
    d_y = pixel_coords.shape[0]
    if num_outputs > d_y:
        raise ValueError("need L <= D_y")
    k = matern_pixel_gram(pixel_coords, lengthscale)
    evals, evecs = np.linalg.eigh(k)
    order = np.argsort(evals)[::-1][:num_outputs]
    evals = np.clip(evals[order], 0.0, None)
    p = np.sqrt(evals)[:, None] * evecs[:, order].T
    return OutputMixing(p)
