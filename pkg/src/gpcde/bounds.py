"""Expected log-likelihood and latent-variable KL terms of the bound.

These are the per-datapoint building blocks; the full bound assembly over
a model lives in :mod:`gpcde.model`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianLatentPosterior:
    """Per-datapoint Gaussian q(w_n): mu (N, D_w), chol (N, D_w, D_w)."""

    mu: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=np.float64))
        self.chol = np.asarray(self.chol, dtype=np.float64)
        if self.chol.ndim != 3 or self.chol.shape[0] != self.mu.shape[0]:
            raise ValueError("chol must be (N, D_w, D_w)")

    @staticmethod
    def from_diagonal(mu, scale):
        mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
        scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
        n, d = mu.shape
        chol = np.zeros((n, d, d))
        idx = np.arange(d)
        chol[:, idx, idx] = scale
        return GaussianLatentPosterior(mu, chol)


def expected_loglik_terms(y, mu_f, var_f, sigma2, p=None):
    """Closed-form E_q(f)[log N(y | P^T f, sigma^2 I)] per data point.

    y: (B, D_y) constants; mu_f, var_f: (B, L); returns shape (B,).
    Without mixing, L must equal D_y and P^T f is just f.
    """
    yv = ad.value_of(y)
    if np.any(ad.value_of(var_f) < 0):
        raise ValueError("negative variance passed to expected_loglik")
    d_y = yv.shape[1]
    if p is None:
        if ad.value_of(mu_f).shape[1] != d_y:
            raise ValueError("without mixing the GP output count must "
                             "equal D_y")
        const = -0.5 * d_y * (LOG_2PI + ad.log(sigma2))
        quad = ad.sum_(ad.square(y - mu_f) + var_f, axis=1)
        return const - quad / (2.0 * sigma2)
    const = -0.5 * d_y * (LOG_2PI + ad.log(sigma2))
    resid = y - mu_f @ p                                     # (B, D_y)
    row_norms = ad.sum_(ad.square(p), axis=1)                # ||p_l||^2
    quad = ad.sum_(ad.square(resid), axis=1) + \
        ad.sum_(var_f * ad.reshape(row_norms, (1, -1)), axis=1)
    return const - quad / (2.0 * sigma2)


def expected_loglik(y_n, mu_f, var_f, noise, mixing=None):
    """Scalar convenience wrapper for a single data point (plain numpy)."""
    y = np.atleast_2d(np.asarray(y_n, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu_f, dtype=np.float64))
    var = np.atleast_2d(np.asarray(var_f, dtype=np.float64))
    if noise <= 0:
        raise ValueError("noise variance must be positive")
    p = None if mixing is None else mixing.P
    return float(ad.value_of(
        expected_loglik_terms(y, mu, var, float(noise), p))[0])


def kl_latent_terms_diag(mu, scale):
    """KL(N(mu_n, diag(scale_n^2)) || N(0, I)) summed over the batch."""
    return 0.5 * ad.sum_(ad.square(scale) + ad.square(mu) - 1.0
                         - 2.0 * ad.log(scale))


def kl_latent_terms_chol(mu, chol):
    """Full-covariance variant; chol is (B, D_w, D_w) lower factors."""
    d = ad.value_of(mu).shape[1]
    diag = ad.diag_part(chol)                                # (B, D_w)
    trace = ad.sum_(ad.square(chol), axis=(-2, -1))
    sq = ad.sum_(ad.square(mu), axis=1)
    logdet = 2.0 * ad.sum_(ad.log(diag), axis=1)
    return ad.sum_(0.5 * (trace + sq - d - logdet))


def kl_latent(q: GaussianLatentPosterior, indices=None):
    """Closed-form KL to the standard-normal prior over the given points."""
    mu = q.mu if indices is None else q.mu[indices]
    chol = q.chol if indices is None else q.chol[indices]
    return float(ad.value_of(kl_latent_terms_chol(mu, chol)))
