"""Inducing-point variational posterior over L independent latent functions.

The posterior for each output dimension is q(u_l) = N(m_l, S_l) over
function values at shared inducing inputs Z.  Conditional marginals and the
KL to the GP prior are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .kernels import KernelSpec


@dataclass
class InducingVariational:
    """Z: (M, D_in) inducing inputs; mean: (M, L); chol: (L, M, M) lower
    factors of the posterior covariances S_l = chol_l chol_l^T."""

    Z: np.ndarray
    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.chol = np.asarray(self.chol, dtype=np.float64)
        m = self.Z.shape[0]
        if self.mean.shape[0] != m or self.chol.shape[-1] != m:
            raise ValueError("Z row count must match mean/chol size")

    @property
    def num_inducing(self):
        return self.Z.shape[0]

    @property
    def num_outputs(self):
        return self.mean.shape[1]

    def cov(self, ell):
        return self.chol[ell] @ self.chol[ell].T

    @staticmethod
    def initial(Z, num_outputs, start_scale=0.1):
        m = np.atleast_2d(Z).shape[0]
        return InducingVariational(
            Z=Z,
            mean=np.zeros((m, num_outputs)),
            chol=np.tile(start_scale * np.eye(m), (num_outputs, 1, 1)))


VAR_FLOOR = 1e-12


def _kzz_chol(family, sv, ls, jitter, z):
    m = ad.value_of(z).shape[0]
    kzz = kernels.kernel_matrix(family, sv, ls, z, z) + (jitter * sv) * np.eye(m)
    return ad.cholesky(kzz)


def conditional_terms(family, sv, ls, jitter, z, mean, s_list, xstar,
                      lk=None):
    """Marginal mean/variance of q(f_l(x)) at the rows of `xstar`.

    mean: (M, L); s_list: length-L sequence of (M, M) full covariances.
    Returns (mu, var) with shape (B, L).  Any argument may be a Node.
    """
    if lk is None:
        lk = _kzz_chol(family, sv, ls, jitter, z)
    kzx = kernels.kernel_matrix(family, sv, ls, z, xstar)       # (M, B)
    a1 = ad.solve_triangular(lk, kzx)                           # L^-1 Kzx
    c = ad.solve_triangular(lk, a1, trans="T")                  # Kzz^-1 Kzx
    alpha = ad.solve_triangular(lk, mean)                       # (M, L)
    mu = ad.transpose(a1) @ alpha                               # (B, L)
    kdiag = kernels.kernel_diag(family, sv, xstar)
    base = kdiag - ad.sum_(ad.square(a1), axis=0)               # (B,)
    cols = []
    for s in s_list:
        quad = ad.sum_(c * (s @ c), axis=0)                     # diag(C^T S C)
        cols.append(ad.reshape(base + quad, (-1, 1)))
    var = ad.concatenate(cols, axis=1)
    return mu, ad.clip_min(var, VAR_FLOOR)


def kl_terms(family, sv, ls, jitter, z, mean, s_list, lk=None):
    """sum_l KL(N(m_l, S_l) || N(0, Kzz)); closed-form Gaussian KL."""
    if lk is None:
        lk = _kzz_chol(family, sv, ls, jitter, z)
    m = ad.value_of(z).shape[0]
    logdet_k = 2.0 * ad.sum_(ad.log(ad.diag_part(lk)))
    white_m = ad.solve_triangular(lk, mean)                     # (M, L)
    total = 0.5 * ad.sum_(ad.square(white_m))
    for s in s_list:
        ls_chol = ad.cholesky(s)
        white_s = ad.solve_triangular(lk, ls_chol)
        trace = ad.sum_(ad.square(white_s))
        logdet_s = 2.0 * ad.sum_(ad.log(ad.diag_part(ls_chol)))
        total = total + 0.5 * (trace - m + logdet_k - logdet_s)
    return total


# -- plain-numpy surface --------------------------------------------------

def conditional(q: InducingVariational, spec: KernelSpec, xstar):
    """Posterior marginals (mu, var), each (N, L), at the rows of `xstar`."""
    xstar = np.atleast_2d(np.asarray(xstar, dtype=np.float64))
    if xstar.shape[1] != q.Z.shape[1]:
        raise ValueError("xstar dimension does not match inducing inputs")
    ls = spec.lengthscales if spec.lengthscales is not None \
        else np.ones(q.Z.shape[1])
    s_list = [q.cov(ell) for ell in range(q.num_outputs)]
    mu, var = conditional_terms(spec.family, spec.signal_variance, ls,
                                spec.jitter, q.Z, q.mean, s_list, xstar)
    return ad.value_of(mu), ad.value_of(var)


def kl_inducing(q: InducingVariational, spec: KernelSpec):
    ls = spec.lengthscales if spec.lengthscales is not None \
        else np.ones(q.Z.shape[1])
    s_list = [q.cov(ell) for ell in range(q.num_outputs)]
    return float(ad.value_of(kl_terms(
        spec.family, spec.signal_variance, ls, spec.jitter, q.Z, q.mean,
        s_list)))


def init_inducing_inputs(x_aug, num_inducing, rng):
    """k-means centroids of (a subsample of) the augmented inputs."""
    x_aug = np.atleast_2d(np.asarray(x_aug, dtype=np.float64))
    n = x_aug.shape[0]
    if n > 2000:
        x_aug = x_aug[rng.choice(n, size=2000, replace=False)]
        n = 2000
    if num_inducing >= n:
        z = x_aug[rng.choice(n, size=num_inducing, replace=True)]
        return z + 1e-3 * rng.standard_normal(z.shape)
    from scipy.cluster.vq import kmeans2
    seed = int(rng.integers(2 ** 31 - 1))
    z, _ = kmeans2(x_aug, num_inducing, minit="++", seed=seed)
    return z
