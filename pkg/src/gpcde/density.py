"""Predictive conditional densities, sampling, grid export, NLPP.

Latent variables are marginalized against their standard-normal prior at
test time (test points carry no observed output to encode).  The
low-rank-plus-diagonal Gaussian likelihood under output mixing is
evaluated with the matrix-inversion and determinant lemmas, never forming
a D_y x D_y covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sparse_gp
from .bounds import LOG_2PI

DEFAULT_SAMPLES = 1000
_CHUNK_ROWS = 20_000


@dataclass
class DensityGrid:
    condition: np.ndarray      # x*, (D_x,)
    axes: list                 # per-output-dimension grid coordinates
    logdens: np.ndarray        # shape (len(axes[0]),) or (n0, n1)

    def nodes(self):
        if len(self.axes) == 1:
            return self.axes[0][:, None]
        g0, g1 = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel()])

    def trapezoid_mass(self):
        dens = np.exp(self.logdens)
        if len(self.axes) == 1:
            return float(np.trapezoid(dens, self.axes[0]))
        inner = np.trapezoid(dens, self.axes[1], axis=1)
        return float(np.trapezoid(inner, self.axes[0]))


def diag_gauss_logpdf(y, mean, var):
    """Independent Gaussian log-pdf per row; all args (B, D)."""
    return np.sum(-0.5 * (LOG_2PI + np.log(var)) -
                  0.5 * (y - mean) ** 2 / var, axis=1)


def lowrank_gauss_logpdf(y, mu_f, var_f, p, sigma2):
    """log N(y ; P^T mu_f, P^T diag(var_f) P + sigma2 I) per row.

    y: (B, D_y); mu_f, var_f: (B, L); p: (L, D_y).
    Cost O(D_y L^2 + L^3) per row via the Woodbury and determinant lemmas.
    """
    y = np.atleast_2d(y)
    b, d_y = y.shape
    l = p.shape[0]
    resid = y - mu_f @ p                                   # (B, D_y)
    ppt = p @ p.T                                          # (L, L)
    inner = ppt[None] / sigma2 + \
        np.eye(l)[None] / var_f[:, :, None]                # C^-1 + P D^-1 P^T
    # batched Cholesky of the (B, L, L) inner matrices
    inner_chol = np.linalg.cholesky(inner)
    bvec = (resid @ p.T) / sigma2                          # (B, L)
    sol = np.linalg.solve(inner_chol,
                          bvec[:, :, None])                # L^-1 b
    quad = np.sum(resid ** 2, axis=1) / sigma2 - np.sum(sol[:, :, 0] ** 2,
                                                        axis=1)
    logdet_inner = 2.0 * np.sum(
        np.log(np.diagonal(inner_chol, axis1=-2, axis2=-1)), axis=1)
    logdet = d_y * np.log(sigma2) + np.sum(np.log(var_f), axis=1) + \
        logdet_inner
    return -0.5 * (d_y * LOG_2PI + logdet + quad)


def dense_lowrank_logpdf(y, mu_f, var_f, p, sigma2):
    """Reference O(D_y^3) evaluation of the same density (oracle use)."""
    y = np.atleast_2d(y)
    out = np.empty(y.shape[0])
    for i in range(y.shape[0]):
        cov = p.T @ np.diag(var_f[i]) @ p + sigma2 * np.eye(y.shape[1])
        resid = y[i] - p.T @ mu_f[i]
        sign, logdet = np.linalg.slogdet(cov)
        out[i] = -0.5 * (y.shape[1] * LOG_2PI + logdet +
                         resid @ np.linalg.solve(cov, resid))
    return out


def _observation_logpdf(model, y, mu_f, var_f):
    p = model.output_matrix()
    s2 = model.sigma2
    if p is None:
        return diag_gauss_logpdf(y, mu_f, var_f + s2)
    return lowrank_gauss_logpdf(y, mu_f, var_f, p, s2)


def _conditional_at(model, xaug):
    spec = model.kernel_spec()
    return sparse_gp.conditional(model.inducing(), spec, xaug)


def predictive_logdensity_batch(model, xstar, ystar, num_samples=DEFAULT_SAMPLES,
                                rng=None, w_samples=None, w_weights=None):
    """log p(y*_i | x*_i) for each row, sharing latent draws across rows
    (common random numbers).  Deterministic when the model has no latents.

    Passing quadrature nodes as `w_samples` with matching `w_weights`
    replaces the Monte Carlo average over the latent prior with the
    weighted quadrature sum (deterministic evaluation).
    """
    ystar = np.atleast_2d(np.asarray(ystar, dtype=np.float64))
    b = ystar.shape[0]
    d_w = model.config.d_w
    xc = model.project_condition(xstar)
    if d_w == 0:
        mu, var = _conditional_at(model, xc)
        return _observation_logpdf(model, ystar, mu, var)
    if num_samples < 1:
        raise ValueError("need at least one latent sample")
    if w_samples is None:
        rng = np.random.default_rng(0) if rng is None else rng
        w_samples = rng.standard_normal((num_samples, d_w))
    s = w_samples.shape[0]
    w_tiled = np.tile(w_samples, (b, 1))                   # (B*S, d_w)
    if xc is not None:
        rows = np.concatenate([np.repeat(xc, s, axis=0), w_tiled], axis=1)
    else:
        rows = w_tiled
    logp = np.empty(b * s)
    y_rep = np.repeat(ystar, s, axis=0)
    for start in range(0, b * s, _CHUNK_ROWS):
        end = min(start + _CHUNK_ROWS, b * s)
        mu, var = _conditional_at(model, rows[start:end])
        logp[start:end] = _observation_logpdf(model, y_rep[start:end],
                                              mu, var)
    logp = logp.reshape(b, s)
    shift = logp.max(axis=1, keepdims=True)
    if w_weights is None:
        out = np.log(np.mean(np.exp(logp - shift), axis=1)) + shift[:, 0]
    else:
        out = np.log(np.exp(logp - shift) @ np.asarray(w_weights)) + \
            shift[:, 0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite predictive log-density")
    return out


def predictive_logdensity(model, xstar, ystar, num_samples=DEFAULT_SAMPLES,
                          rng=None):
    """Monte Carlo estimate of log p(y* | x*) for a single point."""
    x = None if xstar is None else np.atleast_2d(
        np.asarray(xstar, dtype=np.float64))
    y = np.atleast_2d(np.asarray(ystar, dtype=np.float64))
    return float(predictive_logdensity_batch(model, x, y, num_samples, rng)[0])


def sample_conditional(model, xstar, n, rng=None):
    """Draw n outputs from the predictive distribution at x*."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    d_w = model.config.d_w
    xc = None
    if model.config.use_inputs:
        xc = model.project_condition(
            np.atleast_2d(np.asarray(xstar, dtype=np.float64)))
        xc = np.repeat(xc, n, axis=0)
    if d_w > 0:
        w = rng.standard_normal((n, d_w))
        rows = w if xc is None else np.concatenate([xc, w], axis=1)
    else:
        rows = xc
    mu, var = _conditional_at(model, rows)
    f = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
    p = model.output_matrix()
    mean_y = f if p is None else f @ p
    return mean_y + np.sqrt(model.sigma2) * rng.standard_normal(mean_y.shape)


def density_grid(model, xstar, axes, num_samples=DEFAULT_SAMPLES, rng=None):
    """Predictive log-density over a rectangular grid of outputs at a fixed
    condition, with latent draws shared across all grid nodes."""
    axes = [np.asarray(a, dtype=np.float64) for a in axes]
    if len(axes) != model.d_y or len(axes) not in (1, 2):
        raise ValueError("density grids support D_y in {1, 2}")
    xstar = None if xstar is None else np.asarray(xstar, dtype=np.float64)
    grid = DensityGrid(condition=xstar, axes=axes, logdens=None)
    nodes = grid.nodes()
    rng = np.random.default_rng(0) if rng is None else rng
    w = None
    if model.config.d_w > 0:
        w = rng.standard_normal((num_samples, model.config.d_w))
    xrep = None if xstar is None else np.tile(xstar, (nodes.shape[0], 1))
    logd = predictive_logdensity_batch(model, xrep, nodes,
                                       num_samples, w_samples=w)
    grid.logdens = logd if len(axes) == 1 else \
        logd.reshape(len(axes[0]), len(axes[1]))
    return grid


def nlpp(model, x_test, y_test, num_samples=DEFAULT_SAMPLES, rng=None):
    """Mean negative log predictive probability per test point (nats)."""
    y_test = np.atleast_2d(np.asarray(y_test, dtype=np.float64))
    if y_test.shape[0] == 0:
        raise ValueError("empty test set")
    logd = predictive_logdensity_batch(model, x_test, y_test,
                                       num_samples, rng)
    return float(-np.mean(logd))
