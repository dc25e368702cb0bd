"""Optimizers: Adam for ordinary parameters, natural-gradient steps for the
Gaussian inducing posterior, and the closed-form optimum it converges to.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels


class SpdStepError(RuntimeError):
    """A natural-gradient step left the natural-parameter cone."""


@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float | None = None
    decay_steps: int = 1000
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self):
        if self.decay_rate is None:
            return self.learning_rate
        return self.learning_rate * self.decay_rate ** (self.t // self.decay_steps)


def adam_step(state: AdamState, params: dict, grads: dict):
    """One bias-corrected Adam step, minimizing.  Mutates `params` (the
    unconstrained raw arrays) in place."""
    lr = state.current_lr()
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        mhat = state.m[name] / (1 - state.beta1 ** t)
        vhat = state.v[name] / (1 - state.beta2 ** t)
        params[name] = params[name] - lr * mhat / (np.sqrt(vhat) + state.eps)


@dataclass
class NatGradState:
    gamma: float = 0.1
    max_halvings: int = 5

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("natural-gradient step size must be in (0, 1]")


def _natgrad_single(m, s, grad_m, grad_s, gamma):
    """Natural-gradient update for one Gaussian q(u_l) via the
    expectation-parameter gradient identity (no explicit Fisher inverse)."""
    if not np.any(grad_m) and not np.any(grad_s):
        return m.copy(), np.linalg.cholesky(s)
    grad_s = 0.5 * (grad_s + grad_s.T)
    s_chol = np.linalg.cholesky(s)
    s_inv = scipy.linalg.cho_solve((s_chol, True), np.eye(s.shape[0]))
    theta1 = s_inv @ m
    theta2 = -0.5 * s_inv
    theta1_new = theta1 + gamma * (grad_m - 2.0 * grad_s @ m)
    theta2_new = theta2 + gamma * grad_s
    prec = -2.0 * theta2_new
    prec = 0.5 * (prec + prec.T)
    try:
        prec_chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise SpdStepError("natural second parameter not negative definite")
    s_new = scipy.linalg.cho_solve((prec_chol, True), np.eye(prec.shape[0]))
    s_new = 0.5 * (s_new + s_new.T)
    m_new = s_new @ theta1_new
    return m_new, np.linalg.cholesky(s_new)


def natgrad_step(state: NatGradState, mean, chol, grad_mean, grad_covs):
    """Step all output dimensions; grads are ELBO gradients (ascent) with
    respect to (m_l, S_l).  On an SPD failure the step size is halved up to
    `max_halvings` times, then the offending dimension is skipped.

    Returns (new_mean, new_chol).
    """
    num_outputs = mean.shape[1]
    new_mean = mean.copy()
    new_chol = chol.copy()
    for ell in range(num_outputs):
        s = chol[ell] @ chol[ell].T
        gamma = state.gamma
        for attempt in range(state.max_halvings + 1):
            try:
                m_new, l_new = _natgrad_single(
                    mean[:, ell], s, grad_mean[:, ell], grad_covs[ell], gamma)
                new_mean[:, ell] = m_new
                new_chol[ell] = l_new
                break
            except SpdStepError:
                gamma *= 0.5
        else:
            warnings.warn(
                f"natural-gradient step skipped for output {ell}: covariance "
                "update failed to stay positive definite", RuntimeWarning)
    return new_mean, new_chol


def deterministic_w_grid(model, X, Y, rule):
    """Per-point latent integration points and weights for the conjugate
    (deterministic) bound: transformed Gauss-Hermite nodes under the
    model's Gaussian q(w), or prior nodes in quadrature mode.

    Returns (w_points, weights) with shapes (N, Q, D_w) and (Q,), or
    (None, None) when the model has no latent variables.
    """
    from . import config as cfg
    c = model.config
    if c.d_w == 0:
        return None, None
    if c.latent_mode == cfg.QUADRATURE:
        n = np.atleast_2d(Y).shape[0]
        return np.tile(rule.nodes, (n, 1, 1)), rule.weights
    q_w = model.latent_posterior(X, Y)
    pts = q_w.mu[:, None, :] + \
        np.einsum("nij,qj->nqi", q_w.chol, rule.nodes)
    return pts, rule.weights


def analytic_optimal_qu(model, X, Y, w_points=None, weights=None):
    """Closed-form maximizer of the deterministic full-batch bound over the
    inducing posterior (m_l, S_l), all other parameters held fixed.

    The bound is quadratic in the inducing outputs, so the optimum exists
    in closed form.  Latent inputs are handled deterministically through
    the supplied integration points `w_points` (N, Q, D_w) with `weights`
    (Q,); pass None for a latent-free model.  Output mixing is not
    supported (it couples the outputs, breaking the per-output solve).

    Returns (mean, chol) shaped (M, L) and (L, M, M).
    """
    if model.has_mixing:
        raise ValueError("analytic optimum requires an unmixed model")
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n = Y.shape[0]
    spec = model.kernel_spec()
    q = model.inducing()
    z = q.Z
    m_num = z.shape[0]
    sigma2 = model.sigma2
    xc = model.project_condition(X)

    if w_points is None:
        if model.config.d_w != 0:
            raise ValueError("latent model needs integration points")
        xaug = xc
        wvec = np.ones(n)
        y_rep = Y
    else:
        n_q = w_points.shape[1]
        w_flat = w_points.reshape(n * n_q, -1)
        if xc is not None:
            xaug = np.concatenate(
                [np.repeat(xc, n_q, axis=0), w_flat], axis=1)
        else:
            xaug = w_flat
        wvec = np.tile(np.asarray(weights, dtype=np.float64), n)
        y_rep = np.repeat(Y, n_q, axis=0)

    kzz = kernels.gram_with_jitter(spec, z)
    lk = np.linalg.cholesky(kzz)
    kzx = kernels.gram(spec, z, xaug)
    a1 = scipy.linalg.solve_triangular(lk, kzx, lower=True)
    c = scipy.linalg.solve_triangular(lk, a1, lower=True, trans="T")
    f_mat = (c * wvec) @ c.T
    kzz_inv = scipy.linalg.cho_solve((lk, True), np.eye(m_num))
    prec = kzz_inv + f_mat / sigma2
    prec = 0.5 * (prec + prec.T)
    prec_chol = np.linalg.cholesky(prec)
    s_opt = scipy.linalg.cho_solve((prec_chol, True), np.eye(m_num))
    s_opt = 0.5 * (s_opt + s_opt.T)
    s_chol = np.linalg.cholesky(s_opt)
    b = c @ (wvec[:, None] * y_rep)                       # (M, L)
    mean = s_opt @ b / sigma2
    chol = np.tile(s_chol, (model.num_outputs, 1, 1))
    return mean, chol
