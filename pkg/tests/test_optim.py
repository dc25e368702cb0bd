"""Optimizers: Adam update arithmetic, natural-gradient exactness, SPD
preservation, and the analytic inducing-posterior optimum."""

import numpy as np
import pytest
from conftest import make_model

from gpcde import autodiff as ad
from gpcde import config as cfg
from gpcde.kernels import gram_with_jitter
from gpcde.model import build_elbo_graph, elbo_gaussian_qw_deterministic
from gpcde.optim import (AdamState, NatGradState, adam_step,
                         analytic_optimal_qu, deterministic_w_grid,
                         natgrad_step)
from gpcde.quadrature import gauss_hermite_rule


def test_adam_zero_grad_no_move():
    state = AdamState(learning_rate=0.1)
    params = {"p": np.array([1.0, 2.0])}
    adam_step(state, params, {"p": np.zeros(2)})
    assert np.array_equal(params["p"], [1.0, 2.0])


def test_adam_first_step_magnitude():
    # bias-corrected first step with constant gradient moves by ~lr
    state = AdamState(learning_rate=0.05)
    params = {"p": np.array([0.0])}
    adam_step(state, params, {"p": np.array([3.7])})
    assert abs(abs(params["p"][0]) - 0.05) < 1e-6


def test_adam_descends_gradient_sign():
    state = AdamState(learning_rate=0.1)
    params = {"p": np.array([0.0, 0.0])}
    adam_step(state, params, {"p": np.array([1.0, -1.0])})
    assert params["p"][0] < 0 and params["p"][1] > 0


def test_adam_decay_schedule():
    state = AdamState(learning_rate=0.01, decay_rate=0.5, decay_steps=10)
    assert state.current_lr() == 0.01
    state.t = 10
    assert abs(state.current_lr() - 0.005) < 1e-15
    state.t = 25
    assert abs(state.current_lr() - 0.0025) < 1e-15


def _qu_grads(model, X, Y, rule=None):
    """ELBO gradients wrt (m, S_l) via the graph's natural-mode leaves."""
    kind = "gp" if model.config.d_w == 0 else "deterministic"
    g = build_elbo_graph(model, X, Y, kind=kind, rule=rule,
                         sample_projection=False)
    grads = ad.grad(g.elbo, [g.u_mean_leaf] + g.u_cov_leaves)
    return grads[0], grads[1:]


@pytest.mark.parametrize("d_w", [0, 1])
def test_natgrad_unit_step_matches_analytic(d_w):
    rng = np.random.default_rng(0)
    model, X, Y = make_model(rng, n=7, m=4, d_w=d_w, d_y=2,
                             latent_mode=cfg.PERPOINT if d_w else cfg.AMORTIZED)
    rule = gauss_hermite_rule(15, 1) if d_w else None
    gm, gcovs = _qu_grads(model, X, Y, rule)
    state = NatGradState(gamma=1.0)
    mean, chol = natgrad_step(state, model.u_mean, model.u_chol, gm, gcovs)
    w_pts, w_wts = deterministic_w_grid(model, X, Y, rule) if d_w \
        else (None, None)
    m_star, chol_star = analytic_optimal_qu(model, X, Y, w_pts, w_wts)
    assert np.max(np.abs(mean - m_star)) < 1e-6
    for ell in range(chol.shape[0]):
        s_new = chol[ell] @ chol[ell].T
        s_star = chol_star[ell] @ chol_star[ell].T
        assert np.max(np.abs(s_new - s_star)) < 1e-6
    # post-step gradient vanishes at the optimum
    model.u_mean, model.u_chol = mean, chol
    gm2, gcovs2 = _qu_grads(model, X, Y, rule)
    norm = np.linalg.norm(gm2) + sum(np.linalg.norm(g) for g in gcovs2)
    assert norm < 1e-6


def test_natgrad_zero_grad_identity():
    rng = np.random.default_rng(1)
    model, X, Y = make_model(rng, n=5, m=3, d_w=0)
    state = NatGradState(gamma=0.5)
    gm = np.zeros_like(model.u_mean)
    gcovs = [np.zeros((3, 3)) for _ in range(2)]
    mean, chol = natgrad_step(state, model.u_mean, model.u_chol, gm, gcovs)
    assert np.allclose(mean, model.u_mean, atol=1e-12)
    for ell in range(2):
        assert np.allclose(chol[ell] @ chol[ell].T,
                           model.u_chol[ell] @ model.u_chol[ell].T,
                           atol=1e-12)


def test_spd_preservation_random_steps():
    rng = np.random.default_rng(2)
    model, X, Y = make_model(rng, n=6, m=3, d_w=0, d_y=1)
    state = NatGradState(gamma=0.1)
    for _ in range(300):
        gm, gcovs = _qu_grads(model, X, Y)
        model.u_mean, model.u_chol = natgrad_step(
            state, model.u_mean, model.u_chol, gm, gcovs)
        np.linalg.cholesky(model.u_chol[0] @ model.u_chol[0].T +
                           1e-14 * np.eye(3))
        # occasionally shake the hyperparameters to vary the landscape
        if rng.uniform() < 0.1:
            model.store.raw["lengthscales"] += 0.05 * rng.standard_normal(2)


def test_unit_step_monotone_improvement():
    rng = np.random.default_rng(3)
    for seed in range(5):
        model, X, Y = make_model(rng, n=6, m=3, d_w=1,
                                 latent_mode=cfg.PERPOINT)
        rule = gauss_hermite_rule(15, 1)
        before = elbo_gaussian_qw_deterministic(model, X, Y, rule=rule)
        gm, gcovs = _qu_grads(model, X, Y, rule)
        model.u_mean, model.u_chol = natgrad_step(
            NatGradState(gamma=1.0), model.u_mean, model.u_chol, gm, gcovs)
        after = elbo_gaussian_qw_deterministic(model, X, Y, rule=rule)
        assert after >= before - 1e-9


def test_analytic_beats_random_perturbations():
    rng = np.random.default_rng(4)
    model, X, Y = make_model(rng, n=6, m=3, d_w=0, d_y=1)
    from gpcde.model import elbo_gp
    m_star, chol_star = analytic_optimal_qu(model, X, Y)
    model.u_mean, model.u_chol = m_star, chol_star
    best = elbo_gp(model, X, Y)
    for _ in range(200):
        dm = 0.1 * rng.standard_normal(m_star.shape)
        dl = 0.05 * np.tril(rng.standard_normal(chol_star.shape))
        model.u_mean = m_star + dm
        model.u_chol = chol_star + dl
        try:
            val = elbo_gp(model, X, Y)
        except np.linalg.LinAlgError:
            continue
        assert val <= best + 1e-9


def test_analytic_nonsparse_limit():
    # Z = X with tiny jitter: q(f) at the training inputs approaches the
    # exact GP regression posterior mean
    rng = np.random.default_rng(5)
    n = 8
    config = cfg.ModelConfig(d_w=0, num_inducing=n, jitter=1e-10,
                             sigma2=0.1, quad_points=5)
    from gpcde.model import GpCdeModel
    model = GpCdeModel(config, 1, 1, n, rng=rng)
    X = np.linspace(-1, 1, n)[:, None]
    Y = np.sin(2 * X)
    model.store.set_constrained("Z", X.copy())
    m_star, chol_star = analytic_optimal_qu(model, X, Y)
    model.u_mean, model.u_chol = m_star, chol_star
    from gpcde.sparse_gp import conditional
    mu, _ = conditional(model.inducing(), model.kernel_spec(), X)
    kxx = gram_with_jitter(model.kernel_spec(), X)
    exact = kxx @ np.linalg.solve(kxx + 0.1 * np.eye(n), Y)
    assert np.max(np.abs(mu - exact)) < 1e-5


def test_analytic_rejects_mixing():
    rng = np.random.default_rng(6)
    model, X, Y = make_model(rng, n=5, m=3, d_w=0, d_y=2, num_gp_outputs=1)
    with pytest.raises(ValueError):
        analytic_optimal_qu(model, X, Y)


def test_natgrad_gamma_range():
    with pytest.raises(ValueError):
        NatGradState(gamma=0.0)
    with pytest.raises(ValueError):
        NatGradState(gamma=1.5)
