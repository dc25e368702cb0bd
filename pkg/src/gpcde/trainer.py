"""Model assembly and the minibatch training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import config as cfg
from . import sparse_gp
from .data import ConditionedDataset
from .model import GpCdeModel, build_elbo_graph
from .optim import (AdamState, NatGradState, adam_step, analytic_optimal_qu,
                    deterministic_w_grid, natgrad_step)
from .quadrature import gauss_hermite_rule

CURVE_EVERY = 50
# quadrature size for the deterministic monitoring bound; kept moderate so
# curve evaluation stays cheap relative to training
MONITOR_QUAD = 30


@dataclass
class TrainedModel:
    model: GpCdeModel
    config: cfg.ModelConfig
    curve: list = field(default_factory=list)   # (iteration, elbo, wall_ms)
    x_stats: object = None
    y_stats: object = None
    x_names: list = None
    y_names: list = None


def minibatches(n, batch, rng):
    """Endless iterator of index arrays: shuffled epochs, each index used
    exactly once per epoch."""
    if not 1 <= batch <= n:
        raise ValueError("batch size must be in [1, N]")
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            yield perm[start:start + batch]


def _init_inducing(model, data, rng):
    xc = model.project_condition(data.X) if model.config.use_inputs else None
    parts = []
    if xc is not None:
        parts.append(xc)
    if model.config.d_w > 0:
        parts.append(rng.standard_normal((data.n, model.config.d_w)))
    x_aug = np.concatenate(parts, axis=1)
    z = sparse_gp.init_inducing_inputs(x_aug, model.config.num_inducing, rng)
    model.store.set_constrained("Z", z)


def deterministic_bound(model, data, rule=None):
    """Full-batch deterministic evaluation of the configured bound."""
    c = model.config
    if c.d_w == 0:
        g = build_elbo_graph(model, data.X, data.Y, kind="gp",
                             sample_projection=False)
    elif c.latent_mode == cfg.QUADRATURE:
        if rule is None:
            rule = gauss_hermite_rule(c.quad_points, c.d_w)
        g = build_elbo_graph(model, data.X, data.Y, kind="optimal",
                             rule=rule, sample_projection=False)
    else:
        if rule is None:
            rule = gauss_hermite_rule(min(c.quad_points, MONITOR_QUAD),
                                      c.d_w)
        g = build_elbo_graph(model, data.X, data.Y, kind="deterministic",
                             rule=rule, sample_projection=False)
    return g.value


def train(data: ConditionedDataset, config: cfg.ModelConfig,
          rng=None) -> TrainedModel:
    """Run the configured number of iterations.

    Each iteration: sample a minibatch, build the bound graph, take an
    Adam step on hyperparameters / Z / encoder / A / P and then a
    natural-gradient step on the inducing posterior.  Deterministic given
    the seed.
    """
    config.validate(data.X.shape[1], data.Y.shape[1])
    rng = np.random.default_rng(config.seed) if rng is None else rng
    model = GpCdeModel(config, data.X.shape[1], data.Y.shape[1], data.n,
                       rng=rng)
    _init_inducing(model, data, rng)
    trained = TrainedModel(model, config, x_stats=data.x_stats,
                           y_stats=data.y_stats, x_names=list(data.x_names),
                           y_names=list(data.y_names))
    if config.iterations == 0:
        return trained

    adam = AdamState(learning_rate=config.learning_rate,
                     decay_rate=config.lr_decay_rate,
                     decay_steps=config.lr_decay_steps)
    natgrad = NatGradState(gamma=config.natgrad_step)
    adam_names = model.adam_param_names()
    batches = minibatches(data.n, min(config.batch_size, data.n), rng)
    rule = None
    if config.d_w > 0 and config.latent_mode == cfg.QUADRATURE:
        rule = gauss_hermite_rule(config.quad_points, config.d_w)
    elif config.d_w > 0 and config.deterministic_inner:
        pts = config.quad_points
        from .quadrature import MAX_TENSOR_POINTS
        if pts ** config.d_w > MAX_TENSOR_POINTS:
            pts = int(MAX_TENSOR_POINTS ** (1.0 / config.d_w))
        rule = gauss_hermite_rule(pts, config.d_w)
    analytic_rule = None
    if config.variational_optimizer == "analytic" and config.d_w > 0:
        analytic_rule = gauss_hermite_rule(
            min(config.quad_points, MONITOR_QUAD), config.d_w)

    t0 = time.perf_counter()
    for it in range(config.iterations):
        idx = next(batches)
        try:
            graph = build_elbo_graph(model, data.X, data.Y, idx, rng=rng,
                                     rule=rule)
            targets = [graph.leaves[n] for n in adam_names]
            nat_targets = []
            if graph.u_mean_leaf is not None and \
                    config.variational_optimizer == "natgrad":
                nat_targets = [graph.u_mean_leaf] + graph.u_cov_leaves
            grads = ad.grad(graph.elbo, targets + nat_targets)
        except ad.NumericalError as e:
            raise RuntimeError(
                f"NaN/Inf in the bound at iteration {it}: {e}") from e
        adam_grads = {n: -g for n, g in zip(adam_names, grads)}
        adam_step(adam, model.store.raw, adam_grads)
        if nat_targets:
            gm = grads[len(adam_names)]
            gcovs = grads[len(adam_names) + 1:]
            model.u_mean, model.u_chol = natgrad_step(
                natgrad, model.u_mean, model.u_chol, gm, gcovs)
        elif config.variational_optimizer == "analytic":
            w_pts, w_wts = (None, None) if config.d_w == 0 else \
                deterministic_w_grid(model, data.X, data.Y, analytic_rule)
            model.u_mean, model.u_chol = analytic_optimal_qu(
                model, data.X, data.Y, w_pts, w_wts)
        if (it + 1) % CURVE_EVERY == 0 or it + 1 == config.iterations:
            elbo = deterministic_bound(model, data)
            wall_ms = (time.perf_counter() - t0) * 1e3
            trained.curve.append((it + 1, elbo, wall_ms))
    return trained
