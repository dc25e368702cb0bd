"""Shared helpers for constructing small randomized models."""

import numpy as np

from gpcde import config as cfg
from gpcde.model import GpCdeModel


def randomize_model(model, rng, scale=0.5):
    """Perturb every registered parameter and the inducing posterior so
    tests exercise generic (non-initial) parameter values."""
    for name, spec in model.store.specs.items():
        raw = model.store.raw[name]
        model.store.raw[name] = np.asarray(
            raw + scale * rng.standard_normal(raw.shape))
    if model.u_mean is not None:
        m = model.u_mean.shape[0]
        model.u_mean = rng.standard_normal(model.u_mean.shape) * scale
        chol = np.zeros_like(model.u_chol)
        for ell in range(chol.shape[0]):
            a = rng.standard_normal((m, m)) * 0.2
            chol[ell] = np.linalg.cholesky(a @ a.T + 0.3 * np.eye(m))
        model.u_chol = chol
    return model


def make_model(rng, n=8, d_x=2, d_y=2, d_w=1, m=4,
               latent_mode=cfg.PERPOINT, use_inputs=True,
               num_gp_outputs=None, input_projection_dim=None,
               variational_optimizer="natgrad", encoder_widths=(4,),
               quad_points=10, randomize=True, **kw):
    config = cfg.ModelConfig(
        d_w=d_w, latent_mode=latent_mode, use_inputs=use_inputs,
        num_inducing=m, num_gp_outputs=num_gp_outputs,
        input_projection_dim=input_projection_dim,
        variational_optimizer=variational_optimizer,
        encoder_widths=encoder_widths, quad_points=quad_points, **kw)
    model = GpCdeModel(config, d_x, d_y, n, rng=rng)
    if randomize:
        randomize_model(model, rng)
    X = rng.standard_normal((n, d_x))
    Y = rng.standard_normal((n, d_y))
    return model, X, Y
