"""GP-CDE model assembly and the bound graph builders.

A :class:`GpCdeModel` owns a parameter registry (everything the ordinary
optimizer touches) plus the inducing variational state (mean, Cholesky
factors), which in natural-gradient mode is updated outside the registry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import bounds
from . import config as cfg
from . import sparse_gp
from .bounds import GaussianLatentPosterior
from .kernels import KernelSpec
from .linear_maps import kl_input_projection, project_input
from .params import FREE, POSITIVE, TRIL, ParameterStore
from .quadrature import QuadratureRule, gauss_hermite_rule
from .recognition import EncoderNetwork
from .sparse_gp import InducingVariational


class GpCdeModel:
    def __init__(self, config: cfg.ModelConfig, d_x: int, d_y: int,
                 n_train: int, rng=None):
        config.validate(d_x, d_y)
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.config = config
        self.d_x = d_x
        self.d_y = d_y
        self.n_train = n_train
        self.d_cond = 0 if not config.use_inputs else (
            config.input_projection_dim or d_x)
        self.d_in = self.d_cond + config.d_w
        self.num_outputs = config.num_gp_outputs or d_y
        self.has_mixing = config.num_gp_outputs is not None
        self.has_projection = config.input_projection_dim is not None

        store = ParameterStore()
        store.register("signal_variance", np.array(1.0), POSITIVE)
        store.register("lengthscales", np.ones(self.d_in), POSITIVE)
        store.register("sigma2", np.array(config.sigma2), POSITIVE)
        store.register("Z", rng.standard_normal(
            (config.num_inducing, self.d_in)), FREE)
        if self.has_projection:
            dq = config.input_projection_dim
            store.register("a_mean",
                           rng.standard_normal((dq, d_x)) / np.sqrt(d_x), FREE)
            store.register("a_logvar", np.full((dq, d_x), np.log(1e-2)), FREE)
        if self.has_mixing:
            store.register("P", np.eye(self.num_outputs, d_y), FREE)
        self.encoder = None
        if config.d_w > 0 and config.latent_mode == cfg.AMORTIZED:
            enc_in = (d_x if config.use_inputs else 0) + d_y
            self.encoder = EncoderNetwork(enc_in, config.d_w,
                                          config.encoder_widths)
            self.encoder.register(store, rng)
        elif config.d_w > 0 and config.latent_mode == cfg.PERPOINT:
            store.register("w_mu", 0.1 * rng.standard_normal(
                (n_train, config.d_w)), FREE)
            chol0 = np.tile(0.1 * np.eye(config.d_w), (n_train, 1, 1))
            store.register("w_chol", chol0, TRIL)

        m0 = np.zeros((config.num_inducing, self.num_outputs))
        chol0 = np.tile(0.1 * np.eye(config.num_inducing),
                        (self.num_outputs, 1, 1))
        if config.variational_optimizer == "adam":
            store.register("u_mean", m0, FREE)
            store.register("u_chol", chol0, TRIL)
            self.u_mean = None
            self.u_chol = None
        else:
            self.u_mean = m0
            self.u_chol = chol0
        self.store = store

    # -- parameter partitions --------------------------------------------
    def adam_param_names(self):
        names = [n for n in self.store.specs
                 if not (n == "sigma2" and not self.config.sigma2_trainable)]
        return names

    # -- plain value accessors -------------------------------------------
    @property
    def sigma2(self):
        return float(self.store.constrained_value("sigma2"))

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(
            family=self.config.kernel_family,
            signal_variance=float(
                self.store.constrained_value("signal_variance")),
            lengthscales=self.store.constrained_value("lengthscales"),
            jitter=self.config.jitter)

    def inducing(self) -> InducingVariational:
        if self.config.variational_optimizer == "adam":
            mean = self.store.constrained_value("u_mean")
            chol = self.store.constrained_value("u_chol")
        else:
            mean, chol = self.u_mean, self.u_chol
        return InducingVariational(self.store.constrained_value("Z"),
                                   mean, chol)

    def set_inducing_posterior(self, mean, chol):
        if self.config.variational_optimizer == "adam":
            self.store.set_constrained("u_mean", mean)
            self.store.set_constrained("u_chol", chol)
        else:
            self.u_mean = np.asarray(mean, dtype=np.float64)
            self.u_chol = np.asarray(chol, dtype=np.float64)

    def output_matrix(self):
        return self.store.constrained_value("P") if self.has_mixing else None

    def project_condition(self, x):
        """Mean projection of raw conditions; identity without A."""
        if not self.config.use_inputs:
            return None
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.has_projection:
            return x @ self.store.constrained_value("a_mean").T
        return x

    def latent_posterior(self, x, y) -> GaussianLatentPosterior:
        """Gaussian q(w) at the given training points (not quadrature mode)."""
        c = self.config
        if c.d_w == 0 or c.latent_mode == cfg.QUADRATURE:
            raise ValueError("model has no explicit Gaussian q(w)")
        if c.latent_mode == cfg.AMORTIZED:
            y = np.atleast_2d(np.asarray(y, dtype=np.float64))
            if c.use_inputs:
                xy = np.concatenate([np.atleast_2d(x), y], axis=1)
            else:
                xy = y
            params = {n: self.store.constrained_value(n)
                      for n in self.encoder.param_names()}
            mu, scale = self.encoder.forward(params, xy)
            return GaussianLatentPosterior.from_diagonal(mu, scale)
        return GaussianLatentPosterior(self.store.constrained_value("w_mu"),
                                       self.store.constrained_value("w_chol"))


@dataclass
class GraphResult:
    tape: ad.Tape
    elbo: ad.Node
    leaves: dict                 # unconstrained parameter leaves
    u_mean_leaf: ad.Node = None  # natural mode only
    u_cov_leaves: list = None    # natural mode only: S_l full-matrix leaves

    @property
    def value(self):
        return float(self.elbo.value)


def _repeat_rows(x, reps):
    """Repeat each row `reps` times; works on Nodes via fancy indexing."""
    n = ad.value_of(x).shape[0]
    idx = np.repeat(np.arange(n), reps)
    return x[idx] if isinstance(x, ad.Node) else np.asarray(x)[idx]


def build_elbo_graph(model: GpCdeModel, X, Y, idx=None, *, kind="auto",
                     rng=None, mc_samples=None, rule=None,
                     sample_projection=True, fixed_eps=None,
                     fixed_a_eps=None, q_w_override=None):
    """Assemble the bound for one minibatch as an autodiff graph.

    kind: 'auto' picks from the config; explicit kinds are 'gp' (no
    latents), 'mc' (Gaussian q(w), reparameterized samples),
    'deterministic' (Gaussian q(w), quadrature inner expectation) and
    'optimal' (free-form bound via prior quadrature).
    """
    c = model.config
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n_total = model.n_train
    if idx is None:
        idx = np.arange(Y.shape[0])
    idx = np.asarray(idx)
    batch = len(idx)
    if kind == "auto":
        if c.d_w == 0:
            kind = "gp"
        elif c.latent_mode == cfg.QUADRATURE:
            kind = "optimal"
        elif c.deterministic_inner:
            kind = "deterministic"
        else:
            kind = "mc"
    if kind in ("optimal", "deterministic") and rule is None:
        rule = gauss_hermite_rule(c.quad_points, max(c.d_w, 1))
    if mc_samples is None:
        mc_samples = c.mc_samples

    tape = ad.Tape()
    leaves = model.store.leaves(tape)
    con = {n: model.store.constrain_leaf(n, leaves[n]) for n in leaves}
    sv, ls, s2, z = (con["signal_variance"], con["lengthscales"],
                     con["sigma2"], con["Z"])
    yb = Y[idx]

    # inducing posterior
    u_mean_leaf = None
    u_cov_leaves = None
    if c.variational_optimizer == "adam":
        m_node = con["u_mean"]
        s_list = [con["u_chol"][ell] @ ad.transpose(con["u_chol"][ell])
                  for ell in range(model.num_outputs)]
    else:
        u_mean_leaf = ad.leaf(model.u_mean, tape, "u_mean")
        u_cov_leaves = [
            ad.leaf(model.u_chol[ell] @ model.u_chol[ell].T, tape,
                    f"u_cov_{ell}")
            for ell in range(model.num_outputs)]
        m_node = u_mean_leaf
        s_list = u_cov_leaves

    # condition part of the GP input
    xc = None
    if c.use_inputs:
        xb = np.atleast_2d(np.asarray(X, dtype=np.float64))[idx]
        if model.has_projection:
            if sample_projection:
                eps = fixed_a_eps if fixed_a_eps is not None else \
                    rng.standard_normal(ad.value_of(con["a_mean"]).shape)
                a = con["a_mean"] + ad.sqrt(ad.exp(con["a_logvar"])) * eps
            else:
                a = con["a_mean"]
            xc = xb @ ad.transpose(a)
        else:
            xc = xb

    lk = sparse_gp._kzz_chol(c.kernel_family, sv, ls, c.jitter, z)
    p_node = con.get("P")

    def marginal_loglik(xaug, y_rows):
        mu, var = sparse_gp.conditional_terms(
            c.kernel_family, sv, ls, c.jitter, z, m_node, s_list, xaug, lk=lk)
        return bounds.expected_loglik_terms(y_rows, mu, var, s2, p_node)

    def augmented(w, cond):
        if cond is None:
            return w
        return ad.concatenate([cond, w], axis=1)

    kl_w = 0.0
    if kind == "gp":
        if c.d_w != 0:
            raise ValueError("kind='gp' needs d_w == 0")
        ll = marginal_loglik(xc, yb)
        data_term = ad.sum_(ll)
    elif kind == "mc":
        mu_w, scale_w, chol_w = _latent_params(model, con, X, Y, idx,
                                               q_w_override)
        acc = None
        for s in range(mc_samples):
            if fixed_eps is not None:
                eps = fixed_eps[s]
            else:
                eps = rng.standard_normal((batch, c.d_w))
            if chol_w is not None:
                w = mu_w + ad.reshape(
                    chol_w @ ad.reshape(eps, (batch, c.d_w, 1)),
                    (batch, c.d_w))
            else:
                w = mu_w + scale_w * eps
            ll = marginal_loglik(augmented(w, xc), yb)
            acc = ll if acc is None else acc + ll
        data_term = ad.sum_(acc / mc_samples)
        kl_w = _latent_kl(mu_w, scale_w, chol_w)
    elif kind == "deterministic":
        mu_w, scale_w, chol_w = _latent_params(model, con, X, Y, idx,
                                               q_w_override)
        q = rule.num_points
        xi = np.tile(rule.nodes, (batch, 1))               # (B*Q, D_w)
        mu_rep = _repeat_rows(mu_w, q)
        if chol_w is not None:
            chol_rep = _repeat_rows(chol_w, q)
            w = mu_rep + ad.reshape(
                chol_rep @ ad.reshape(xi, (batch * q, c.d_w, 1)),
                (batch * q, c.d_w))
        else:
            w = mu_rep + _repeat_rows(scale_w, q) * xi
        xc_rep = None if xc is None else _repeat_rows(xc, q)
        ll = marginal_loglik(augmented(w, xc_rep), np.repeat(yb, q, axis=0))
        inner = ad.sum_(ad.reshape(ll, (batch, q)) *
                        rule.weights.reshape(1, -1), axis=1)
        data_term = ad.sum_(inner)
        kl_w = _latent_kl(mu_w, scale_w, chol_w)
    elif kind == "optimal":
        q = rule.num_points
        w = np.tile(rule.nodes, (batch, 1))
        xc_rep = None if xc is None else _repeat_rows(xc, q)
        ll = marginal_loglik(augmented(w, xc_rep), np.repeat(yb, q, axis=0))
        per_point = ad.logsumexp_weighted(ad.reshape(ll, (batch, q)),
                                          rule.weights, axis=1)
        data_term = ad.sum_(per_point)
    else:
        raise ValueError(f"unknown bound kind {kind!r}")

    kl_u = sparse_gp.kl_terms(c.kernel_family, sv, ls, c.jitter, z,
                              m_node, s_list, lk=lk)
    elbo = (n_total / batch) * (data_term - kl_w) - kl_u
    if model.has_projection:
        elbo = elbo - kl_input_projection(con["a_mean"], con["a_logvar"])
    return GraphResult(tape, elbo, leaves, u_mean_leaf, u_cov_leaves)


def _latent_params(model, con, X, Y, idx, q_w_override):
    """Return (mu, scale, chol) with exactly one of scale/chol non-None."""
    c = model.config
    if q_w_override is not None:
        return q_w_override.mu[idx], None, q_w_override.chol[idx]
    if c.latent_mode == cfg.AMORTIZED:
        yb = np.atleast_2d(np.asarray(Y, dtype=np.float64))[idx]
        if c.use_inputs:
            xy = np.concatenate(
                [np.atleast_2d(np.asarray(X, dtype=np.float64))[idx], yb],
                axis=1)
        else:
            xy = yb
        params = {n: con[n] for n in model.encoder.param_names()}
        mu, scale = model.encoder.forward(params, xy)
        return mu, scale, None
    if c.latent_mode == cfg.PERPOINT:
        return con["w_mu"][idx], None, con["w_chol"][idx]
    raise ValueError("quadrature mode has no Gaussian latent parameters")


def _latent_kl(mu, scale, chol):
    if chol is not None:
        return bounds.kl_latent_terms_chol(mu, chol)
    return bounds.kl_latent_terms_diag(mu, scale)


# -- scalar bound evaluations --------------------------------------------

def elbo_gaussian_qw(model, X, Y, idx=None, mc_samples=None, rng=None):
    """Reparameterized minibatch estimate of the Gaussian-q(w) bound."""
    rng = np.random.default_rng(0) if rng is None else rng
    g = build_elbo_graph(model, X, Y, idx, kind="mc", rng=rng,
                         mc_samples=mc_samples)
    return g.value


def elbo_gaussian_qw_deterministic(model, X, Y, idx=None, rule=None,
                                   q_w_override=None):
    """Gaussian-q(w) bound with the inner expectation done by quadrature."""
    if rule is None:
        rule = gauss_hermite_rule(model.config.quad_points,
                                  max(model.config.d_w, 1))
    g = build_elbo_graph(model, X, Y, idx, kind="deterministic", rule=rule,
                         sample_projection=False, q_w_override=q_w_override)
    return g.value


def elbo_optimal_qw(model, X, Y, idx=None, rule=None):
    """Free-form optimal bound via Gauss-Hermite quadrature over p(w)."""
    if model.config.d_w == 0:
        raise ValueError("optimal bound needs latent variables")
    g = build_elbo_graph(model, X, Y, idx, kind="optimal", rule=rule,
                         sample_projection=False)
    return g.value


def elbo_gp(model, X, Y, idx=None):
    """Sparse-GP regression bound (no latent variables)."""
    g = build_elbo_graph(model, X, Y, idx, kind="gp",
                         sample_projection=False)
    return g.value
