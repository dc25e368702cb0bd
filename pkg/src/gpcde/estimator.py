"""Estimator facade following the scikit-learn convention.

Thin wrappers with ``fit`` / ``score`` / ``get_params`` / ``set_params``
over the functional training and evaluation code, so the models slot
into scikit-learn-style pipelines and grid searches without pulling in
scikit-learn itself.  Hyperparameters mirror :class:`gpcde.ModelConfig`.
"""

from __future__ import annotations

import inspect

import numpy as np

from . import baselines, config as cfg, density
from .data import ConditionedDataset
from .trainer import TrainedModel, train


class _ParamsMixin:
    """get_params / set_params over the constructor signature."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {p: getattr(self, p) for p in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for "
                                 f"{type(self).__name__}")
            setattr(self, key, value)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self):
        if getattr(self, "_fitted", None) is None:
            raise RuntimeError(f"{type(self).__name__} is not fitted")


class GPCDE(_ParamsMixin):
    """Gaussian process conditional density estimator.

    ``fit(X, y)`` standardizes the data, trains the configured model, and
    stores the statistics so scoring applies them without refitting.
    ``score`` follows the scikit-learn convention (higher is better): the
    mean log predictive density of (X, y).
    """

    def __init__(self, d_w=1, latent_mode=cfg.QUADRATURE, kernel_family="RBF",
                 num_inducing=32, input_projection_dim=None,
                 num_gp_outputs=None, sigma2=0.1, mc_samples=1,
                 quad_points=100, learning_rate=0.01, batch_size=128,
                 iterations=2000, variational_optimizer="natgrad",
                 natgrad_step=0.1, eval_samples=density.DEFAULT_SAMPLES,
                 standardize=True, seed=0):
        self.d_w = d_w
        self.latent_mode = latent_mode
        self.kernel_family = kernel_family
        self.num_inducing = num_inducing
        self.input_projection_dim = input_projection_dim
        self.num_gp_outputs = num_gp_outputs
        self.sigma2 = sigma2
        self.mc_samples = mc_samples
        self.quad_points = quad_points
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.iterations = iterations
        self.variational_optimizer = variational_optimizer
        self.natgrad_step = natgrad_step
        self.eval_samples = eval_samples
        self.standardize = standardize
        self.seed = seed
        self._fitted = None

    def _config(self):
        return cfg.ModelConfig(
            d_w=self.d_w, latent_mode=self.latent_mode,
            use_inputs=True, kernel_family=self.kernel_family,
            num_inducing=self.num_inducing,
            input_projection_dim=self.input_projection_dim,
            num_gp_outputs=self.num_gp_outputs, sigma2=self.sigma2,
            mc_samples=self.mc_samples, quad_points=self.quad_points,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            iterations=self.iterations,
            variational_optimizer=self.variational_optimizer,
            natgrad_step=self.natgrad_step, seed=self.seed)

    def fit(self, X, y):
        data = ConditionedDataset(np.atleast_2d(X), np.atleast_2d(y))
        if self.standardize:
            data = data.standardized()
        self._fitted = train(data, self._config())
        return self

    @property
    def trained_(self) -> TrainedModel:
        self._check_fitted()
        return self._fitted

    def _transform(self, X, y):
        t = self.trained_
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = None if y is None else np.atleast_2d(
            np.asarray(y, dtype=np.float64))
        if not self.standardize or t.x_stats is None:
            return X, y, 0.0
        xs = (X - t.x_stats.mean) / t.x_stats.std
        if y is None:
            return xs, None, 0.0
        ys = (y - t.y_stats.mean) / t.y_stats.std
        # density change of variables for the per-column scaling
        log_jac = -float(np.sum(np.log(t.y_stats.std)))
        return xs, ys, log_jac

    def log_density(self, X, y, rng=None):
        """Log predictive density per row, in the original data units."""
        xs, ys, log_jac = self._transform(X, y)
        rng = np.random.default_rng(self.seed) if rng is None else rng
        logd = density.predictive_logdensity_batch(
            self.trained_.model, xs, ys, self.eval_samples, rng)
        return logd + log_jac

    def score(self, X, y):
        return float(np.mean(self.log_density(X, y)))

    def nlpp(self, X, y):
        return -self.score(X, y)

    def sample(self, x, n, rng=None):
        """Draw n outputs at a single condition, in original units."""
        xs, _, _ = self._transform(np.atleast_2d(x), None)
        rng = np.random.default_rng(self.seed) if rng is None else rng
        draws = density.sample_conditional(self.trained_.model, xs[0], n, rng)
        t = self.trained_
        if self.standardize and t.y_stats is not None:
            draws = draws * t.y_stats.std + t.y_stats.mean
        return draws


class UnconditionalKDE(_ParamsMixin):
    """Gaussian kernel density baseline over outputs only."""

    def __init__(self, bandwidth=None, cv_folds=5, seed=0):
        self.bandwidth = bandwidth
        self.cv_folds = cv_folds
        self.seed = seed
        self._fitted = None

    def fit(self, X, y=None):
        # X is ignored; present for interface compatibility
        target = np.atleast_2d(y if y is not None else X)
        h = self.bandwidth
        if h is None:
            h = baselines.kde_select_bandwidth(target, self.cv_folds,
                                               seed=self.seed)
        self.bandwidth_ = h
        self._fitted = baselines.KdeModel(target, h)
        return self

    def log_density(self, X, y):
        self._check_fitted()
        y = np.atleast_2d(y)
        return np.array([baselines.kde_logpdf(self._fitted, None, row)
                         for row in y])

    def score(self, X, y):
        return float(np.mean(self.log_density(X, y)))

    def nlpp(self, X, y):
        return -self.score(X, y)


class ConditionalKDE(_ParamsMixin):
    """Nearest-neighbor conditional KDE; bandwidth comes from the
    unconditional model unless given."""

    def __init__(self, k_neighbors=50, bandwidth=None, cv_folds=5, seed=0):
        self.k_neighbors = k_neighbors
        self.bandwidth = bandwidth
        self.cv_folds = cv_folds
        self.seed = seed
        self._fitted = None

    def fit(self, X, y):
        y = np.atleast_2d(y)
        h = self.bandwidth
        if h is None:
            h = baselines.kde_select_bandwidth(y, self.cv_folds,
                                               seed=self.seed)
        self.bandwidth_ = h
        self._fitted = baselines.KdeModel(
            y, h, mode=baselines.CONDITIONAL, X=np.atleast_2d(X),
            k_neighbors=min(self.k_neighbors, y.shape[0]))
        return self

    def log_density(self, X, y):
        self._check_fitted()
        X, y = np.atleast_2d(X), np.atleast_2d(y)
        return np.array([baselines.kde_logpdf(self._fitted, x, row)
                         for x, row in zip(X, y)])

    def score(self, X, y):
        return float(np.mean(self.log_density(X, y)))

    def nlpp(self, X, y):
        return -self.score(X, y)
