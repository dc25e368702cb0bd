"""Conditional density estimation with latent-augmented sparse Gaussian
processes."""

from .baselines import KdeModel, kde_logpdf, kde_nlpp, kde_select_bandwidth
from .bounds import GaussianLatentPosterior, expected_loglik, kl_latent
from .config import ModelConfig
from .data import ConditionedDataset, split_farthest_point
from .density import density_grid, nlpp, predictive_logdensity, \
    sample_conditional
from .estimator import GPCDE, ConditionalKDE, UnconditionalKDE
from .kernels import KernelSpec
from .linear_maps import InputProjection, OutputMixing, init_mixing_matern
from .model import GpCdeModel
from .persistence import PersistenceError, load_model, save_model
from .quadrature import QuadratureRule, gauss_hermite_rule
from .sparse_gp import InducingVariational, conditional, kl_inducing
from .trainer import TrainedModel, train

__version__ = "0.1.0"

__all__ = [
    "ConditionalKDE",
    "ConditionedDataset",
    "GPCDE",
    "GaussianLatentPosterior",
    "GpCdeModel",
    "InducingVariational",
    "InputProjection",
    "KdeModel",
    "KernelSpec",
    "ModelConfig",
    "OutputMixing",
    "PersistenceError",
    "QuadratureRule",
    "TrainedModel",
    "UnconditionalKDE",
    "conditional",
    "density_grid",
    "expected_loglik",
    "gauss_hermite_rule",
    "init_mixing_matern",
    "kde_logpdf",
    "kde_nlpp",
    "kde_select_bandwidth",
    "kl_inducing",
    "kl_latent",
    "load_model",
    "nlpp",
    "predictive_logdensity",
    "sample_conditional",
    "save_model",
    "split_farthest_point",
    "train",
]
