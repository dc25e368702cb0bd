"""Model and training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from . import kernels
from . import quadrature

AMORTIZED = "amortized-gaussian"
PERPOINT = "perpoint-gaussian"
QUADRATURE = "optimal-quadrature"

LATENT_MODES = (AMORTIZED, PERPOINT, QUADRATURE)
VARIATIONAL_OPTIMIZERS = ("natgrad", "adam", "analytic")


@dataclass
class ModelConfig:
    d_w: int = 0                       # 0 disables latent variables
    latent_mode: str = AMORTIZED
    use_inputs: bool = True            # False -> GP-LVM
    kernel_family: str = kernels.RBF
    jitter: float = 1e-6
    num_inducing: int = 32
    input_projection_dim: int | None = None
    num_gp_outputs: int | None = None  # L of the output mixing; None -> no P
    sigma2: float = 0.1
    sigma2_trainable: bool = True
    mc_samples: int = 1
    quad_points: int = 100
    # evaluate the inner expectation over q(w) by quadrature instead of
    # sampling during training (Gaussian latent modes, small d_w only)
    deterministic_inner: bool = False
    encoder_widths: tuple = (50, 100, 50)
    learning_rate: float = 0.01
    lr_decay_rate: float = 0.98
    lr_decay_steps: int = 1000
    natgrad_step: float = 0.1
    variational_optimizer: str = "natgrad"
    batch_size: int = 128
    iterations: int = 2000
    seed: int = 0

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)

    def validate(self, d_x: int, d_y: int):
        if self.d_w < 0:
            raise ValueError("d_w must be non-negative")
        if self.d_w > 0 and self.latent_mode not in LATENT_MODES:
            raise ValueError(f"unknown latent_mode {self.latent_mode!r}")
        if self.latent_mode == QUADRATURE and self.d_w > quadrature.MAX_DIM:
            raise ValueError(
                f"optimal-quadrature mode requires d_w <= {quadrature.MAX_DIM}")
        if self.latent_mode == QUADRATURE and self.d_w > 0:
            if self.quad_points ** self.d_w > quadrature.MAX_TENSOR_POINTS:
                raise ValueError("quadrature grid too large for this d_w")
        if self.deterministic_inner and self.d_w > quadrature.MAX_DIM:
            raise ValueError(
                f"deterministic_inner requires d_w <= {quadrature.MAX_DIM}")
        if not self.use_inputs and self.d_w == 0:
            raise ValueError("a model without inputs needs latent variables")
        if not self.use_inputs and self.input_projection_dim is not None:
            raise ValueError("input projection requires conditions")
        if self.input_projection_dim is not None and \
                self.input_projection_dim >= d_x:
            raise ValueError("input projection must reduce dimension")
        if self.num_gp_outputs is not None and self.num_gp_outputs > d_y:
            raise ValueError("num_gp_outputs must be <= D_y")
        if self.variational_optimizer not in VARIATIONAL_OPTIMIZERS:
            raise ValueError(
                f"unknown variational_optimizer {self.variational_optimizer!r}")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @staticmethod
    def from_dict(d):
        return ModelConfig(**d)
