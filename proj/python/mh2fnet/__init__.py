"""Multi-scale hourglass deraining network.

The compiled core exposes the network forward pass, the hybrid L1/SSIM loss
family, PSNR/SSIM metrics, parametric rain synthesis, and the
finite-difference gradient checks.
"""

from ._core import (
    ConfigError,
    IoError,
    ModelConfig,
    Network,
    PreconditionError,
    __version__,
    apply_rain,
    fd_block_names,
    gradient_check,
    hybrid_loss,
    l1_loss,
    make_streak_kernel,
    param_count,
    psnr,
    ssim_index,
    ssim_loss,
    synth_rain_layer,
)

__all__ = [
    "ConfigError",
    "IoError",
    "ModelConfig",
    "Network",
    "PreconditionError",
    "__version__",
    "apply_rain",
    "fd_block_names",
    "gradient_check",
    "hybrid_loss",
    "l1_loss",
    "make_streak_kernel",
    "param_count",
    "psnr",
    "ssim_index",
    "ssim_loss",
    "synth_rain_layer",
]
