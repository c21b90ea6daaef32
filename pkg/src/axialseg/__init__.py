"""Axial-MLP volumetric segmentation toolkit."""

__version__ = "0.1.0"

from . import baselines, data, errors, harness, metrics, optim, tensor  # noqa: F401
from .model import (  # noqa: F401
    AxialMLPModel,
    Checkpoint,
    ModelConfig,
    forward,
    init_model,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    soft_dice_loss,
)
from .tensor import Tensor, no_grad  # noqa: F401
