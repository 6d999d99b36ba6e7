"""Minimal NCHW tensor engine with reverse-mode gradients."""

from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import ShapeError
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import Conv2d, DeConv, GatedConv2d, GateVariant, Module, Sigmoid, param_count
from .optim import Adam, adam_step
from .tensor import Tensor

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "DeConv",
    "GateVariant",
    "GatedConv2d",
    "GradCheckReport",
    "Module",
    "ShapeError",
    "Sigmoid",
    "Tensor",
    "adam_step",
    "finite_diff_check",
    "functional",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
]
