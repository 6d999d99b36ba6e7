"""Layers used by the CABR backbone."""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from . import functional as F
from .tensor import Tensor


class GateVariant(str, Enum):
    TWO_BRANCH = "two_branch"
    SHARED_SPLIT = "shared_split"


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain_sq: float = 1.0) -> np.ndarray:
    """U(-b, b) with ``b = sqrt(gain_sq / fan_in)``."""
    bound = math.sqrt(gain_sq / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def leaky_gain_sq(slope: float) -> float:
    """Squared bound gain that keeps E[x^2] through LeakyReLU (He init)."""
    return 6.0 / (1.0 + slope * slope)


# a gate near sigmoid(0) scales the second moment by 1/4; the feature
# branch is initialised four times wider in variance to compensate
GATE_COMPENSATION = 4.0


class Module:
    """Base class: subclasses register parameters as ``Tensor`` attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1, dilation: int = 1, rng=None, gain_sq: float = 1.0):
        rng = np.random.default_rng() if rng is None else rng
        self.c_in, self.c_out = c_in, c_out
        self.stride, self.dilation = stride, dilation
        self.weight = Tensor(_uniform(rng, (c_out, c_in, 3, 3), 9 * c_in, gain_sq), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.dilation)


class GatedConv2d(Module):
    """``act(feature(x)) * sigmoid(gate(x))`` producing ``c_out`` channels.

    ``TWO_BRANCH`` keeps separate feature and gate kernels. ``SHARED_SPLIT``
    is one kernel with ``2 * c_out`` filters whose halves are feature and
    gate; the parameter count is the same, only the storage differs.
    """

    def __init__(
        self,
        c_in: int,
        c_out: int,
        stride: int = 1,
        dilation: int = 1,
        variant: GateVariant = GateVariant.TWO_BRANCH,
        slope: float = 0.2,
        rng=None,
    ):
        rng = np.random.default_rng() if rng is None else rng
        self.c_in, self.c_out = c_in, c_out
        self.stride, self.dilation = stride, dilation
        self.variant = GateVariant(variant)
        self.slope = slope
        fan_in = 9 * c_in
        feat = _uniform(rng, (c_out, c_in, 3, 3), fan_in, GATE_COMPENSATION * leaky_gain_sq(slope))
        gate = _uniform(rng, (c_out, c_in, 3, 3), fan_in)
        if self.variant is GateVariant.TWO_BRANCH:
            self.weight = Tensor(feat, requires_grad=True)
            self.bias = Tensor(np.zeros(c_out), requires_grad=True)
            self.gate_weight = Tensor(gate, requires_grad=True)
            self.gate_bias = Tensor(np.zeros(c_out), requires_grad=True)
        else:
            self.weight = Tensor(np.concatenate([feat, gate]), requires_grad=True)
            self.bias = Tensor(np.zeros(2 * c_out), requires_grad=True)
            self.gate_weight = None
            self.gate_bias = None

    def forward(self, x: Tensor) -> Tensor:
        return F.gated_conv2d(
            x, self.weight, self.bias, self.gate_weight, self.gate_bias,
            stride=self.stride, dilation=self.dilation, slope=self.slope,
        )


class DeConv(Module):
    """Nearest 2x upsampling followed by a gated convolution."""

    def __init__(self, c_in: int, c_out: int, variant=GateVariant.TWO_BRANCH, slope: float = 0.2, rng=None):
        self.conv = GatedConv2d(c_in, c_out, variant=variant, slope=slope, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(F.upsample_nearest2x(x))


class Sigmoid(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.sigmoid(x)


def param_count(model) -> int:
    """Number of trainable scalars (weights plus biases)."""
    if model is None:
        return 0
    if isinstance(model, Module):
        return sum(p.size for p in model.parameters())
    return sum(param_count(m) for m in model)
