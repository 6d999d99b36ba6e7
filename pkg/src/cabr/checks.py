"""The finite-difference suite run by ``cabr gradcheck``."""

from __future__ import annotations

import numpy as np

from .model import IN_CHANNELS, Backbone, build_cabr
from .nn import functional as F
from .nn.gradcheck import GradCheckReport, finite_diff_check
from .nn.tensor import Tensor

# the network check uses a wider step and scores entries against the largest
# sampled gradient: forward rounding in float32 leaves ~1e-7 absolute noise on
# every difference quotient, which swamps tiny entries at h = 1e-2
NET_STEP = 3e-2
NET_FLOOR = 1.0
NET_ENTRIES = 50


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def op_checks(seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []
    for stride in (1, 2):
        for dilation in (1, 2):
            x, w, b = _t(rng, 2, 3, 8, 8), _t(rng, 4, 3, 3, 3, scale=0.3), _t(rng, 4)
            reports.append(finite_diff_check(
                lambda: F.conv2d(x, w, b, stride, dilation), [x, w, b],
                name=f"conv2d s{stride} d{dilation}", rng=rng,
            ))
    for variant in ("two_branch", "shared_split"):
        x = _t(rng, 2, 4, 8, 8)
        if variant == "two_branch":
            w, b, gw, gb = _t(rng, 4, 4, 3, 3, scale=0.3), _t(rng, 4), _t(rng, 4, 4, 3, 3, scale=0.3), _t(rng, 4)
            wrt = [x, w, b, gw, gb]
            fn = lambda: F.gated_conv2d(x, w, b, gw, gb)  # noqa: E731
        else:
            w, b = _t(rng, 8, 4, 3, 3, scale=0.3), _t(rng, 8)
            wrt = [x, w, b]
            fn = lambda: F.gated_conv2d(x, w, b)  # noqa: E731
        reports.append(finite_diff_check(fn, wrt, name=f"gated_conv {variant}", rng=rng))
    x = _t(rng, 2, 4, 8, 8)
    reports.append(finite_diff_check(lambda: F.upsample_nearest2x(x), [x], name="upsample_nearest2x", rng=rng))
    x = _t(rng, 2, 4, 8, 8, scale=2.0)
    reports.append(finite_diff_check(lambda: F.sigmoid(x), [x], name="sigmoid", rng=rng))
    x = _t(rng, 2, 4, 8, 8)
    reports.append(finite_diff_check(lambda: F.leaky_relu(x), [x], name="leaky_relu", rng=rng))
    p = Tensor(rng.uniform(0.05, 0.95, (2, 1, 8, 8)), requires_grad=True)
    t = rng.random((2, 1, 8, 8)) > 0.6
    wm = rng.random((2, 1, 8, 8)) > 0.3
    # a smaller step keeps the perturbed probabilities inside (0, 1)
    reports.append(finite_diff_check(lambda: F.dice_loss(p, t, wm), [p], h=1e-3, name="dice_loss", rng=rng))
    return reports


def network_check(seed: int = 0, variant=Backbone.TWO_BRANCH, base_channels: int = 16) -> GradCheckReport:
    """Dice loss through a whole network on a 1x4x16x16 input, 50 sampled parameters."""
    rng = np.random.default_rng(seed)
    net = build_cabr(base_channels, variant, seed=seed)
    x = Tensor(rng.random((1, IN_CHANNELS, 16, 16)))
    target = rng.random((1, 1, 16, 16)) > 0.7
    return finite_diff_check(
        lambda: F.dice_loss(net(x), target), net.parameters(),
        h=NET_STEP, max_entries=NET_ENTRIES, floor=NET_FLOOR,
        name=f"cabr_net {Backbone(variant).value} 1x4x16x16", rng=rng,
    )


def full_suite(seed: int = 0) -> list[GradCheckReport]:
    reports = op_checks(seed)
    for variant in (Backbone.TWO_BRANCH, Backbone.SHARED_SPLIT, Backbone.LIGHT):
        reports.append(network_check(seed, variant))
    return reports
