"""The content-aware BMA-removal network, its input assembly and inference.

The backbone is a plain encoder-decoder of gated convolutions:

====  =================  ============
 #    block              channels
====  =================  ============
 1    gated              4 -> C
 2    gated              C -> C
 3    gated, stride 2    C -> 2C
 4    gated              2C -> 2C
 5    gated, stride 2    2C -> 4C
 6    gated              4C -> 4C
 7    gated, dilation 2  4C -> 4C
 8    gated              4C -> 4C
 9    gated              4C -> 4C
 10   deconv             4C -> 2C
 11   gated              2C -> 2C
 12   deconv             2C -> C
 13   gated              C -> C
 14   conv + sigmoid     C -> 1
====  =================  ============

Input channels are (mask, image, gradient statistics, stripe indicator).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .imaging import (
    GradientMap,
    GradientMode,
    OctaImage,
    RowLabels,
    VesselMask,
    gradient_statistics,
    reflect_rows,
    stripe_map,
)
from .nn import functional as F
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import Conv2d, GatedConv2d, GateVariant, Module, leaky_gain_sq
from .nn.tensor import Tensor

IN_CHANNELS = 4


class Backbone(str, Enum):
    """Block type used for every gated slot of the schedule.

    ``LIGHT`` is a shared-split gate whose kernel has the nominal width and
    whose emitted width is half of it, the parameterization that puts the
    network near the reported model sizes.
    ``PLAIN`` swaps gated blocks for ordinary conv + LeakyReLU.
    """

    TWO_BRANCH = "two_branch"
    SHARED_SPLIT = "shared_split"
    LIGHT = "light"
    PLAIN = "conv"


class ShapeError(ValueError):
    pass


# (kind, in multiple, out multiple, stride, dilation); "in" of block 1 is the raw 4 channels
SCHEDULE = [
    ("gated", 0, 1, 1, 1),
    ("gated", 1, 1, 1, 1),
    ("gated", 1, 2, 2, 1),
    ("gated", 2, 2, 1, 1),
    ("gated", 2, 4, 2, 1),
    ("gated", 4, 4, 1, 1),
    ("dilated", 4, 4, 1, 2),
    ("gated", 4, 4, 1, 1),
    ("gated", 4, 4, 1, 1),
    ("deconv", 4, 2, 1, 1),
    ("gated", 2, 2, 1, 1),
    ("deconv", 2, 1, 1, 1),
    ("gated", 1, 1, 1, 1),
    ("conv", 1, 0, 1, 1),
]


class _PlainBlock(Module):
    def __init__(self, c_in, c_out, stride, dilation, slope, rng):
        self.conv = Conv2d(c_in, c_out, stride=stride, dilation=dilation, rng=rng, gain_sq=leaky_gain_sq(slope))
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(self.conv(x), self.slope)


class _Block(Module):
    def __init__(self, kind: str, inner: Module):
        self.kind = kind
        self.inner = inner

    def forward(self, x):
        if self.kind == "deconv":
            x = F.upsample_nearest2x(x)
        return self.inner(x)


class CabrNet(Module):
    def __init__(self, base_channels: int = 16, variant=Backbone.TWO_BRANCH, slope: float = 0.2, seed: int = 0):
        if base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        self.base_channels = base_channels
        self.variant = Backbone(variant)
        self.slope = slope
        self.seed = seed
        if self.variant is Backbone.LIGHT and base_channels % 2:
            raise ValueError("the light backbone needs an even base channel count")
        rng = np.random.default_rng(seed)
        light = self.variant is Backbone.LIGHT
        emitted = IN_CHANNELS
        blocks = []
        for kind, _, out_mul, stride, dilation in SCHEDULE:
            if kind == "conv":
                inner = Conv2d(emitted, 1, rng=rng)
                blocks.append(_Block(kind, inner))
                break
            width = out_mul * base_channels
            if self.variant is Backbone.PLAIN:
                inner = _PlainBlock(emitted, width, stride, dilation, slope, rng)
                out = width
            else:
                out = width // 2 if light else width
                gv = GateVariant.TWO_BRANCH if self.variant is Backbone.TWO_BRANCH else GateVariant.SHARED_SPLIT
                inner = GatedConv2d(emitted, out, stride=stride, dilation=dilation, variant=gv, slope=slope, rng=rng)
            blocks.append(_Block(kind, inner))
            emitted = out
        self.blocks = blocks

    @property
    def kinds(self) -> list[str]:
        return [b.kind for b in self.blocks]

    def conv_widths(self) -> list[int]:
        """Filter count of each block's convolution (both halves for shared kernels)."""
        widths = []
        for b in self.blocks:
            inner = b.inner.conv if isinstance(b.inner, _PlainBlock) else b.inner
            widths.append(inner.weight.shape[0])
        return widths

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for block in self.blocks:
            h = block(h)
        return F.sigmoid(h)

    def config(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "variant": self.variant.value,
            "slope": self.slope,
            "seed": self.seed,
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(arrays):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ValueError(f"checkpoint does not match network: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            if p.shape != arrays[name].shape:
                raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != {p.shape}")
            p.data[...] = arrays[name]


def build_cabr(base_channels: int = 16, variant=Backbone.TWO_BRANCH, slope: float = 0.2, seed: int = 0) -> CabrNet:
    return CabrNet(base_channels, variant, slope, seed)


def save_model(net: CabrNet, path, extra: dict | None = None) -> None:
    meta = {"network": net.config()}
    if extra:
        meta.update(extra)
    save_checkpoint(path, net.state_dict(), meta)


def load_model(path) -> tuple[CabrNet, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = meta.get("network")
    if cfg is None:
        raise ValueError(f"{path}: checkpoint has no network section")
    net = build_cabr(**cfg)
    net.load_state_dict(arrays)
    return net, meta


# ----------------------------------------------------------- input side

def assemble_input(
    mask: VesselMask | np.ndarray,
    image: OctaImage | np.ndarray,
    gradient: GradientMap | np.ndarray | None,
    labels: RowLabels,
    mode: str = "train",
    mask_fill: int = 1,
    appearance: bool = True,
) -> np.ndarray:
    """Stack the (4, H, W) float32 network input.

    ``mode`` is ``"train"`` or ``"infer"``; both produce the same layout so
    that a stripe looks identical to the network in either phase. Mask rows
    under the stripe are overwritten with ``mask_fill`` and never read.
    ``gradient=None`` leaves the gradient channel at zero; ``appearance=False``
    zeroes the image inside the stripe (context-only inpainting ablation).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    m = mask.data if isinstance(mask, VesselMask) else np.asarray(mask)
    img = image.data if isinstance(image, OctaImage) else np.asarray(image)
    if m.shape != img.shape:
        raise ValueError(f"mask {m.shape} and image {img.shape} differ in shape")
    if len(labels) != img.shape[0]:
        raise ValueError(f"labels length {len(labels)} != image height {img.shape[0]}")
    rows = labels.labels.astype(bool)
    out = np.zeros((IN_CHANNELS,) + img.shape, dtype=np.float32)
    out[0] = m
    out[0, rows] = mask_fill
    out[1] = img.astype(np.float32) / 255.0
    if not appearance:
        out[1, rows] = 0.0
    if gradient is not None:
        g = gradient.data if isinstance(gradient, GradientMap) else np.asarray(gradient)
        if g.shape != img.shape:
            raise ValueError(f"gradient map {g.shape} and image {img.shape} differ in shape")
        out[2] = g
    out[3] = stripe_map(labels, img.shape[1])
    return out


def forward(net: CabrNet, x) -> np.ndarray:
    """Probability map (N, 1, H, W) for a batch of assembled inputs."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != IN_CHANNELS:
        raise ShapeError(f"expected (N, {IN_CHANNELS}, H, W) input, got {arr.shape}")
    if arr.shape[2] % 4 or arr.shape[3] % 4:
        raise ShapeError(f"spatial size {arr.shape[2:]} must be divisible by 4")
    return net(Tensor(arr)).data


def compose_prediction(
    mask: VesselMask, prob: np.ndarray, labels: RowLabels, threshold: float = 0.5
) -> VesselMask:
    """Replace stripe rows of ``mask`` by ``prob > threshold``; other rows untouched."""
    p = np.asarray(prob)
    while p.ndim > 2:
        p = p[0]
    if p.shape != mask.shape:
        raise ValueError(f"probability map {p.shape} and mask {mask.shape} differ in shape")
    if len(labels) != mask.height:
        raise ValueError(f"labels length {len(labels)} != mask height {mask.height}")
    out = mask.data.copy()
    rows = labels.labels.astype(bool)
    out[rows] = (p[rows] > threshold).astype(np.uint8)
    return VesselMask(out)


def _windows_for_runs(runs, window_height: int, max_rows: int):
    """Split stripe runs into chunks of at most ``max_rows`` and centre a window on each."""
    out = []
    for a, b in runs:
        n_parts = -(-(b - a) // max_rows)
        edges = np.linspace(a, b, n_parts + 1).round().astype(int)
        for lo, hi in zip(edges[:-1], edges[1:]):
            start = (lo + hi - window_height) // 2
            out.append((int(lo), int(hi), int(start)))
    return out


def infer_image(
    net: CabrNet,
    mask: VesselMask,
    image: OctaImage,
    labels: RowLabels,
    window_height: int = 64,
    gs_mode: GradientMode | None = GradientMode.ABS_BMA,
    threshold: float = 0.5,
    appearance: bool = True,
    max_stripe_rows: int | None = None,
    batch_size: int = 8,
) -> VesselMask:
    """Correct every stripe of a full image with window-sized network passes.

    Each run of stripe rows (split into chunks of at most ``max_stripe_rows``,
    default half the window) gets a ``window_height`` band centred on it.
    Bands reaching past the image edge are mirrored back in. Only the chunk's
    own rows are written back.
    """
    if window_height % 4 or window_height < 4:
        raise ValueError(f"window_height must be a positive multiple of 4, got {window_height}")
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ in shape")
    if len(labels) != image.height:
        raise ValueError(f"labels length {len(labels)} != image height {image.height}")
    runs = labels.runs()
    if not runs:
        return VesselMask(mask.data.copy())
    if labels.labels.all() and image.height > 0:
        raise ValueError("every row is labelled as stripe; no context to infer from")
    max_rows = max_stripe_rows or window_height // 2
    h, w = image.shape
    pad_w = (-w) % 4
    col_idx = np.arange(w + pad_w)
    if pad_w:
        col_idx[w:] = np.abs(w - 2 - np.arange(pad_w))  # mirror right edge
    jobs = _windows_for_runs(runs, window_height, max_rows)
    out = mask.data.copy()
    for i in range(0, len(jobs), batch_size):
        batch = jobs[i : i + batch_size]
        inputs = []
        for _, _, start in batch:
            win_img = reflect_rows(image.data, start, start + window_height)[:, col_idx]
            win_mask = reflect_rows(mask.data, start, start + window_height)[:, col_idx]
            win_lab = RowLabels(reflect_rows(labels.labels, start, start + window_height))
            grad = None if gs_mode is None else gradient_statistics(win_img, win_lab, gs_mode)
            inputs.append(assemble_input(win_mask, win_img, grad, win_lab, mode="infer", appearance=appearance))
        prob = forward(net, np.stack(inputs))
        for (lo, hi, start), p in zip(batch, prob):
            rows = p[0, lo - start : hi - start, :w]
            out[lo:hi] = (rows > threshold).astype(np.uint8)
    return VesselMask(out)
