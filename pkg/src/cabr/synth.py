"""Synthetic bulk-motion stripes for clear image regions.

:func:`adbma_stripe` remaps each stripe pixel by intensity band: the
darkest band is scattered uniformly over a raised base interval, the
middle and bright bands are compressed affinely into higher target
intervals with additive Gaussian noise. Low intensities get lifted while
the image maximum stays put, which also flattens local contrast.
:func:`gauss_stripe` is the plain additive-noise baseline.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .imaging import OctaImage, RowLabels, percentile

# shrink for the bright band so max(I) itself is never produced
TOP_SHRINK = 1.0 / 256.0


@dataclass
class SynthParams:
    p_low: float = 10.0
    p_high: float = 85.0
    p_base: float = 30.0
    p_low_t: float = 50.0
    p_high_t: float = 90.0
    sigma: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.p_low < self.p_high <= 100:
            raise ValueError(f"need 0 <= p_low < p_high <= 100, got {self.p_low}, {self.p_high}")
        if not 0 <= self.p_base < self.p_low_t < self.p_high_t <= 100:
            raise ValueError(
                f"need 0 <= p_base < p_low_t < p_high_t <= 100, got {self.p_base}, {self.p_low_t}, {self.p_high_t}"
            )
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Breakpoints:
    t_low: int
    t_high: int
    b: int
    l_t: int
    h_t: int
    i_max: int


def compute_breakpoints(image: OctaImage | np.ndarray, params: SynthParams) -> Breakpoints:
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    return Breakpoints(
        t_low=percentile(data, params.p_low),
        t_high=percentile(data, params.p_high),
        b=percentile(data, params.p_base),
        l_t=percentile(data, params.p_low_t),
        h_t=percentile(data, params.p_high_t),
        i_max=int(data.max()),
    )


def _check_rows(data: np.ndarray, rows: RowLabels) -> np.ndarray:
    if len(rows) != data.shape[0]:
        raise ValueError(f"row labels length {len(rows)} != image height {data.shape[0]}")
    return rows.labels.astype(bool)


def adbma_values(p: np.ndarray, bp: Breakpoints, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Remap intensities ``p``; returns float values before clipping.

    Outputs are integers (floor of map plus noise) so that with
    ``sigma == 0`` each band lands inside its half-open target interval.
    """
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    if bp.t_low == bp.t_high:
        low = p <= bp.t_high
        mid = np.zeros_like(low)
    else:
        low = p < bp.t_low
        mid = (p >= bp.t_low) & (p < bp.t_high)
    high = ~(low | mid)

    n_low = int(low.sum())
    if bp.l_t > bp.b:
        out[low] = rng.integers(bp.b, bp.l_t, size=n_low)
    else:
        out[low] = bp.b

    if mid.any():
        scale = (bp.h_t - bp.l_t) / (bp.t_high - bp.t_low)
        out[mid] = bp.l_t + (p[mid] - bp.t_low) * scale
    if high.any():
        if bp.i_max == bp.t_high:
            out[high] = bp.h_t
        else:
            scale = (bp.i_max - bp.h_t) * (1.0 - TOP_SHRINK) / (bp.i_max - bp.t_high)
            out[high] = bp.h_t + (p[high] - bp.t_high) * scale
    noisy = mid | high
    if sigma > 0 and noisy.any():
        out[noisy] += rng.normal(0.0, sigma, size=int(noisy.sum()))
    return np.floor(out)


def adbma_stripe(
    image: OctaImage, rows: RowLabels, bp: Breakpoints, sigma: float, rng: np.random.Generator
) -> OctaImage:
    data = image.data
    sel = _check_rows(data, rows)
    out = data.copy()
    if sel.any():
        vals = adbma_values(data[sel].astype(np.float64), bp, sigma, rng)
        out[sel] = np.clip(vals, 0, 255).astype(np.uint8)
    return OctaImage(out)


def default_gauss_offset(image: OctaImage | np.ndarray) -> int:
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    return percentile(data, 90) - percentile(data, 50)


def gauss_stripe(
    image: OctaImage, rows: RowLabels, sigma: float, offset: float | None, rng: np.random.Generator
) -> OctaImage:
    """Brighten stripe rows by ``offset`` and add N(0, sigma) noise."""
    data = image.data
    sel = _check_rows(data, rows)
    if offset is None:
        offset = default_gauss_offset(data)
    out = data.copy()
    if sel.any():
        vals = data[sel].astype(np.float64) + offset
        if sigma > 0:
            vals += rng.normal(0.0, sigma, size=vals.shape)
        out[sel] = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return OctaImage(out)


def sample_center_stripe(
    patch_height: int, width_min: int, width_max: int, rng: np.random.Generator, width: int | None = None
) -> RowLabels:
    """Centered stripe of uniform random width in ``[width_min, width_max]``."""
    if width_min < 0 or width_min > width_max or width_max >= patch_height:
        raise ValueError(f"invalid stripe widths [{width_min}, {width_max}] for patch height {patch_height}")
    if width is None:
        width = int(rng.integers(width_min, width_max + 1))
    elif not width_min <= width <= width_max:
        raise ValueError(f"forced width {width} outside [{width_min}, {width_max}]")
    start = (patch_height - width) // 2
    return RowLabels.from_rows(patch_height, start, start + width)


def sample_random_rows(
    patch_height: int,
    fraction_min: float,
    fraction_max: float,
    rng: np.random.Generator,
    fraction: float | None = None,
) -> RowLabels:
    """Contiguous block covering a random percentage of the rows."""
    if not 0 <= fraction_min <= fraction_max <= 100:
        raise ValueError(f"invalid fraction range [{fraction_min}, {fraction_max}]")
    if fraction is None:
        fraction = float(rng.uniform(fraction_min, fraction_max))
    count = int(round(fraction * patch_height / 100.0))
    count = min(max(count, 0), patch_height)
    start = int(rng.integers(0, patch_height - count + 1))
    return RowLabels.from_rows(patch_height, start, start + count)
