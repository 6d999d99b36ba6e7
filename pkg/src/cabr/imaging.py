"""Image, mask and row-label containers plus the pixel-level operations on them.

Images are 8-bit grayscale, masks are binary, and row labels mark which
rows carry a bulk-motion stripe. All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)

MASK_THRESHOLD = 128


class FormatError(ValueError):
    """A file could not be parsed; the message names the offending field."""


class GradientMode(str, Enum):
    NAIVE = "naive"
    ABS = "abs"
    ABS_BMA = "abs_bma"


@dataclass(frozen=True, eq=False)
class OctaImage:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("image intensities must lie in [0, 255]")
        object.__setattr__(self, "data", np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, OctaImage) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class VesselMask:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", np.ascontiguousarray(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, VesselMask) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class RowLabels:
    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 1:
            raise ValueError(f"row labels must be 1-D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError("row labels must be 0 or 1")
        object.__setattr__(self, "labels", np.ascontiguousarray(arr, dtype=np.uint8))

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RowLabels) and np.array_equal(self.labels, other.labels)

    @classmethod
    def from_rows(cls, height: int, start: int, stop: int) -> "RowLabels":
        lab = np.zeros(height, dtype=np.uint8)
        lab[start:stop] = 1
        return cls(lab)

    def runs(self) -> list[tuple[int, int]]:
        """Maximal runs of labelled rows as half-open ``(start, stop)`` pairs."""
        padded = np.concatenate([[0], self.labels.astype(np.int8), [0]])
        edges = np.flatnonzero(np.diff(padded))
        return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


@dataclass(frozen=True, eq=False)
class GradientMap:
    data: np.ndarray
    mode: GradientMode = GradientMode.ABS_BMA

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


# ---------------------------------------------------------------- file I/O

def _pgm_tokens(raw: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height, maxval; return them with the payload offset."""
    pos = 0
    tokens: list[bytes] = []
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            pos = len(raw) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            field = ("magic", "width", "height", "maxval")[len(tokens)]
            raise FormatError(f"{path}: truncated header, missing {field}")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise FormatError(f"{path}: truncated header after maxval")
    pos += 1
    magic = tokens[0]
    if magic != b"P5":
        raise FormatError(f"{path}: magic {magic.decode(errors='replace')!r} unsupported, only binary P5")
    values = []
    for field, tok in zip(("width", "height", "maxval"), tokens[1:]):
        if not tok.isdigit():
            raise FormatError(f"{path}: {field} {tok.decode(errors='replace')!r} is not an integer")
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: width/height must be positive, got {width}x{height}")
    return magic, width, height, maxval, pos


def read_pgm_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    _, width, height, _, offset = _pgm_tokens(raw, path)
    payload = raw[offset : offset + width * height]
    if len(payload) < width * height:
        raise FormatError(f"{path}: payload truncated, {len(payload)} of {width * height} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()


def load_pgm(path, as_mask: bool = False) -> OctaImage | VesselMask:
    """Read a binary P5 PGM. Masks are binarized at 128."""
    arr = read_pgm_array(path)
    if as_mask:
        return VesselMask((arr >= MASK_THRESHOLD).astype(np.uint8))
    return OctaImage(arr)


def load_mask(path) -> VesselMask:
    return load_pgm(path, as_mask=True)


def write_pgm(image: OctaImage | VesselMask | np.ndarray, path) -> None:
    """Write P5. Masks are stored as 0/255 so they survive the 128 threshold."""
    if isinstance(image, VesselMask):
        arr = image.data * np.uint8(255)
    elif isinstance(image, OctaImage):
        arr = image.data
    else:
        arr = np.asarray(image)
        if arr.ndim != 2 or arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("raw arrays must be 2-D with values in [0, 255]")
        arr = arr.astype(np.uint8)
    if arr.size == 0:
        raise ValueError("cannot write a zero-size image")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_labels(path) -> RowLabels:
    """One '0'/'1' character per line."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line not in ("0", "1"):
            raise FormatError(f"{path}: line {lineno}: label {line!r} is not 0 or 1")
        values.append(int(line))
    return RowLabels(np.array(values, dtype=np.uint8))


def write_labels(labels: RowLabels, path) -> None:
    Path(path).write_text("".join(f"{v}\n" for v in labels.labels))


# ------------------------------------------------------------ statistics

def percentile(image: OctaImage | np.ndarray, k: float) -> int:
    """Nearest-rank percentile: sorted value at ``ceil(k/100 * N) - 1``."""
    if not 0 <= k <= 100:
        raise ValueError(f"percentile k must be in [0, 100], got {k}")
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    n = data.size
    if n == 0:
        raise ValueError("percentile of an empty image")
    idx = min(max(math.ceil(k / 100.0 * n) - 1, 0), n - 1)
    return int(np.partition(data.ravel(), idx)[idx])


# ---------------------------------------------------------- gradients

def _reflect_index(n: int, idx: np.ndarray) -> np.ndarray:
    """Mirror indices into [0, n) without repeating the edge sample."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def sobel_response(data: np.ndarray) -> np.ndarray:
    """Signed x-derivative Sobel response in int64, reflection borders."""
    arr = np.asarray(data).astype(np.int64)
    h, w = arr.shape
    if h < 3 or w < 3:
        raise ValueError(f"image {h}x{w} is smaller than the 3x3 kernel")
    padded = np.pad(arr, 1, mode="reflect")
    left = padded[:, :-2]
    right = padded[:, 2:]
    diff = right - left
    # vertical smoothing [1, 2, 1] of the horizontal difference
    return diff[:-2] + 2 * diff[1:-1] + diff[2:]


def sobel_horizontal_gradient(image: OctaImage | np.ndarray) -> GradientMap:
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    return GradientMap(sobel_response(data), GradientMode.NAIVE)


def gradient_statistics(image: OctaImage | np.ndarray, labels: RowLabels, mode=GradientMode.ABS_BMA) -> GradientMap:
    """Horizontal-gradient channel scaled to [0, 1] (signed for NAIVE).

    The divisor is the largest absolute value in the returned map, so
    ABS_BMA is normalized over the stripe rows it keeps.
    """
    mode = GradientMode(mode)
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    if len(labels) != data.shape[0]:
        raise ValueError(f"labels length {len(labels)} != image height {data.shape[0]}")
    resp = sobel_response(data).astype(np.float64)
    if mode is GradientMode.NAIVE:
        out = resp
    else:
        out = np.abs(resp)
        if mode is GradientMode.ABS_BMA:
            out[labels.labels == 0] = 0.0
    peak = np.abs(out).max()
    if peak > 0:
        out = out / peak
    return GradientMap(out.astype(np.float32), mode)


# --------------------------------------------------------- row utilities

def stripe_map(labels: RowLabels, width: int) -> np.ndarray:
    return np.repeat(labels.labels[:, None], width, axis=1).astype(np.uint8)


def detect_bma_rows(image: OctaImage | np.ndarray, z_threshold: float = 3.0) -> RowLabels:
    """Flag rows whose mean is ``z_threshold`` robust SDs above the median row mean.

    With zero spread (MAD = 0) a row above the median has an infinite score
    and is flagged for any finite threshold; rows at the median never are.
    """
    data = image.data if isinstance(image, OctaImage) else np.asarray(image)
    if data.shape[0] < 3:
        raise ValueError("need at least 3 rows to detect stripes")
    means = data.astype(np.float64).mean(axis=1)
    med = np.median(means)
    dev = means - med
    sigma = 1.4826 * np.median(np.abs(dev))
    if sigma == 0:
        z = np.where(dev > 0, np.inf, 0.0)
    else:
        z = dev / sigma
    return RowLabels((z > z_threshold).astype(np.uint8))


def enhance(image: OctaImage, mask: VesselMask) -> OctaImage:
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ in shape")
    return OctaImage(image.data * mask.data)


def reflect_pad_rows(array, top: int, bottom: int):
    """Mirror rows above and below (the edge row is not repeated)."""
    arr = array.data if isinstance(array, (OctaImage, VesselMask)) else np.asarray(array)
    h = arr.shape[0]
    if top < 0 or bottom < 0:
        raise ValueError("padding must be non-negative")
    if top >= h or bottom >= h:
        raise ValueError(f"padding ({top}, {bottom}) must be smaller than height {h}")
    pad = [(top, bottom)] + [(0, 0)] * (arr.ndim - 1)
    out = np.pad(arr, pad, mode="reflect")
    if isinstance(array, OctaImage):
        return OctaImage(out)
    if isinstance(array, VesselMask):
        return VesselMask(out)
    return out


def reflect_rows(array: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Rows ``start:stop`` of ``array`` where out-of-range rows mirror back in."""
    idx = _reflect_index(array.shape[0], np.arange(start, stop))
    return array[idx]
