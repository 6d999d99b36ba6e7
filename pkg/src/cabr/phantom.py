"""Synthetic vessel phantoms: an image and its exact vessel mask.

Each vessel is a random walk of control points smoothed by a cubic spline
and rendered with a Gaussian cross-section. The mask is taken from the
noiseless field, so it does not depend on the speckle draw.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .imaging import OctaImage, RowLabels, VesselMask, write_labels, write_pgm

# profile level that defines the vessel boundary
MASK_LEVEL = 0.25
# half-width of the mask band in units of the profile sigma
_HALF_WIDTH_SIGMAS = math.sqrt(2.0 * math.log(1.0 / MASK_LEVEL))


@dataclass
class PhantomParams:
    height: int = 496
    width: int = 496
    vessel_count: tuple[int, int] = (12, 28)
    thickness: tuple[float, float] = (1.0, 8.0)
    peak: tuple[float, float] = (110.0, 250.0)
    background: float = 25.0
    noise_sigma: float = 10.0
    step: float = 24.0
    turn_sigma: float = 0.35
    seed: int = 0

    def __post_init__(self):
        self.vessel_count = tuple(int(v) for v in self.vessel_count)
        self.thickness = tuple(float(v) for v in self.thickness)
        self.peak = tuple(float(v) for v in self.peak)
        if self.height < 4 or self.width < 4:
            raise ValueError(f"phantom size {self.height}x{self.width} too small")
        lo, hi = self.vessel_count
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid vessel_count range {self.vessel_count}")
        lo, hi = self.thickness
        if not 0 < lo <= hi < self.height / 4:
            raise ValueError(f"thickness range {self.thickness} must satisfy 0 < lo <= hi < height/4")
        lo, hi = self.peak
        if not 0 <= lo <= hi <= 255:
            raise ValueError(f"peak range {self.peak} must lie in [0, 255]")
        if not 0 <= self.background <= 255:
            raise ValueError(f"background {self.background} must lie in [0, 255]")
        if self.noise_sigma < 0 or self.step <= 0 or self.turn_sigma < 0:
            raise ValueError("noise_sigma, step and turn_sigma must be non-negative (step positive)")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("vessel_count", "thickness", "peak"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomParams":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown phantom keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Vessel:
    """Dense centreline samples plus rendering parameters."""

    points: np.ndarray  # (K, 2) as (row, col)
    thickness: float
    peak: float

    @property
    def sigma(self) -> float:
        # the mask band |d| < thickness / 2 sits exactly at MASK_LEVEL
        return 0.5 * self.thickness / _HALF_WIDTH_SIGMAS


def random_vessel(params: PhantomParams, rng: np.random.Generator) -> Vessel:
    h, w = params.height, params.width
    start = rng.uniform((0, 0), (h, w))
    heading = rng.uniform(0, 2 * np.pi)
    n_ctrl = max(4, int(math.ceil(1.5 * math.hypot(h, w) / params.step)))
    turns = rng.normal(0.0, params.turn_sigma, size=n_ctrl - 1)
    angles = heading + np.concatenate([[0.0], np.cumsum(turns)])
    ctrl = start + params.step * np.cumsum(np.stack([np.sin(angles), np.cos(angles)], axis=1), axis=0)
    ctrl = np.vstack([start, ctrl])
    t = np.arange(len(ctrl), dtype=np.float64)
    spline = CubicSpline(t, ctrl, axis=0)
    samples = int(math.ceil(t[-1] * params.step / 0.25))
    points = spline(np.linspace(0.0, t[-1], samples + 1))
    lo, hi = params.thickness
    thickness = float(rng.uniform(lo, hi))
    peak = float(rng.uniform(*params.peak))
    return Vessel(points, thickness, peak)


def _distance_map(points: np.ndarray, shape: tuple[int, int], cutoff: float) -> np.ndarray:
    """Distance from every pixel centre to the nearest centreline sample (inf beyond ``cutoff``)."""
    h, w = shape
    dist = np.full(shape, np.inf)
    lo = np.floor(points.min(axis=0) - cutoff).astype(int)
    hi = np.ceil(points.max(axis=0) + cutoff).astype(int) + 1
    r0, c0 = max(lo[0], 0), max(lo[1], 0)
    r1, c1 = min(hi[0], h), min(hi[1], w)
    if r0 >= r1 or c0 >= c1:
        return dist
    rr, cc = np.mgrid[r0:r1, c0:c1]
    query = np.stack([rr.ravel(), cc.ravel()], axis=1).astype(np.float64)
    d, _ = cKDTree(points).query(query, distance_upper_bound=cutoff)
    dist[r0:r1, c0:c1] = d.reshape(rr.shape)
    return dist


def render(vessels: list[Vessel], shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless field (max over vessels) and boolean mask."""
    field_ = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    for v in vessels:
        s = v.sigma
        d = _distance_map(v.points, shape, cutoff=4.0 * s + 1.0)
        prof = np.exp(-0.5 * (d / s) ** 2)
        np.maximum(field_, v.peak * prof, out=field_)
        mask |= prof > MASK_LEVEL
    return field_, mask


def generate_phantom(params: PhantomParams, rng: np.random.Generator | None = None) -> tuple[OctaImage, VesselMask]:
    """Random vessel image and its ground-truth mask.

    ``rng`` defaults to ``default_rng(params.seed)``.
    """
    rng = np.random.default_rng(params.seed) if rng is None else rng
    n = int(rng.integers(params.vessel_count[0], params.vessel_count[1] + 1))
    vessels = [random_vessel(params, rng) for _ in range(n)]
    shape = (params.height, params.width)
    field_, mask = render(vessels, shape)
    img = params.background + field_
    if params.noise_sigma > 0:
        img = img + rng.normal(0.0, params.noise_sigma, size=shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return OctaImage(img), VesselMask(mask.astype(np.uint8))


def item_seeds(n: int, seed: int) -> list[int]:
    """Independent per-item seeds derived from one corpus seed."""
    if n == 0:
        return []
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _write_item(out_dir: Path, index: int, item_seed: int, params: PhantomParams) -> dict:
    p = PhantomParams.from_dict({**params.to_dict(), "seed": item_seed})
    image, mask = generate_phantom(p)
    stem = f"{index:04d}"
    entry = {
        "image_path": f"image_{stem}.pgm",
        "mask_path": f"mask_{stem}.pgm",
        "label_path": f"labels_{stem}.txt",
        "seed": item_seed,
    }
    write_pgm(image, out_dir / entry["image_path"])
    write_pgm(mask, out_dir / entry["mask_path"])
    write_labels(RowLabels(np.zeros(p.height, dtype=np.uint8)), out_dir / entry["label_path"])
    return entry


def generate_corpus(n: int, params: PhantomParams, out_dir, threads: int = 1) -> list[dict]:
    """Write ``n`` phantoms with all-clear labels and a ``manifest.json``.

    Paths in the manifest are relative to ``out_dir``; the generating
    parameters go to ``params.json``. Output does not depend on ``threads``.
    """
    if n < 0:
        raise ValueError(f"corpus size must be >= 0, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = item_seeds(n, params.seed)
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            manifest = list(pool.map(lambda a: _write_item(out_dir, *a, params), enumerate(seeds)))
    else:
        manifest = [_write_item(out_dir, i, s, params) for i, s in enumerate(seeds)]
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    with open(out_dir / "params.json", "w") as fh:
        json.dump(params.to_dict(), fh, indent=1)
    return manifest


def load_manifest(path) -> tuple[Path, list[dict]]:
    """Return the corpus directory and its item list."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as fh:
        items = json.load(fh)
    if not isinstance(items, list):
        raise ValueError(f"{path}: manifest must be a JSON list")
    return path.parent, items
