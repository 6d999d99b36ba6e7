"""Self-supervised training on clear rows with synthetic stripes.

Patches are cut from rows without real artifacts, a centred stripe is
synthesised into the image patch, and the network learns to reproduce the
untouched mask under it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import CorpusItem
from .evaluator import dice_score
from .imaging import GradientMode, OctaImage, RowLabels, gradient_statistics
from .model import CabrNet, assemble_input, forward, save_model
from .nn import functional as F
from .nn.optim import Adam
from .nn.tensor import Tensor
from .synth import (
    Breakpoints,
    SynthParams,
    adbma_stripe,
    compute_breakpoints,
    default_gauss_offset,
    gauss_stripe,
    sample_center_stripe,
)

log = logging.getLogger(__name__)

SYNTHESIS_MODES = ("adbma", "gauss")
LOSS_SUPPORTS = ("patch", "stripe")
BREAKPOINT_SOURCES = ("image", "patch")
LR_DECAY = 0.5
LOG_HEADER = "epoch,lr,train_loss,val_dice"


class SamplingError(RuntimeError):
    pass


class NonFiniteLossError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1200
    lr: float = 1e-4
    plateau_patience: int = 20
    batch_size: int = 48
    patch_h: int = 64
    patch_w: int = 496
    width_min: int = 1
    width_max: int = 11
    synth: SynthParams = field(default_factory=SynthParams)
    synthesis: str = "adbma"
    breakpoint_source: str = "image"
    gs_mode: str = GradientMode.ABS_BMA.value
    appearance: bool = True
    mask_fill: int = 1
    loss_support: str = "patch"
    flips: bool = True
    steps_per_epoch: int = 50
    val_patches: int = 64
    max_tries: int = 1000
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = SynthParams.from_dict(self.synth)
        if self.patch_h % 4 or self.patch_w % 4 or self.patch_h < 4 or self.patch_w < 4:
            raise ValueError(f"patch {self.patch_h}x{self.patch_w} must be positive multiples of 4")
        if not 0 <= self.width_min <= self.width_max < self.patch_h:
            raise ValueError(f"stripe widths [{self.width_min}, {self.width_max}] must fit in patch_h={self.patch_h}")
        if self.synthesis not in SYNTHESIS_MODES:
            raise ValueError(f"synthesis must be one of {SYNTHESIS_MODES}, got {self.synthesis!r}")
        if self.breakpoint_source not in BREAKPOINT_SOURCES:
            raise ValueError(f"breakpoint_source must be one of {BREAKPOINT_SOURCES}, got {self.breakpoint_source!r}")
        if self.gs_mode != "none":
            GradientMode(self.gs_mode)
        if self.loss_support not in LOSS_SUPPORTS:
            raise ValueError(f"loss_support must be one of {LOSS_SUPPORTS}, got {self.loss_support!r}")
        for name in ("epochs", "plateau_patience", "steps_per_epoch", "val_patches"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 1 or self.max_tries < 1:
            raise ValueError("batch_size and max_tries must be >= 1")
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")

    @property
    def gradient_mode(self) -> GradientMode | None:
        return None if self.gs_mode == "none" else GradientMode(self.gs_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = self.synth.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainSample:
    input: np.ndarray  # (4, h, w) float32
    target: np.ndarray  # (h, w) uint8
    loss_weight: np.ndarray  # (h, w) float32
    stripe: RowLabels
    origin: tuple[str, int, int]  # (item name, top row, left column)


def find_clear_window(labels: RowLabels, shape, cfg: TrainConfig, rng: np.random.Generator, name: str = "image"):
    """Top-left corner of a patch whose rows are all clear (rejection sampling)."""
    h, w = shape
    if h < cfg.patch_h or w < cfg.patch_w:
        raise SamplingError(f"{name}: image {h}x{w} smaller than patch {cfg.patch_h}x{cfg.patch_w}")
    bad = labels.labels.astype(bool)
    for _ in range(cfg.max_tries):
        y = int(rng.integers(0, h - cfg.patch_h + 1))
        x = int(rng.integers(0, w - cfg.patch_w + 1))
        if not bad[y : y + cfg.patch_h].any():
            return y, x
    raise SamplingError(f"{name}: no clear {cfg.patch_h}-row window found in {cfg.max_tries} tries")


def extract_training_patch(
    item: CorpusItem,
    cfg: TrainConfig,
    rng: np.random.Generator,
    breakpoints: Breakpoints | None = None,
    gauss_offset: float | None = None,
    width: int | None = None,
) -> TrainSample:
    """Cut a clear patch, synthesise a centred stripe into it and assemble the input.

    Percentile breakpoints and the Gauss offset come from the full image
    (or the clean patch with ``breakpoint_source="patch"``) unless given.
    """
    y, x = find_clear_window(item.labels, item.image.shape, cfg, rng, item.name)
    ph, pw = cfg.patch_h, cfg.patch_w
    img = OctaImage(item.image.data[y : y + ph, x : x + pw].copy())
    target = item.mask.data[y : y + ph, x : x + pw].copy()
    stripe = sample_center_stripe(ph, cfg.width_min, cfg.width_max, rng, width)
    source = img if cfg.breakpoint_source == "patch" else item.image
    if cfg.synthesis == "adbma":
        bp = compute_breakpoints(source, cfg.synth) if breakpoints is None else breakpoints
        corrupted = adbma_stripe(img, stripe, bp, cfg.synth.sigma, rng)
    else:
        offset = default_gauss_offset(source) if gauss_offset is None else gauss_offset
        corrupted = gauss_stripe(img, stripe, cfg.synth.sigma, offset, rng)
    mode = cfg.gradient_mode
    grad = None if mode is None else gradient_statistics(corrupted, stripe, mode)
    x_in = assemble_input(target, corrupted, grad, stripe, "train", cfg.mask_fill, cfg.appearance)
    if cfg.loss_support == "patch":
        weight = np.ones((ph, pw), dtype=np.float32)
    else:
        weight = np.repeat(stripe.labels.astype(np.float32)[:, None], pw, axis=1)
    return TrainSample(x_in, target, weight, stripe, (item.name, y, x))


def augment(sample: TrainSample, rng: np.random.Generator, p_h: float = 0.5, p_v: float = 0.5) -> TrainSample:
    """Random horizontal and vertical flips applied to every field of the sample."""
    x, t, w, lab = sample.input, sample.target, sample.loss_weight, sample.stripe.labels
    if rng.random() < p_h:
        x, t, w = x[:, :, ::-1], t[:, ::-1], w[:, ::-1]
    if rng.random() < p_v:
        x, t, w, lab = x[:, ::-1], t[::-1], w[::-1], lab[::-1]
    return TrainSample(
        np.ascontiguousarray(x), np.ascontiguousarray(t), np.ascontiguousarray(w),
        RowLabels(np.ascontiguousarray(lab)), sample.origin,
    )


class PatchSource:
    """Draws training patches; per-image breakpoints and offsets are cached."""

    def __init__(self, dataset: list[CorpusItem], cfg: TrainConfig):
        if not dataset:
            raise ValueError("training dataset is empty")
        self.items = list(dataset)
        self.cfg = cfg
        self._bp: dict[int, Breakpoints] = {}
        self._offset: dict[int, int] = {}

    def sample(self, rng: np.random.Generator, flips: bool | None = None) -> TrainSample:
        k = int(rng.integers(len(self.items)))
        item = self.items[k]
        if self.cfg.breakpoint_source == "patch":
            s = extract_training_patch(item, self.cfg, rng)
        else:
            if k not in self._bp:
                self._bp[k] = compute_breakpoints(item.image, self.cfg.synth)
                self._offset[k] = default_gauss_offset(item.image)
            s = extract_training_patch(item, self.cfg, rng, self._bp[k], self._offset[k])
        if self.cfg.flips if flips is None else flips:
            s = augment(s, rng)
        return s


def batch_seed(seed: int, epoch: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(0, epoch, step))


def validation_set(source: PatchSource, cfg: TrainConfig) -> list[TrainSample]:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    return [source.sample(rng, flips=False) for _ in range(cfg.val_patches)]


def validation_dice(net: CabrNet, samples: list[TrainSample], batch_size: int = 16) -> float:
    """Mean stripe-restricted Dice of thresholded predictions."""
    if not samples:
        return float("nan")
    scores = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        prob = forward(net, np.stack([s.input for s in chunk]))
        for s, p in zip(chunk, prob):
            scores.append(dice_score(p[0] > 0.5, s.target, s.stripe))
    return float(np.mean(scores))


@dataclass
class TrainReport:
    history: list[dict]
    best_val: float
    best_epoch: int
    checkpoint: Path | None

    def csv(self) -> str:
        return log_csv(self.history)


def log_csv(history: list[dict]) -> str:
    lines = [LOG_HEADER]
    for r in history:
        lines.append(f"{r['epoch']},{r['lr']:.6g},{r['train_loss']:.6f},{r['val_dice']:.6f}")
    return "\n".join(lines) + "\n"


def train_step(net: CabrNet, opt: Adam, batch: list[TrainSample]) -> float:
    x = Tensor(np.stack([s.input for s in batch]))
    t = np.stack([s.target for s in batch])[:, None]
    w = np.stack([s.loss_weight for s in batch])[:, None]
    opt.zero_grad()
    loss = F.dice_loss(net(x), t, w)
    value = float(loss.data)
    if not math.isfinite(value):
        return value
    loss.backward()
    opt.step()
    return value


def fit(
    net: CabrNet,
    dataset: list[CorpusItem],
    cfg: TrainConfig,
    out_dir=None,
    validate=None,
    restore_best: bool = True,
) -> TrainReport:
    """Train ``net`` in place and return the per-epoch history.

    With ``out_dir`` the best network goes to ``best.ckpt``, the final one to
    ``last.ckpt`` and the history to ``train_log.csv``. ``validate`` replaces
    the held-out Dice metric (a callable taking the network).
    """
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    source = PatchSource(dataset, cfg)
    if validate is None:
        val_set = validation_set(source, cfg)
        validate = lambda model: validation_dice(model, val_set, cfg.batch_size)  # noqa: E731
    opt = Adam(net.parameters(), lr=cfg.lr)
    history: list[dict] = []
    best, best_epoch, stale = -math.inf, -1, 0
    best_state = None
    best_path = None if out is None else out / "best.ckpt"
    meta = {"train": cfg.to_dict()}

    for epoch in range(cfg.epochs):
        losses = []
        for step in range(cfg.steps_per_epoch):
            ss = batch_seed(cfg.seed, epoch, step)
            rng = np.random.default_rng(ss)
            batch = [source.sample(rng) for _ in range(cfg.batch_size)]
            value = train_step(net, opt, batch)
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss {value} at epoch {epoch} step {step} "
                    f"(batch seed: SeedSequence({cfg.seed}, spawn_key={ss.spawn_key}))"
                )
            losses.append(value)
        val = float(validate(net))
        row = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_dice": val,
        }
        history.append(row)
        log.info("epoch %d lr %.3g loss %.4f val %.4f", epoch, opt.lr, row["train_loss"], val)
        if val > best:
            best, best_epoch, stale = val, epoch, 0
            best_state = {k: v.copy() for k, v in net.state_dict().items()}
            if best_path is not None:
                save_model(net, best_path, {**meta, "epoch": epoch, "val_dice": val})
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                opt.lr *= LR_DECAY
                stale = 0
        if out is not None:
            (out / "train_log.csv").write_text(log_csv(history))

    if out is not None:
        save_model(net, out / "last.ckpt", {**meta, "epoch": cfg.epochs - 1})
        (out / "train_log.csv").write_text(log_csv(history))
        if best_state is None:
            save_model(net, best_path, {**meta, "epoch": -1})
    if restore_best and best_state is not None:
        net.load_state_dict(best_state)
    return TrainReport(history, best, best_epoch, best_path)
