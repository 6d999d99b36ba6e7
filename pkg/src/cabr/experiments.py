"""Phantom experiments: end-to-end training runs and the synthesis/GS ablation.

Run as ``python3 -m cabr.experiments {phantom,ablation} --out DIR``. Each run
writes ``result.json`` holding its full configuration next to the scores, so
cached results can be checked against the configuration that asked for them.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import CorpusItem, clear_item
from .evaluator import evaluate_dataset
from .imaging import RowLabels
from .model import build_cabr
from .phantom import PhantomParams, generate_phantom, item_seeds
from .synth import SynthParams, adbma_stripe, compute_breakpoints
from .trainer import TrainConfig, fit

log = logging.getLogger(__name__)

HELD_OUT_WIDTHS = (1, 4, 8)


@dataclass
class RunSpec:
    train_images: int = 200
    held_out_images: int = 30
    image_size: int = 496
    base_channels: int = 16
    variant: str = "light"
    data_seed: int = 2024
    eval_seed: int = 7
    train: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)


def phantom_items(n: int, seed: int, size: int, prefix: str) -> list[CorpusItem]:
    base = PhantomParams(height=size, width=size)
    items = []
    for i, s in enumerate(item_seeds(n, seed)):
        img, mask = generate_phantom(PhantomParams.from_dict({**base.to_dict(), "seed": s}))
        items.append(clear_item(f"{prefix}{i:04d}", img, mask))
    return items


def held_out_stripes(
    items: list[CorpusItem], widths=HELD_OUT_WIDTHS, seed: int = 7, synth: SynthParams | None = None
) -> dict[int, list[CorpusItem]]:
    """One AdBMA stripe per image and width; the clean mask is kept as reference."""
    synth = SynthParams() if synth is None else synth
    rng = np.random.default_rng(seed)
    out: dict[int, list[CorpusItem]] = {w: [] for w in widths}
    for item in items:
        bp = compute_breakpoints(item.image, synth)
        for w in widths:
            h = item.image.height
            start = int(rng.integers(0, h - w + 1))
            labels = RowLabels.from_rows(h, start, start + w)
            corrupted = adbma_stripe(item.image, labels, bp, synth.sigma, rng)
            out[w].append(CorpusItem(f"{item.name}_w{w}", corrupted, item.mask, labels, gt=item.mask))
    return out


def run(spec: RunSpec, out_dir, train_items=None, held_out=None) -> dict:
    """Train one network and score it on the held-out stripes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = spec.train_config()
    if train_items is None:
        train_items = phantom_items(spec.train_images, spec.data_seed, spec.image_size, "train")
    if held_out is None:
        test = phantom_items(spec.held_out_images, spec.data_seed + 1, spec.image_size, "test")
        held_out = held_out_stripes(test, seed=spec.eval_seed, synth=cfg.synth)
    net = build_cabr(spec.base_channels, spec.variant, seed=cfg.seed)
    t0 = time.time()
    report = fit(net, train_items, cfg, out_dir)
    train_seconds = time.time() - t0
    per_width = {}
    for w, items in held_out.items():
        rep = evaluate_dataset(net, items, gs_mode=cfg.gradient_mode, appearance=cfg.appearance)
        per_width[str(w)] = rep.means()["All"]
        (out_dir / f"eval_w{w}.csv").write_text(rep.to_csv())
    result = {
        "spec": asdict(spec),
        "train_seconds": train_seconds,
        "best_epoch": report.best_epoch,
        "best_val": report.best_val,
        "dice_by_width": per_width,
        "dice_mean": float(np.mean(list(per_width.values()))),
    }
    (out_dir / "result.json").write_text(json.dumps(result, indent=1, sort_keys=True))
    return result


def phantom_spec(**train) -> RunSpec:
    """The end-to-end run: 150 epochs x 50 steps, batch 16."""
    base = dict(epochs=150, steps_per_epoch=50, batch_size=16, patch_h=64, patch_w=128,
                lr=1e-3, plateau_patience=10, val_patches=64)
    base.update(train)
    return RunSpec(train=base)


ABLATIONS = {
    "gauss_nogs": dict(synthesis="gauss", gs_mode="none"),
    "adbma_nogs": dict(synthesis="adbma", gs_mode="none"),
    "adbma_absbma": dict(synthesis="adbma", gs_mode="abs_bma"),
}
ABLATION_SEEDS = (0, 1, 2)


def ablation_spec(name: str, seed: int) -> RunSpec:
    base = dict(epochs=30, steps_per_epoch=25, batch_size=16, patch_h=64, patch_w=128,
                lr=1e-3, plateau_patience=10, val_patches=32, seed=seed)
    base.update(ABLATIONS[name])
    return RunSpec(train_images=60, held_out_images=30, train=base)


def run_ablation(out_dir, names=tuple(ABLATIONS), seeds=ABLATION_SEEDS) -> dict:
    """All ablation arms share the corpus and the held-out stripes."""
    out_dir = Path(out_dir)
    first = ablation_spec(names[0], seeds[0])
    train_items = phantom_items(first.train_images, first.data_seed, first.image_size, "train")
    test = phantom_items(first.held_out_images, first.data_seed + 1, first.image_size, "test")
    held_out = held_out_stripes(test, seed=first.eval_seed)
    results = {}
    for name in names:
        for seed in seeds:
            sub = out_dir / f"{name}_s{seed}"
            cached = sub / "result.json"
            spec = ablation_spec(name, seed)
            if cached.exists() and json.loads(cached.read_text())["spec"] == asdict(spec):
                res = json.loads(cached.read_text())
            else:
                res = run(spec, sub, train_items, held_out)
            results[f"{name}_s{seed}"] = res
            log.info("%s seed %d: %.4f", name, seed, res["dice_mean"])
    summary = {
        name: float(np.mean([results[f"{name}_s{s}"]["dice_mean"] for s in seeds])) for name in names
    }
    (out_dir / "summary.json").write_text(json.dumps({"means": summary, "runs": results}, indent=1, sort_keys=True))
    return summary


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python3 -m cabr.experiments")
    p.add_argument("which", choices=["phantom", "ablation"])
    p.add_argument("--out", required=True)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    if args.which == "phantom":
        res = run(phantom_spec(), args.out)
        print(json.dumps(res["dice_by_width"]), res["dice_mean"])
    else:
        print(json.dumps(run_ablation(args.out)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
