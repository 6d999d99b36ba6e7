"""Stripe-restricted Dice scoring and noise-level stratified reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .imaging import GradientMode, RowLabels, VesselMask

EASY_BELOW = 0.02
HARD_FROM = 0.04


class Subset(str, Enum):
    EASY = "Easy"
    MEDIUM = "Medium"
    HARD = "Hard"


def _rows(labels: RowLabels) -> np.ndarray:
    return labels.labels.astype(bool)


def _arr(m) -> np.ndarray:
    return (m.data if isinstance(m, VesselMask) else np.asarray(m)).astype(bool)


def overlap_counts(pred, gt, labels: RowLabels) -> tuple[int, int, int]:
    """``(|A & B|, |A|, |B|)`` over the stripe rows only."""
    a, b = _arr(pred), _arr(gt)
    if a.shape != b.shape:
        raise ValueError(f"prediction {a.shape} and reference {b.shape} differ in shape")
    if len(labels) != a.shape[0]:
        raise ValueError(f"labels length {len(labels)} != mask height {a.shape[0]}")
    rows = _rows(labels)
    a, b = a[rows], b[rows]
    return int(np.count_nonzero(a & b)), int(np.count_nonzero(a)), int(np.count_nonzero(b))


def dice_from_counts(inter: int, na: int, nb: int) -> float:
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def dice_score(pred, gt, labels: RowLabels) -> float:
    """Dice between two masks over the rows flagged in ``labels``.

    Both empty there gives 1.0; exactly one empty gives 0.0.
    """
    return dice_from_counts(*overlap_counts(pred, gt, labels))


def noise_level(labels: RowLabels) -> float:
    n = len(labels)
    return 0.0 if n == 0 else float(np.count_nonzero(labels.labels)) / n


def classify_subset(noise: float) -> Subset:
    if noise < EASY_BELOW:
        return Subset.EASY
    if noise < HARD_FROM:
        return Subset.MEDIUM
    return Subset.HARD


@dataclass(frozen=True)
class EvalRecord:
    id: str
    noise_level: float
    subset: Subset
    dice: float
    counts: tuple[int, int, int] = (0, 0, 0)


@dataclass
class EvalReport:
    records: list[EvalRecord]
    pooled: bool = False

    def _score(self, recs: list[EvalRecord]) -> float | None:
        if not recs:
            return None
        if self.pooled:
            inter, na, nb = (sum(c) for c in zip(*(r.counts for r in recs)))
            return dice_from_counts(inter, na, nb)
        return float(np.mean([r.dice for r in recs]))

    def means(self) -> dict[str, float | None]:
        out = {s.value: self._score([r for r in self.records if r.subset is s]) for s in Subset}
        out["All"] = self._score(self.records)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "noise_level", "subset", "dice"])
        for r in self.records:
            w.writerow([r.id, f"{r.noise_level:.6f}", r.subset.value, f"{r.dice:.6f}"])
        return buf.getvalue()

    def summary(self) -> str:
        """Aligned Easy/Medium/Hard/All table, Dice in percent to 2 decimals."""
        means = self.means()
        counts = {s.value: sum(r.subset is s for r in self.records) for s in Subset}
        counts["All"] = len(self.records)
        lines = [f"{'subset':<8}{'n':>6}{'dice':>10}"]
        for key, value in means.items():
            cell = "-" if value is None else f"{100.0 * value:.2f}"
            lines.append(f"{key:<8}{counts[key]:>6}{cell:>10}")
        return "\n".join(lines) + "\n"


def compare_reports(a: EvalReport, b: EvalReport, names=("A", "B")) -> str:
    """Side-by-side subset means with a difference column (percent)."""
    ma, mb = a.means(), b.means()
    lines = [f"{'subset':<8}{names[0]:>10}{names[1]:>10}{'diff':>10}"]
    for key in ma:
        va, vb = ma[key], mb[key]
        if va is None or vb is None:
            cells = ["-" if v is None else f"{100 * v:.2f}" for v in (va, vb)] + ["-"]
        else:
            cells = [f"{100 * va:.2f}", f"{100 * vb:.2f}", f"{100 * (va - vb):+.2f}"]
        lines.append(f"{key:<8}" + "".join(f"{c:>10}" for c in cells))
    return "\n".join(lines) + "\n"


def score_item(item_id: str, pred, gt, labels: RowLabels) -> EvalRecord:
    counts = overlap_counts(pred, gt, labels)
    noise = noise_level(labels)
    return EvalRecord(item_id, noise, classify_subset(noise), dice_from_counts(*counts), counts)


def evaluate_dataset(
    net,
    corpus,
    pooled: bool = False,
    window_height: int = 64,
    gs_mode: GradientMode | None = GradientMode.ABS_BMA,
    appearance: bool = True,
    threshold: float = 0.5,
    threads: int = 1,
) -> EvalReport:
    """Run windowed inference on every corpus item and score its stripes."""
    from .model import infer_image

    items = list(corpus)
    if not items:
        raise ValueError("cannot evaluate an empty corpus")

    def run(item):
        pred = infer_image(
            net, item.mask, item.image, item.labels, window_height=window_height,
            gs_mode=gs_mode, threshold=threshold, appearance=appearance,
        )
        return score_item(item.name, pred, item.reference, item.labels)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, items))
    else:
        records = [run(item) for item in items]
    return EvalReport(records, pooled)
