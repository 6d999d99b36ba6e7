"""Corpus items as consumed by the trainer and the evaluator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import OctaImage, RowLabels, VesselMask, load_labels, load_mask, read_pgm_array
from .phantom import load_manifest


@dataclass
class CorpusItem:
    """One image with its (possibly defective) mask and row labels.

    ``gt`` is the reference mask for scoring; it defaults to ``mask``.
    """

    name: str
    image: OctaImage
    mask: VesselMask
    labels: RowLabels
    gt: VesselMask | None = None

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(f"{self.name}: image {self.image.shape} and mask {self.mask.shape} differ")
        if len(self.labels) != self.image.height:
            raise ValueError(f"{self.name}: {len(self.labels)} labels for {self.image.height} rows")
        if self.gt is not None and self.gt.shape != self.image.shape:
            raise ValueError(f"{self.name}: gt {self.gt.shape} and image {self.image.shape} differ")

    @property
    def reference(self) -> VesselMask:
        return self.mask if self.gt is None else self.gt


def load_corpus(manifest) -> list[CorpusItem]:
    """Read every item listed in a manifest (file or its directory).

    Entries may carry an optional ``gt_path``.
    """
    root, entries = load_manifest(manifest)
    items = []
    for i, entry in enumerate(entries):
        try:
            image = OctaImage(read_pgm_array(root / entry["image_path"]))
            mask = load_mask(root / entry["mask_path"])
            labels = load_labels(root / entry["label_path"])
        except KeyError as exc:
            raise ValueError(f"manifest entry {i} lacks {exc.args[0]!r}") from None
        gt = load_mask(root / entry["gt_path"]) if "gt_path" in entry else None
        name = entry.get("id", str(entry["image_path"]).rsplit(".", 1)[0])
        items.append(CorpusItem(name, image, mask, labels, gt))
    return items


def clear_item(name: str, image: OctaImage, mask: VesselMask) -> CorpusItem:
    return CorpusItem(name, image, mask, RowLabels(np.zeros(image.height, dtype=np.uint8)))
