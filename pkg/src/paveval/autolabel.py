"""Draft annotations from detector output and measure human corrections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from paveval.dataset import Dataset, Detection, ImageRecord, inferred_size
from paveval.errors import ValidationError
from paveval.geometry import boxes_array
from paveval.postprocess import nms
from paveval.scoring import greedy_match

DRAFT_NMS_IOU = 0.45
KEEP_IOU = 0.9


def draft_labels(
    predictions: Mapping[str, Sequence[Detection]],
    conf_threshold: float,
    sizes: Mapping[str, tuple[int, int]] | None = None,
    nms_iou: float = DRAFT_NMS_IOU,
) -> Dataset:
    """Turn detections into draft annotations (NMS first, then the confidence cut).

    Image sizes come from ``sizes`` when given, else from the box extents.
    Output images are sorted by image_id.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValidationError(f"conf_threshold {conf_threshold} outside [0, 1]")
    sizes = sizes or {}
    records = []
    for image_id in sorted(predictions):
        kept = [d for d in nms(predictions[image_id], nms_iou) if d.confidence >= conf_threshold]
        anns = tuple(d.as_annotation() for d in kept)
        w, h = sizes.get(image_id) or inferred_size(a.bbox for a in anns)
        records.append(ImageRecord(image_id, w, h, anns))
    return Dataset(records)


@dataclass
class CorrectionStats:
    kept: int = 0
    relabeled: int = 0
    resized: int = 0
    added: int = 0
    deleted: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        return "\n".join(f"{k:<10}{v:>8}" for k, v in self.to_dict().items())


def diff_annotations(
    draft: Dataset,
    corrected: Dataset,
    iou_threshold: float = 0.5,
    keep_iou: float = KEEP_IOU,
) -> CorrectionStats:
    """Classify every box of draft and corrected sets into one outcome.

    Boxes are paired label-agnostically (corrected boxes claim draft boxes in
    input order). A pair with a changed label counts as relabeled; a pair
    with the same label is kept above ``keep_iou`` and resized otherwise.
    """
    if set(draft.image_ids) != set(corrected.image_ids):
        raise ValidationError(
            "image_id sets differ: "
            f"only in draft {sorted(set(draft.image_ids) - set(corrected.image_ids))}, "
            f"only in corrected {sorted(set(corrected.image_ids) - set(draft.image_ids))}"
        )
    stats = CorrectionStats()
    for rec in draft:
        d_anns = rec.annotations
        c_anns = corrected[rec.image_id].annotations
        pairs, added, deleted = greedy_match(
            boxes_array(a.bbox for a in d_anns),
            [int(a.label) for a in d_anns],
            boxes_array(a.bbox for a in c_anns),
            [int(a.label) for a in c_anns],
            [1.0] * len(c_anns),
            iou_threshold,
            same_label=False,
        )
        for g, c, v in pairs:
            if d_anns[g].label != c_anns[c].label:
                stats.relabeled += 1
            elif v > keep_iou:
                stats.kept += 1
            else:
                stats.resized += 1
        stats.added += len(added)
        stats.deleted += len(deleted)
    return stats
