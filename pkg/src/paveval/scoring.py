"""Detection-to-ground-truth matching and per-class F1 scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from paveval.dataset import (
    CLASS_NAMES,
    Annotation,
    Dataset,
    Detection,
    DistressClass,
)
from paveval.errors import ValidationError
from paveval.geometry import boxes_array, iou_matrix

NUM_CLASSES = len(DistressClass)
NONE_INDEX = NUM_CLASSES  # row/column for unmatched boxes in confusion matrices
CONFUSION_LABELS = CLASS_NAMES + ("none",)


@dataclass
class ClassMatch:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)  # (gt, det, iou)
    false_positives: list[int] = field(default_factory=list)
    false_negatives: list[int] = field(default_factory=list)


@dataclass
class MatchResult:
    per_class: dict[DistressClass, ClassMatch]

    def counts(self, label: DistressClass) -> tuple[int, int, int]:
        m = self.per_class[label]
        return len(m.pairs), len(m.false_positives), len(m.false_negatives)


def greedy_match(
    gt_boxes: np.ndarray,
    gt_labels: Sequence[int],
    det_boxes: np.ndarray,
    det_labels: Sequence[int],
    det_scores: Sequence[float],
    iou_threshold: float,
    same_label: bool = True,
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Core greedy one-to-one matcher over index arrays.

    Detections are visited by descending score (ties: input order). Each
    claims the unmatched ground truth with the highest IoU (ties: lowest
    index), restricted to its own label when ``same_label``; the claim holds
    only if that IoU strictly exceeds ``iou_threshold``.

    Returns (pairs, unmatched detection indices, unmatched gt indices).
    """
    ious = iou_matrix(det_boxes, gt_boxes)
    if same_label and len(det_labels) and len(gt_labels):
        ious = np.where(
            np.asarray(det_labels)[:, None] == np.asarray(gt_labels)[None, :], ious, -1.0
        )
    order = sorted(range(len(det_scores)), key=lambda i: -det_scores[i])
    taken = np.zeros(len(gt_labels), dtype=bool)
    pairs = []
    unmatched_dets = []
    for d in order:
        if len(gt_labels) == 0:
            unmatched_dets.append(d)
            continue
        row = np.where(taken, -1.0, ious[d])
        g = int(np.argmax(row))
        if row[g] > iou_threshold:
            taken[g] = True
            pairs.append((g, d, float(row[g])))
        else:
            unmatched_dets.append(d)
    unmatched_gts = [g for g in range(len(gt_labels)) if not taken[g]]
    return pairs, sorted(unmatched_dets), unmatched_gts


def match(
    gts: Sequence[Annotation], dets: Sequence[Detection], iou_threshold: float = 0.5
) -> MatchResult:
    """Match detections to ground truth under the IoU-exceeds + same-label rule."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValidationError(f"iou_threshold {iou_threshold} outside (0, 1)")
    pairs, fps, fns = greedy_match(
        boxes_array(a.bbox for a in gts),
        [int(a.label) for a in gts],
        boxes_array(d.bbox for d in dets),
        [int(d.label) for d in dets],
        [d.confidence for d in dets],
        iou_threshold,
    )
    per_class = {c: ClassMatch() for c in DistressClass}
    for g, d, v in pairs:
        per_class[gts[g].label].pairs.append((g, d, v))
    for d in fps:
        per_class[dets[d].label].false_positives.append(d)
    for g in fns:
        per_class[gts[g].label].false_negatives.append(g)
    return MatchResult(per_class)


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return precision(self.tp, self.fp)

    @property
    def recall(self) -> float:
        return recall(self.tp, self.fn)

    @property
    def f1(self) -> float:
        return f1(self.precision, self.recall)


@dataclass
class EvalReport:
    per_class: dict[DistressClass, ClassStats]
    mean_f1: float
    classes_evaluated: list[DistressClass]
    confusion: np.ndarray  # (8, 8): rows ground truth, columns prediction, last = none

    def per_class_f1(self, evaluated_only: bool = True) -> dict[str, float]:
        classes = self.classes_evaluated if evaluated_only else list(DistressClass)
        return {c.label: self.per_class[c].f1 for c in classes}

    def to_dict(self) -> dict:
        return {
            "mean_f1": self.mean_f1,
            "classes_evaluated": [c.label for c in self.classes_evaluated],
            "per_class": {
                c.label: {
                    "tp": s.tp,
                    "fp": s.fp,
                    "fn": s.fn,
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                }
                for c, s in self.per_class.items()
            },
            "confusion": {
                "labels": list(CONFUSION_LABELS),
                "matrix": self.confusion.tolist(),
            },
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_table(self) -> str:
        name_w = max(len(n) for n in CLASS_NAMES + ("mean",))
        header = f"{'class':<{name_w}}  {'tp':>6} {'fp':>6} {'fn':>6}  {'precision':>9} {'recall':>9} {'f1':>9}"
        lines = [header, "-" * len(header)]
        for c in DistressClass:
            s = self.per_class[c]
            mark = "" if c in self.classes_evaluated else "  (not evaluated)"
            lines.append(
                f"{c.label:<{name_w}}  {s.tp:>6} {s.fp:>6} {s.fn:>6}  "
                f"{s.precision:>9.6f} {s.recall:>9.6f} {s.f1:>9.6f}{mark}"
            )
        lines.append("-" * len(header))
        lines.append(f"{'mean_f1':<{name_w}}  {'':>6} {'':>6} {'':>6}  {'':>9} {'':>9} {self.mean_f1:>9.6f}")
        return "\n".join(lines)


def format_confusion(matrix: np.ndarray) -> str:
    width = max(len(n) for n in CONFUSION_LABELS) + 1
    head = " " * width + "".join(f"{n[:width - 1]:>{width}}" for n in CONFUSION_LABELS)
    rows = [head]
    for name, row in zip(CONFUSION_LABELS, matrix):
        rows.append(f"{name:<{width}}" + "".join(f"{int(v):>{width}}" for v in row))
    return "\n".join(rows)


def _confusion_update(
    matrix: np.ndarray,
    gts: Sequence[Annotation],
    dets: Sequence[Detection],
    iou_threshold: float,
) -> None:
    pairs, fps, fns = greedy_match(
        boxes_array(a.bbox for a in gts),
        [int(a.label) for a in gts],
        boxes_array(d.bbox for d in dets),
        [int(d.label) for d in dets],
        [d.confidence for d in dets],
        iou_threshold,
        same_label=False,
    )
    for g, d, _ in pairs:
        matrix[gts[g].label, dets[d].label] += 1
    for g in fns:
        matrix[gts[g].label, NONE_INDEX] += 1
    for d in fps:
        matrix[NONE_INDEX, dets[d].label] += 1


def evaluate(
    gt: Dataset,
    predictions: Mapping[str, Sequence[Detection]],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Score predictions against ground truth; images without predictions count as all-missed."""
    unknown = sorted(k for k in predictions if k not in gt)
    if unknown:
        raise ValidationError(f"predictions reference unknown image_ids: {unknown}")

    stats = {c: ClassStats() for c in DistressClass}
    confusion = np.zeros((NUM_CLASSES + 1, NUM_CLASSES + 1), dtype=np.int64)
    for rec in gt:
        dets = predictions.get(rec.image_id, ())
        result = match(rec.annotations, dets, iou_threshold)
        for c, m in result.per_class.items():
            stats[c].tp += len(m.pairs)
            stats[c].fp += len(m.false_positives)
            stats[c].fn += len(m.false_negatives)
        _confusion_update(confusion, rec.annotations, dets, iou_threshold)

    evaluated = [c for c in DistressClass if stats[c].tp + stats[c].fp + stats[c].fn > 0]
    mean = sum(stats[c].f1 for c in evaluated) / len(evaluated) if evaluated else 0.0
    return EvalReport(stats, mean, evaluated, confusion)


@dataclass
class ConfusionResult:
    matrix: np.ndarray  # (8, 8): rows reference, columns candidate
    accuracy: float  # percent of reference boxes whose label the candidate reproduced

    def to_dict(self) -> dict:
        return {
            "labels": list(CONFUSION_LABELS),
            "matrix": self.matrix.tolist(),
            "accuracy": self.accuracy,
        }


def annotation_confusion(
    reference: Dataset, candidate: Dataset, iou_threshold: float = 0.5
) -> ConfusionResult:
    """Compare two annotation sets of the same images, label-agnostically."""
    if set(reference.image_ids) != set(candidate.image_ids):
        only_ref = sorted(set(reference.image_ids) - set(candidate.image_ids))
        only_cand = sorted(set(candidate.image_ids) - set(reference.image_ids))
        raise ValidationError(
            f"image_id sets differ: only in reference {only_ref}, only in candidate {only_cand}"
        )
    matrix = np.zeros((NUM_CLASSES + 1, NUM_CLASSES + 1), dtype=np.int64)
    for rec in reference:
        cand = [Detection(a.bbox, a.label, 1.0) for a in candidate[rec.image_id].annotations]
        _confusion_update(matrix, rec.annotations, cand, iou_threshold)
    total = reference.box_count()
    if total:
        accuracy = 100.0 * int(np.trace(matrix[:NUM_CLASSES, :NUM_CLASSES])) / total
    else:
        accuracy = 100.0 if candidate.box_count() == 0 else 0.0
    return ConfusionResult(matrix, accuracy)
