"""Confidence filtering, per-class NMS and test-time-augmentation fusion."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from paveval import augment
from paveval.augment import TransformKind, TransformRecord, inverse_box
from paveval.dataset import Detection, ImageRecord
from paveval.errors import ParseError, ValidationError
from paveval.geometry import BBox, boxes_array, intersect, iou_matrix

DEFAULT_CONF = 0.25
DEFAULT_NMS_IOU = 0.45

# A chain of transforms applied left to right; the empty chain is the identity.
Chain = tuple[TransformRecord, ...]


def confidence_filter(dets: Sequence[Detection], conf_threshold: float) -> list[Detection]:
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValidationError(f"conf_threshold {conf_threshold} outside [0, 1]")
    return [d for d in dets if d.confidence >= conf_threshold]


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Per-class greedy non-maximum suppression.

    A detection survives if its IoU with every already-kept detection of its
    class is below ``iou_threshold``. Output is ordered by descending
    confidence, ties in input order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValidationError(f"iou_threshold {iou_threshold} outside (0, 1)")
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    ious = iou_matrix(boxes_array(d.bbox for d in dets), boxes_array(d.bbox for d in dets))
    labels = np.array([int(d.label) for d in dets])
    kept: list[int] = []
    for i in order:
        same = [k for k in kept if labels[k] == labels[i]]
        if all(ious[i, k] < iou_threshold for k in same):
            kept.append(i)
    return [dets[i] for i in kept]


def _as_chain(record: Union[TransformRecord, Sequence[TransformRecord]]) -> Chain:
    if isinstance(record, TransformRecord):
        return (record,)
    return tuple(record)


def inverse_map(
    dets: Sequence[Detection],
    record: Union[TransformRecord, Sequence[TransformRecord]],
) -> list[Detection]:
    """Map detections from a transformed frame back to the source frame.

    ``record`` may be a single transform or a chain; chains are undone right
    to left. Boxes are clipped to the source image and dropped if nothing
    remains.
    """
    chain = _as_chain(record)
    for rec in chain:
        if not rec.geometry_invertible:
            raise ValidationError(f"{rec.kind.value} transform is not invertible")
    if not chain:
        return list(dets)
    src_w, src_h = chain[0].src_width, chain[0].src_height
    frame = BBox(0, 0, src_w, src_h)
    out = []
    for d in dets:
        box = d.bbox
        for rec in reversed(chain):
            box = inverse_box(box, rec)
        box = intersect(box, frame)
        if box is not None:
            out.append(Detection(box, d.label, d.confidence))
    return out


def forward_map_box(box: BBox, record: Union[TransformRecord, Sequence[TransformRecord]]) -> BBox:
    for rec in _as_chain(record):
        box = augment.forward_box(box, rec)
    return box


def inverse_map_box(box: BBox, record: Union[TransformRecord, Sequence[TransformRecord]]) -> BBox:
    for rec in reversed(_as_chain(record)):
        box = inverse_box(box, rec)
    return box


@dataclass
class TtaBundle:
    """Per-copy detections for one source image, each in its copy's frame."""

    copies: list[tuple[Chain, list[Detection]]]

    def __post_init__(self) -> None:
        self.copies = [(_as_chain(chain), list(dets)) for chain, dets in self.copies]
        for chain, _ in self.copies:
            for rec in chain:
                if not rec.geometry_invertible:
                    raise ValidationError(f"TTA copy uses non-invertible {rec.kind.value}")


def tta_fuse(
    bundle: TtaBundle,
    conf_threshold: float = DEFAULT_CONF,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> list[Detection]:
    merged: list[Detection] = []
    for chain, dets in bundle.copies:
        merged.extend(inverse_map(dets, chain))
    return nms(confidence_filter(merged, conf_threshold), nms_iou)


STANDARD_TTA: tuple[tuple[TransformKind, ...], ...] = (
    (),
    (TransformKind.HFLIP,),
    (TransformKind.VFLIP,),
    (TransformKind.HFLIP, TransformKind.VFLIP),
    (TransformKind.INVERT,),
    (TransformKind.INVERT, TransformKind.HFLIP),
    (TransformKind.INVERT, TransformKind.VFLIP),
    (TransformKind.SAFE_CROP,),
    (TransformKind.SAFE_CROP,),
    (TransformKind.SAFE_CROP,),
)


def standard_tta_set() -> list[tuple[TransformKind, ...]]:
    """The ten-copy recipe: identity, flips, inversions and three safe crops."""
    return list(STANDARD_TTA)


def apply_chain(
    record: ImageRecord,
    kinds: Sequence[TransformKind],
    rng: np.random.Generator,
) -> tuple[ImageRecord, Chain]:
    out = record
    chain = []
    for kind in kinds:
        if kind is TransformKind.HFLIP:
            out, rec = augment.hflip(out)
        elif kind is TransformKind.VFLIP:
            out, rec = augment.vflip(out)
        elif kind is TransformKind.INVERT:
            out, rec = augment.invert(out)
        elif kind is TransformKind.SAFE_CROP:
            out, rec = augment.bbox_safe_crop(out, rng)
        else:
            raise ValidationError(f"{kind.value} is not a TTA transform")
        chain.append(rec)
    return out, tuple(chain)


@dataclass(frozen=True)
class TtaCopy:
    copy_id: str
    source_id: str
    image: ImageRecord
    chain: Chain


def emit_tta_copies(record: ImageRecord, seed: int) -> list[TtaCopy]:
    """Render the standard ten copies of one image.

    Safe crops are constrained by the image's annotations when it has any;
    test images usually have none, in which case a crop keeps the full frame.
    """
    copies = []
    for i, kinds in enumerate(standard_tta_set()):
        rng = augment.substream(seed, record.image_id, i)
        image, chain = apply_chain(record, kinds, rng)
        copy_id = f"{record.image_id}_tta{i}"
        copies.append(TtaCopy(copy_id, record.image_id, image.replace(image_id=copy_id), chain))
    return copies


def manifest_entry(copy: TtaCopy) -> dict:
    return {
        "copy_id": copy.copy_id,
        "source_id": copy.source_id,
        "transforms": [rec.to_dict() for rec in copy.chain],
    }


def write_tta_manifest(copies: Sequence[TtaCopy]) -> str:
    return json.dumps({"copies": [manifest_entry(c) for c in copies]}, indent=2)


def parse_tta_manifest(json_text: str | bytes) -> list[tuple[str, str, Chain]]:
    """Read a manifest into (copy_id, source_id, chain) triples."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("copies"), list):
        raise ParseError("expected an object with a 'copies' array", "$")
    out = []
    for i, entry in enumerate(doc["copies"]):
        path = f"$.copies[{i}]"
        try:
            chain = tuple(TransformRecord.from_dict(t) for t in entry["transforms"])
            out.append((str(entry["copy_id"]), str(entry["source_id"]), chain))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad manifest entry: {exc}", path) from None
        except ParseError as exc:
            raise ParseError(str(exc), path) from None
    return out


def fuse_predictions(
    manifest: Sequence[tuple[str, str, Chain]],
    predictions: dict[str, list[Detection]],
    conf_threshold: float = DEFAULT_CONF,
    nms_iou: float = DEFAULT_NMS_IOU,
) -> dict[str, list[Detection]]:
    """Fuse per-copy predictions into per-source predictions, sorted by source id."""
    known = {copy_id for copy_id, _, _ in manifest}
    unknown = sorted(set(predictions) - known)
    if unknown:
        raise ValidationError(f"predictions for copies not in manifest: {unknown}")
    bundles: dict[str, list[tuple[Chain, list[Detection]]]] = {}
    for copy_id, source_id, chain in manifest:
        bundles.setdefault(source_id, []).append((chain, predictions.get(copy_id, [])))
    return {
        source_id: tta_fuse(TtaBundle(bundles[source_id]), conf_threshold, nms_iou)
        for source_id in sorted(bundles)
    }
