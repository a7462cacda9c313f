"""Image/annotation data model, annotation formats and dataset splitting."""

from __future__ import annotations

import enum
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from paveval.errors import ParseError, UnknownClassError, ValidationError
from paveval.geometry import BBox


class DistressClass(enum.IntEnum):
    ALLIGATOR = 0
    BLOCK = 1
    TRANSVERSE = 2
    PATCHING = 3
    SEALING = 4
    LONGITUDINAL = 5
    MANHOLE = 6

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_name(cls, name: str, path: str | None = None) -> DistressClass:
        """Case-insensitive lookup by label name."""
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise UnknownClassError(name, path) from None

    @classmethod
    def from_index(cls, index: int) -> DistressClass:
        try:
            return cls(index)
        except ValueError:
            raise UnknownClassError(index) from None


CLASS_NAMES: tuple[str, ...] = tuple(c.label for c in DistressClass)


class Source(enum.Enum):
    ARAN = "aran"
    STREET_VIEW = "street_view"
    SYNTHETIC = "synthetic"
    UNKNOWN = "unknown"


@dataclass(frozen=True, slots=True)
class Annotation:
    bbox: BBox
    label: DistressClass


@dataclass(frozen=True, slots=True)
class Detection:
    bbox: BBox
    label: DistressClass
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    def as_annotation(self) -> Annotation:
        return Annotation(self.bbox, self.label)


@dataclass(frozen=True)
class ImageRecord:
    """One image: metadata, optional RGB raster and its annotations.

    ``pixels`` is excluded from equality; compare rasters explicitly.
    """

    image_id: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    pixels: np.ndarray | None = field(default=None, compare=False, repr=False)
    source: Source = Source.UNKNOWN

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValidationError("empty image_id")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"{self.image_id}: non-positive size {self.width}x{self.height}"
            )
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.pixels is not None:
            px = self.pixels
            if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 3:
                raise ValidationError(
                    f"{self.image_id}: pixels must be uint8 HxWx3, got {px.dtype} {px.shape}"
                )
            if px.shape[:2] != (self.height, self.width):
                raise ValidationError(
                    f"{self.image_id}: raster {px.shape[1]}x{px.shape[0]} "
                    f"does not match size {self.width}x{self.height}"
                )
        for ann in self.annotations:
            if not ann.bbox.within(self.width, self.height):
                raise ValidationError(
                    f"{self.image_id}: box {ann.bbox.as_tuple()} outside "
                    f"image bounds {self.width}x{self.height}"
                )

    def replace(self, **changes) -> ImageRecord:
        values = {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "annotations": self.annotations,
            "pixels": self.pixels,
            "source": self.source,
        }
        values.update(changes)
        return ImageRecord(**values)


class Dataset:
    """Immutable ordered collection of image records keyed by image_id."""

    def __init__(
        self,
        records: Iterable[ImageRecord] = (),
        classes: Sequence[str] = CLASS_NAMES,
    ):
        self._records = tuple(records)
        self._index: dict[str, ImageRecord] = {}
        for rec in self._records:
            if rec.image_id in self._index:
                raise ValidationError(f"duplicate image_id {rec.image_id!r}")
            self._index[rec.image_id] = rec
        self.classes = tuple(classes)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self._records)

    def __getitem__(self, image_id: str) -> ImageRecord:
        return self._index[image_id]

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._records == other._records and self.classes == other.classes

    def __repr__(self) -> str:
        return f"Dataset({len(self)} images)"

    @property
    def image_ids(self) -> list[str]:
        return [r.image_id for r in self._records]

    def box_count(self) -> int:
        return sum(len(r.annotations) for r in self._records)

    def sorted(self) -> Dataset:
        return Dataset(sorted(self._records, key=lambda r: r.image_id), self.classes)


# ---------------------------------------------------------------- Pascal VOC


def _fmt_number(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def _voc_text(elem: ET.Element, tag: str, where: str) -> str:
    child = elem.find(tag)
    if child is None or child.text is None or not child.text.strip():
        raise ParseError(f"missing <{tag}>", where)
    return child.text.strip()


def _voc_number(elem: ET.Element, tag: str, where: str) -> float:
    text = _voc_text(elem, tag, where)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"<{tag}> is not a number: {text!r}", where) from None
    if not math.isfinite(value):
        raise ParseError(f"<{tag}> is not finite: {text!r}", where)
    return value


def parse_voc(xml_text: str, image_id: str) -> ImageRecord:
    """Read a Pascal VOC annotation document (annotations only, no pixels)."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        lines = xml_text.splitlines()
        context = lines[line - 1].strip() if 0 < line <= len(lines) else ""
        raise ParseError(f"malformed XML at column {col}: {context!r}", f"line {line}") from None
    if root.tag != "annotation":
        raise ParseError(f"root element is <{root.tag}>, expected <annotation>", image_id)

    size = root.find("size")
    if size is None:
        raise ParseError("missing <size>", image_id)
    width = _voc_number(size, "width", f"{image_id}/size")
    height = _voc_number(size, "height", f"{image_id}/size")
    if not (width.is_integer() and height.is_integer()):
        raise ParseError(f"non-integer image size {width}x{height}", f"{image_id}/size")

    annotations = []
    for i, obj in enumerate(root.iter("object")):
        where = f"{image_id}/object[{i}]"
        label = DistressClass.from_name(_voc_text(obj, "name", where), where)
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError("missing <bndbox>", where)
        coords = [_voc_number(bnd, t, where) for t in ("xmin", "ymin", "xmax", "ymax")]
        try:
            box = BBox(*coords)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
        annotations.append(Annotation(box, label))

    return ImageRecord(image_id, int(width), int(height), tuple(annotations))


def write_voc(record: ImageRecord) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = record.image_id
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(record.width)
    ET.SubElement(size, "height").text = str(record.height)
    ET.SubElement(size, "depth").text = "3"
    for ann in record.annotations:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = ann.label.label
        ET.SubElement(obj, "pose").text = "Unspecified"
        ET.SubElement(obj, "truncated").text = "0"
        ET.SubElement(obj, "difficult").text = "0"
        bnd = ET.SubElement(obj, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), ann.bbox.as_tuple()):
            ET.SubElement(bnd, tag).text = _fmt_number(v)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# ------------------------------------------------------------------- DarkNet

# Six-decimal output can overshoot the image edge by half a unit in the last place.
_DARKNET_EDGE_SLACK = 1e-6


def parse_darknet(
    txt_lines: str | Iterable[str], width: int, height: int, image_id: str
) -> ImageRecord:
    """Read DarkNet ``class cx cy w h`` lines normalised to ``[0, 1]``."""
    if isinstance(txt_lines, str):
        txt_lines = txt_lines.splitlines()
    annotations = []
    for lineno, raw in enumerate(txt_lines, start=1):
        line = raw.strip()
        if not line:
            continue
        where = f"{image_id} line {lineno}"
        fields = line.split()
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}: {line!r}", where)
        try:
            index = int(fields[0])
        except ValueError:
            raise ParseError(f"class index is not an integer: {fields[0]!r}", where) from None
        try:
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError:
            raise ParseError(f"non-numeric coordinate in {line!r}", where) from None
        if index < 0 or index > 6:
            raise UnknownClassError(index, where)
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise ValidationError(f"{where}: normalised values outside [0, 1]: {line!r}")

        def edge(v: float, limit: int) -> float:
            if -_DARKNET_EDGE_SLACK * limit <= v < 0:
                return 0.0
            if limit < v <= limit * (1 + _DARKNET_EDGE_SLACK):
                return float(limit)
            return v

        x0 = edge((cx - w / 2) * width, width)
        y0 = edge((cy - h / 2) * height, height)
        x1 = edge((cx + w / 2) * width, width)
        y1 = edge((cy + h / 2) * height, height)
        try:
            box = BBox(x0, y0, x1, y1)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
        annotations.append(Annotation(box, DistressClass(index)))
    return ImageRecord(image_id, width, height, tuple(annotations))


def write_darknet(record: ImageRecord) -> str:
    lines = []
    for ann in record.annotations:
        b = ann.bbox
        cx = (b.x_min + b.x_max) / 2 / record.width
        cy = (b.y_min + b.y_max) / 2 / record.height
        w = b.width / record.width
        h = b.height / record.height
        lines.append(f"{int(ann.label)} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}\n")
    return "".join(lines)


# ---------------------------------------------------------- submission JSON

SUBMISSION_KEYS = frozenset({"image_id", "category_id", "bbox", "score"})
GROUND_TRUTH_KEYS = frozenset({"image_id", "category_id", "bbox"})


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _parse_entries(json_text: str | bytes, keys: frozenset[str]) -> list[tuple[str, Annotation, dict]]:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, list):
        raise ParseError("top level must be an array", "$")

    out = []
    for i, entry in enumerate(doc):
        path = f"$[{i}]"
        if not isinstance(entry, dict):
            raise ParseError("entry must be an object", path)
        missing = keys - entry.keys()
        if missing:
            raise ParseError(f"missing field(s) {sorted(missing)}", path)
        extra = entry.keys() - keys
        if extra:
            raise ParseError(f"unexpected field(s) {sorted(extra)}", path)

        image_id = entry["image_id"]
        if not isinstance(image_id, str) or not image_id:
            raise ParseError("must be a non-empty string", f"{path}.image_id")
        cat = entry["category_id"]
        if not isinstance(cat, int) or isinstance(cat, bool):
            raise ParseError("must be an integer", f"{path}.category_id")
        if not 0 <= cat <= 6:
            raise UnknownClassError(cat, f"{path}.category_id")
        bbox = entry["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ParseError("must be an array [x, y, width, height]", f"{path}.bbox")
        for j, v in enumerate(bbox):
            if not _is_number(v):
                raise ParseError("must be a finite number", f"{path}.bbox[{j}]")
        x, y, w, h = (float(v) for v in bbox)
        if x < 0 or y < 0:
            raise ValidationError(f"{path}.bbox: negative origin ({x}, {y})")
        if w <= 0 or h <= 0:
            raise ValidationError(f"{path}.bbox: non-positive size ({w}, {h})")
        try:
            box = BBox.from_xywh(x, y, w, h)
        except ValidationError as exc:
            raise ValidationError(f"{path}.bbox: {exc}") from None
        out.append((image_id, Annotation(box, DistressClass(cat)), entry))
    return out


def parse_submission(json_text: str | bytes) -> dict[str, list[Detection]]:
    """Parse a submission array into detections grouped per image_id."""
    grouped: dict[str, list[Detection]] = {}
    for i, (image_id, ann, entry) in enumerate(_parse_entries(json_text, SUBMISSION_KEYS)):
        score = entry["score"]
        if not _is_number(score):
            raise ParseError("must be a finite number", f"$[{i}].score")
        if not 0.0 <= score <= 1.0:
            raise ValidationError(f"$[{i}].score: {score} outside [0, 1]")
        grouped.setdefault(image_id, []).append(Detection(ann.bbox, ann.label, float(score)))
    return grouped


def _extent(lo: float, hi: float) -> float:
    """Width ``w`` such that ``lo + w == hi`` holds exactly in floating point."""
    w = hi - lo
    step = 0
    while lo + w != hi and step < 64:
        w = math.nextafter(w, math.inf if lo + w < hi else -math.inf)
        step += 1
    return w


def _box_xywh(b: BBox) -> list[float]:
    return [b.x_min, b.y_min, _extent(b.x_min, b.x_max), _extent(b.y_min, b.y_max)]


def write_submission(detections: Mapping[str, Sequence[Detection]]) -> str:
    entries = [
        {
            "image_id": image_id,
            "category_id": int(d.label),
            "bbox": _box_xywh(d.bbox),
            "score": d.confidence,
        }
        for image_id, dets in detections.items()
        for d in dets
    ]
    return json.dumps(entries)


def inferred_size(boxes: Iterable[BBox]) -> tuple[int, int]:
    boxes = list(boxes)
    width = max((math.ceil(b.x_max) for b in boxes), default=1)
    height = max((math.ceil(b.y_max) for b in boxes), default=1)
    return max(width, 1), max(height, 1)


def parse_ground_truth(
    json_text: str | bytes,
    sizes: Mapping[str, tuple[int, int]] | None = None,
) -> Dataset:
    """Parse ground-truth JSON (submission shape without ``score``).

    The array carries no image sizes; when ``sizes`` lacks an image its size
    is taken as the smallest integer extent covering all its boxes.
    """
    grouped: dict[str, list[Annotation]] = {}
    for image_id, ann, _ in _parse_entries(json_text, GROUND_TRUTH_KEYS):
        grouped.setdefault(image_id, []).append(ann)
    sizes = sizes or {}
    for image_id in sizes:
        grouped.setdefault(image_id, [])
    records = []
    for image_id, anns in grouped.items():
        w, h = sizes.get(image_id) or inferred_size(a.bbox for a in anns)
        records.append(ImageRecord(image_id, w, h, tuple(anns)))
    return Dataset(records)


def write_ground_truth(dataset: Dataset) -> str:
    entries = [
        {"image_id": rec.image_id, "category_id": int(a.label), "bbox": _box_xywh(a.bbox)}
        for rec in dataset
        for a in rec.annotations
    ]
    return json.dumps(entries)


def dataset_as_predictions(dataset: Dataset, confidence: float = 1.0) -> dict[str, list[Detection]]:
    """Ground-truth boxes recast as detections, one list per image."""
    return {
        rec.image_id: [Detection(a.bbox, a.label, confidence) for a in rec.annotations]
        for rec in dataset
    }


# --------------------------------------------------------------------- split


def split(
    dataset: Dataset, fractions: Sequence[float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition images into (train1, train2, test).

    Sizes are ``round(N * f)`` for the first two parts; the remainder goes to
    the test part. Membership is a seeded shuffle of the sorted image ids so
    the result does not depend on dataset order.
    """
    if len(fractions) != 3:
        raise ValidationError(f"expected 3 fractions, got {len(fractions)}")
    if any(f < 0 or not math.isfinite(f) for f in fractions):
        raise ValidationError(f"fractions must be non-negative: {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions sum to {sum(fractions)}, expected 1")

    n = len(dataset)
    n1 = min(round(n * fractions[0]), n)
    n2 = min(round(n * fractions[1]), n - n1)
    ids = sorted(dataset.image_ids)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    parts = (set(shuffled[:n1]), set(shuffled[n1 : n1 + n2]), set(shuffled[n1 + n2 :]))
    return tuple(
        Dataset([r for r in dataset if r.image_id in part], dataset.classes)
        for part in parts
    )
