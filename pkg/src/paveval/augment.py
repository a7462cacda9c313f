"""Seedable image + annotation transforms with exact box remapping.

Every operation takes an :class:`ImageRecord` with pixels and returns the new
record together with a :class:`TransformRecord` describing what was done, so
that boxes predicted on the transformed image can be mapped back.
Rotation and shear are deliberately absent: they swap the apparent
orientation of longitudinal and transverse cracks.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import cv2
import numpy as np

from paveval.dataset import Annotation, Dataset, ImageRecord, Source
from paveval.errors import ParseError, ValidationError
from paveval.geometry import BBox, area, intersect

PAD_VALUE = 114
MIN_RETAINED_FRACTION = 0.25
MIN_SIDE_PX = 2.0


class TransformKind(enum.Enum):
    HFLIP = "hflip"
    VFLIP = "vflip"
    SCALE = "scale"
    INVERT = "invert"
    SAFE_CROP = "safe_crop"
    MOSAIC = "mosaic"
    MEAN_NORM = "mean_norm"
    GAUSSIAN = "gaussian"
    HIST_EQ = "hist_eq"
    HUE_CONTRAST = "hue_contrast"
    MEDIAN_BLUR = "median_blur"
    BRIGHTNESS_CONTRAST = "brightness_contrast"

    @classmethod
    def parse(cls, name: str) -> TransformKind:
        try:
            return cls(name.lower())
        except ValueError:
            try:
                return cls[name.upper()]
            except KeyError:
                raise ValidationError(f"unknown transform kind {name!r}") from None


GEOMETRIC = frozenset(
    {TransformKind.HFLIP, TransformKind.VFLIP, TransformKind.SCALE, TransformKind.SAFE_CROP, TransformKind.MOSAIC}
)


@dataclass(frozen=True)
class TransformRecord:
    kind: TransformKind
    params: Mapping[str, float] = field(default_factory=dict)
    src_width: int = 0
    src_height: int = 0

    @property
    def geometry_invertible(self) -> bool:
        return self.kind is not TransformKind.MOSAIC

    @property
    def out_size(self) -> tuple[int, int]:
        if self.kind is TransformKind.SAFE_CROP:
            p = self.params
            return int(p["x1"] - p["x0"]), int(p["y1"] - p["y0"])
        if self.kind is TransformKind.MOSAIC:
            return int(self.params["out_width"]), int(self.params["out_height"])
        return self.src_width, self.src_height

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": dict(self.params),
            "src_width": self.src_width,
            "src_height": self.src_height,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TransformRecord:
        try:
            return cls(
                TransformKind.parse(d["kind"]),
                {k: float(v) for k, v in d.get("params", {}).items()},
                int(d["src_width"]),
                int(d["src_height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad transform record: {exc}") from None


@dataclass(frozen=True)
class AugmentedRecord:
    image: ImageRecord
    provenance: tuple[tuple[str, TransformRecord], ...] = ()


# ------------------------------------------------------------ box mapping


def forward_box(box: BBox, record: TransformRecord) -> BBox:
    """Map a source-frame box into the transformed frame (no clipping)."""
    k, p = record.kind, record.params
    if k is TransformKind.HFLIP:
        w = record.src_width
        return BBox(w - box.x_max, box.y_min, w - box.x_min, box.y_max)
    if k is TransformKind.VFLIP:
        h = record.src_height
        return BBox(box.x_min, h - box.y_max, box.x_max, h - box.y_min)
    if k in (TransformKind.SCALE, TransformKind.MOSAIC):
        return BBox(
            box.x_min * p["sx"] + p["dx"],
            box.y_min * p["sy"] + p["dy"],
            box.x_max * p["sx"] + p["dx"],
            box.y_max * p["sy"] + p["dy"],
        )
    if k is TransformKind.SAFE_CROP:
        return box.translate(-p["x0"], -p["y0"])
    return box


def inverse_box(box: BBox, record: TransformRecord) -> BBox:
    """Map a transformed-frame box back to the source frame (no clipping)."""
    k, p = record.kind, record.params
    if not record.geometry_invertible:
        raise ValidationError(f"{k.value} transform has no inverse box mapping")
    if k in (TransformKind.HFLIP, TransformKind.VFLIP):
        return forward_box(box, record)  # involution
    if k is TransformKind.SCALE:
        return BBox(
            (box.x_min - p["dx"]) / p["sx"],
            (box.y_min - p["dy"]) / p["sy"],
            (box.x_max - p["dx"]) / p["sx"],
            (box.y_max - p["dy"]) / p["sy"],
        )
    if k is TransformKind.SAFE_CROP:
        return box.translate(p["x0"], p["y0"])
    return box


def _remap(
    annotations: Sequence[Annotation],
    record: TransformRecord,
    out_w: int,
    out_h: int,
    retain_rule: bool,
) -> list[Annotation]:
    frame = BBox(0, 0, out_w, out_h)
    out = []
    for ann in annotations:
        mapped = forward_box(ann.bbox, record)
        kept = intersect(mapped, frame)
        if kept is None:
            continue
        if retain_rule and (
            area(kept) < MIN_RETAINED_FRACTION * area(mapped)
            or min(kept.width, kept.height) < MIN_SIDE_PX
        ):
            continue
        out.append(Annotation(kept, ann.label))
    return out


# --------------------------------------------------------- raster helpers


def _pixels(r: ImageRecord) -> np.ndarray:
    if r.pixels is None:
        raise ValidationError(f"{r.image_id}: operation requires pixels")
    return r.pixels


def _round_clip(values: np.ndarray) -> np.ndarray:
    """Round half up and saturate to uint8."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def _resize(px: np.ndarray, width: int, height: int) -> np.ndarray:
    if px.shape[1] == width and px.shape[0] == height:
        return px.copy()
    return cv2.resize(px, (width, height), interpolation=cv2.INTER_LINEAR)


def _paste(canvas: np.ndarray, img: np.ndarray, dx: int, dy: int) -> None:
    """Copy ``img`` onto ``canvas`` with its top-left at (dx, dy), cropping overflow."""
    ch, cw = canvas.shape[:2]
    ih, iw = img.shape[:2]
    x0, y0 = max(dx, 0), max(dy, 0)
    x1, y1 = min(dx + iw, cw), min(dy + ih, ch)
    if x0 < x1 and y0 < y1:
        canvas[y0:y1, x0:x1] = img[y0 - dy : y1 - dy, x0 - dx : x1 - dx]


def _check_ksize(ksize: float) -> int:
    if not float(ksize).is_integer() or int(ksize) < 1 or int(ksize) % 2 == 0:
        raise ValidationError(f"kernel size must be a positive odd integer, got {ksize}")
    return int(ksize)


# ------------------------------------------------------- geometric ops


def hflip(r: ImageRecord) -> tuple[ImageRecord, TransformRecord]:
    px = _pixels(r)
    rec = TransformRecord(TransformKind.HFLIP, {}, r.width, r.height)
    anns = _remap(r.annotations, rec, r.width, r.height, retain_rule=False)
    return r.replace(pixels=np.ascontiguousarray(px[:, ::-1]), annotations=anns), rec


def vflip(r: ImageRecord) -> tuple[ImageRecord, TransformRecord]:
    px = _pixels(r)
    rec = TransformRecord(TransformKind.VFLIP, {}, r.width, r.height)
    anns = _remap(r.annotations, rec, r.width, r.height, retain_rule=False)
    return r.replace(pixels=np.ascontiguousarray(px[::-1]), annotations=anns), rec


def scale(r: ImageRecord, factor: float) -> tuple[ImageRecord, TransformRecord]:
    """Zoom about the image centre, keeping the output size.

    Zooming in crops the centre of the upscaled raster; zooming out pads the
    downscaled raster with mid-gray. Boxes that keep less than a quarter of
    their area or end up thinner than 2 px are dropped.
    """
    if not 0.5 <= factor <= 2.0:
        raise ValidationError(f"scale factor {factor} outside [0.5, 2.0]")
    px = _pixels(r)
    w, h = r.width, r.height
    new_w, new_h = max(1, round(w * factor)), max(1, round(h * factor))
    dx, dy = (w - new_w) // 2, (h - new_h) // 2
    params = {"factor": float(factor), "sx": new_w / w, "sy": new_h / h, "dx": float(dx), "dy": float(dy)}
    rec = TransformRecord(TransformKind.SCALE, params, w, h)
    if new_w == w and new_h == h:
        return r.replace(pixels=px.copy()), rec
    canvas = np.full_like(px, PAD_VALUE)
    _paste(canvas, _resize(px, new_w, new_h), dx, dy)
    anns = _remap(r.annotations, rec, w, h, retain_rule=True)
    return r.replace(pixels=canvas, annotations=anns), rec


def crop(r: ImageRecord, x0: int, y0: int, x1: int, y1: int) -> tuple[ImageRecord, TransformRecord]:
    """Crop to the integer window [x0, x1) x [y0, y1); boxes must already fit."""
    px = _pixels(r)
    params = {"x0": float(x0), "y0": float(y0), "x1": float(x1), "y1": float(y1)}
    rec = TransformRecord(TransformKind.SAFE_CROP, params, r.width, r.height)
    out_w, out_h = x1 - x0, y1 - y0
    anns = _remap(r.annotations, rec, out_w, out_h, retain_rule=False)
    return (
        r.replace(
            width=out_w,
            height=out_h,
            pixels=np.ascontiguousarray(px[y0:y1, x0:x1]),
            annotations=anns,
        ),
        rec,
    )


def bbox_safe_crop(r: ImageRecord, rng: np.random.Generator) -> tuple[ImageRecord, TransformRecord]:
    """Random crop whose window contains the union of all boxes.

    The left/top edges are drawn uniformly from the integer slack before the
    union rectangle and the right/bottom edges from the slack after it. With
    no annotations the window is the whole image.
    """
    _pixels(r)
    if not r.annotations:
        return crop(r, 0, 0, r.width, r.height)
    ux0 = min(a.bbox.x_min for a in r.annotations)
    uy0 = min(a.bbox.y_min for a in r.annotations)
    ux1 = max(a.bbox.x_max for a in r.annotations)
    uy1 = max(a.bbox.y_max for a in r.annotations)
    x0 = int(rng.integers(0, math.floor(ux0) + 1))
    y0 = int(rng.integers(0, math.floor(uy0) + 1))
    x1 = int(rng.integers(math.ceil(ux1), r.width + 1))
    y1 = int(rng.integers(math.ceil(uy1), r.height + 1))
    return crop(r, x0, y0, x1, y1)


def mosaic(
    records: Sequence[ImageRecord],
    rng: np.random.Generator,
    pivot: tuple[int, int] | None = None,
    image_id: str | None = None,
) -> AugmentedRecord:
    """Tile four images around a pivot into one image the size of the first.

    The pivot is drawn uniformly (integer pixels) from the central
    [0.25, 0.75] square. Inputs fill the top-left, top-right, bottom-left and
    bottom-right quadrants in order, each stretched to its quadrant.
    """
    if len(records) != 4:
        raise ValidationError(f"mosaic needs 4 images, got {len(records)}")
    for r in records:
        _pixels(r)
    w, h = records[0].width, records[0].height
    if pivot is None:
        lo_x, hi_x = math.ceil(0.25 * w), math.floor(0.75 * w)
        lo_y, hi_y = math.ceil(0.25 * h), math.floor(0.75 * h)
        if lo_x > hi_x or lo_y > hi_y or lo_x == 0 or lo_y == 0:
            raise ValidationError(f"image {w}x{h} too small for mosaic")
        pivot = (int(rng.integers(lo_x, hi_x + 1)), int(rng.integers(lo_y, hi_y + 1)))
    px_, py_ = pivot
    if not (0 < px_ < w and 0 < py_ < h):
        raise ValidationError(f"pivot {pivot} outside image interior {w}x{h}")

    quadrants = [
        (0, 0, px_, py_),
        (px_, 0, w - px_, py_),
        (0, py_, px_, h - py_),
        (px_, py_, w - px_, h - py_),
    ]
    canvas = np.empty((h, w, 3), dtype=np.uint8)
    annotations: list[Annotation] = []
    provenance = []
    for slot, (r, (ox, oy, qw, qh)) in enumerate(zip(records, quadrants)):
        params = {
            "slot": float(slot),
            "pivot_x": float(px_),
            "pivot_y": float(py_),
            "sx": qw / r.width,
            "sy": qh / r.height,
            "dx": float(ox),
            "dy": float(oy),
            "out_width": float(w),
            "out_height": float(h),
        }
        rec = TransformRecord(TransformKind.MOSAIC, params, r.width, r.height)
        canvas[oy : oy + qh, ox : ox + qw] = _resize(r.pixels, qw, qh)
        quad = BBox(ox, oy, ox + qw, oy + qh)
        for ann in r.annotations:
            mapped = forward_box(ann.bbox, rec)
            kept = intersect(mapped, quad)
            if kept is None:
                continue
            if (
                area(kept) < MIN_RETAINED_FRACTION * area(mapped)
                or min(kept.width, kept.height) < MIN_SIDE_PX
            ):
                continue
            annotations.append(Annotation(kept, ann.label))
        provenance.append((r.image_id, rec))

    first = records[0]
    out = ImageRecord(
        image_id or f"{first.image_id}_mosaic",
        w,
        h,
        tuple(annotations),
        canvas,
        first.source,
    )
    return AugmentedRecord(out, tuple(provenance))


# ------------------------------------------------------- photometric ops


def invert(r: ImageRecord, constant: float = 255) -> tuple[ImageRecord, TransformRecord]:
    """Photometric negative ``v -> constant - v`` (saturating)."""
    px = _pixels(r)
    out = np.clip(float(constant) - px.astype(np.float64), 0, 255).astype(np.uint8)
    rec = TransformRecord(TransformKind.INVERT, {"constant": float(constant)}, r.width, r.height)
    return r.replace(pixels=out), rec


def mean_normalize(r: ImageRecord) -> tuple[ImageRecord, TransformRecord]:
    """Shift every channel so its mean sits at 128."""
    px = _pixels(r).astype(np.float64)
    means = px.reshape(-1, 3).mean(axis=0)
    out = _round_clip(px - means + 128.0)
    params = {f"mean_{i}": float(m) for i, m in enumerate(means)}
    return r.replace(pixels=out), TransformRecord(TransformKind.MEAN_NORM, params, r.width, r.height)


def gaussian_filter(r: ImageRecord, sigma: float = 1.0, ksize: int = 5) -> tuple[ImageRecord, TransformRecord]:
    k = _check_ksize(ksize)
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    out = cv2.GaussianBlur(
        _pixels(r), (k, k), sigmaX=float(sigma), sigmaY=float(sigma), borderType=cv2.BORDER_REPLICATE
    )
    rec = TransformRecord(TransformKind.GAUSSIAN, {"sigma": float(sigma), "ksize": float(k)}, r.width, r.height)
    return r.replace(pixels=out), rec


def hist_equalize(r: ImageRecord) -> tuple[ImageRecord, TransformRecord]:
    """Equalise the luma channel of a YCrCb decomposition."""
    ycc = cv2.cvtColor(_pixels(r), cv2.COLOR_RGB2YCrCb)
    ycc[..., 0] = cv2.equalizeHist(np.ascontiguousarray(ycc[..., 0]))
    out = cv2.cvtColor(ycc, cv2.COLOR_YCrCb2RGB)
    return r.replace(pixels=out), TransformRecord(TransformKind.HIST_EQ, {}, r.width, r.height)


def _contrast(values: np.ndarray, contrast: float, brightness: float = 0.0) -> np.ndarray:
    return _round_clip((values.astype(np.float64) - 128.0) * (1.0 + contrast) + 128.0 + brightness)


def hue_contrast(r: ImageRecord, hue: float = 0.0, contrast: float = 0.0) -> tuple[ImageRecord, TransformRecord]:
    """Rotate hue by ``hue`` degrees, then apply contrast about 128."""
    px = _pixels(r)
    if contrast <= -1.0:
        raise ValidationError(f"contrast must be > -1, got {contrast}")
    shift = round(hue / 2.0) % 180  # 8-bit HSV stores hue in 2-degree steps
    if shift:
        hsv = cv2.cvtColor(px, cv2.COLOR_RGB2HSV)
        hsv[..., 0] = ((hsv[..., 0].astype(np.int32) + shift) % 180).astype(np.uint8)
        px = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
    out = _contrast(px, contrast) if contrast else px.copy()
    rec = TransformRecord(TransformKind.HUE_CONTRAST, {"hue": float(hue), "contrast": float(contrast)}, r.width, r.height)
    return r.replace(pixels=out), rec


def median_blur(r: ImageRecord, ksize: int = 3) -> tuple[ImageRecord, TransformRecord]:
    k = _check_ksize(ksize)
    px = _pixels(r)
    out = cv2.medianBlur(px, k) if k > 1 else px.copy()
    rec = TransformRecord(TransformKind.MEDIAN_BLUR, {"ksize": float(k)}, r.width, r.height)
    return r.replace(pixels=out), rec


def brightness_contrast(
    r: ImageRecord, brightness: float = 0.0, contrast: float = 0.0
) -> tuple[ImageRecord, TransformRecord]:
    """``v -> clamp((v - 128) * (1 + contrast) + 128 + brightness)``."""
    if contrast <= -1.0:
        raise ValidationError(f"contrast must be > -1, got {contrast}")
    out = _contrast(_pixels(r), contrast, brightness)
    rec = TransformRecord(
        TransformKind.BRIGHTNESS_CONTRAST,
        {"brightness": float(brightness), "contrast": float(contrast)},
        r.width,
        r.height,
    )
    return r.replace(pixels=out), rec


# -------------------------------------------------------------- pipeline

# Allowed parameters per kind; False marks parameters that may not be ranges.
_PARAMS: dict[TransformKind, dict[str, bool]] = {
    TransformKind.HFLIP: {},
    TransformKind.VFLIP: {},
    TransformKind.SCALE: {"factor": True},
    TransformKind.INVERT: {"constant": True},
    TransformKind.SAFE_CROP: {},
    TransformKind.MOSAIC: {},
    TransformKind.MEAN_NORM: {},
    TransformKind.GAUSSIAN: {"sigma": True, "ksize": False},
    TransformKind.HIST_EQ: {},
    TransformKind.HUE_CONTRAST: {"hue": True, "contrast": True},
    TransformKind.MEDIAN_BLUR: {"ksize": False},
    TransformKind.BRIGHTNESS_CONTRAST: {"brightness": True, "contrast": True},
}


@dataclass(frozen=True)
class PipelineStep:
    """One pipeline entry.

    A parameter is either a number or a ``(low, high)`` range sampled
    uniformly each time the step fires.
    """

    kind: TransformKind
    params: Mapping[str, float | tuple[float, float]] = field(default_factory=dict)
    probability: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError(f"{self.kind.value}: probability {self.probability} outside [0, 1]")
        allowed = _PARAMS[self.kind]
        for name, value in self.params.items():
            if name not in allowed:
                raise ValidationError(f"{self.kind.value}: unknown parameter {name!r}")
            if isinstance(value, (tuple, list)):
                if not allowed[name]:
                    raise ValidationError(f"{self.kind.value}: {name} cannot be a range")
                if len(value) != 2 or not value[0] <= value[1]:
                    raise ValidationError(f"{self.kind.value}: bad range for {name}: {value}")
            elif not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValidationError(f"{self.kind.value}: {name} must be a number")
        if self.kind is TransformKind.SCALE:
            lo, hi = _bounds(self.params.get("factor", 1.0))
            if lo < 0.5 or hi > 2.0:
                raise ValidationError(f"scale: factor {self.params['factor']} outside [0.5, 2.0]")
        if "ksize" in self.params:
            _check_ksize(self.params["ksize"])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "params": {k: list(v) if isinstance(v, (tuple, list)) else v for k, v in self.params.items()},
            "probability": self.probability,
        }


def _bounds(value: float | Sequence[float]) -> tuple[float, float]:
    if isinstance(value, (tuple, list)):
        return float(value[0]), float(value[1])
    return float(value), float(value)


def parse_pipeline_spec(json_text: str | bytes) -> list[PipelineStep]:
    """Read a pipeline spec: a JSON array of ``{kind, params, probability}``."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from None
    if not isinstance(doc, list):
        raise ParseError("top level must be an array", "$")
    steps = []
    for i, entry in enumerate(doc):
        path = f"$[{i}]"
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ParseError("entry must be an object with a 'kind'", path)
        extra = entry.keys() - {"kind", "params", "probability"}
        if extra:
            raise ParseError(f"unexpected field(s) {sorted(extra)}", path)
        params = entry.get("params", {})
        if not isinstance(params, dict):
            raise ParseError("must be an object", f"{path}.params")
        prob = entry.get("probability", 1.0)
        if not isinstance(prob, (int, float)) or isinstance(prob, bool):
            raise ParseError("must be a number", f"{path}.probability")
        try:
            steps.append(
                PipelineStep(
                    TransformKind.parse(str(entry["kind"])),
                    {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()},
                    float(prob),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    return steps


def substream(seed: int, image_id: str, copy_index: int) -> np.random.Generator:
    """Independent generator keyed by (seed, image_id, copy_index)."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([seed, *words, copy_index]))


def _sample(params: Mapping, rng: np.random.Generator) -> dict[str, float]:
    out = {}
    for name in sorted(params):
        lo, hi = _bounds(params[name])
        out[name] = lo if lo == hi else float(rng.uniform(lo, hi))
    return out


def apply_step(
    record: ImageRecord,
    step: PipelineStep,
    rng: np.random.Generator,
    pool: Dataset | None = None,
) -> tuple[ImageRecord, list[tuple[str, TransformRecord]]]:
    """Apply one step unconditionally; ``pool`` supplies mosaic partners."""
    p = _sample(step.params, rng)
    k = step.kind
    if k is TransformKind.MOSAIC:
        if pool is None or len(pool) == 0:
            raise ValidationError("mosaic needs a partner pool")
        ids = sorted(pool.image_ids)
        partners = [pool[ids[int(i)]] for i in rng.integers(0, len(ids), size=3)]
        aug = mosaic([record, *partners], rng, image_id=record.image_id)
        return aug.image, list(aug.provenance)

    if k is TransformKind.HFLIP:
        out, rec = hflip(record)
    elif k is TransformKind.VFLIP:
        out, rec = vflip(record)
    elif k is TransformKind.SCALE:
        out, rec = scale(record, p.get("factor", 1.0))
    elif k is TransformKind.INVERT:
        out, rec = invert(record, p.get("constant", 255))
    elif k is TransformKind.SAFE_CROP:
        out, rec = bbox_safe_crop(record, rng)
    elif k is TransformKind.MEAN_NORM:
        out, rec = mean_normalize(record)
    elif k is TransformKind.GAUSSIAN:
        out, rec = gaussian_filter(record, p.get("sigma", 1.0), int(p.get("ksize", 5)))
    elif k is TransformKind.HIST_EQ:
        out, rec = hist_equalize(record)
    elif k is TransformKind.HUE_CONTRAST:
        out, rec = hue_contrast(record, p.get("hue", 0.0), p.get("contrast", 0.0))
    elif k is TransformKind.MEDIAN_BLUR:
        out, rec = median_blur(record, int(p.get("ksize", 3)))
    else:
        out, rec = brightness_contrast(record, p.get("brightness", 0.0), p.get("contrast", 0.0))
    return out, [(record.image_id, rec)]


def augment_one(
    record: ImageRecord,
    steps: Sequence[PipelineStep],
    seed: int,
    copy_index: int,
    pool: Dataset | None = None,
    image_id: str | None = None,
) -> AugmentedRecord:
    rng = substream(seed, record.image_id, copy_index)
    current = record
    provenance: list[tuple[str, TransformRecord]] = []
    for step in steps:
        # One draw per step whether or not it fires keeps later steps stable.
        if rng.random() < step.probability:
            current, prov = apply_step(current, step, rng, pool)
            provenance.extend(prov)
    return AugmentedRecord(current.replace(image_id=image_id or record.image_id), tuple(provenance))


def pipeline(
    dataset: Dataset,
    steps: Sequence[PipelineStep],
    seed: int,
    multiplier: int = 1,
    workers: int = 1,
) -> list[AugmentedRecord]:
    """Produce ``multiplier`` augmented copies of every image.

    With ``multiplier == 1`` outputs keep their source image_id; otherwise
    copy ``c`` of image ``x`` is named ``x_aug{c}``. Output order follows the
    dataset, then copy index, regardless of ``workers``.
    """
    if multiplier < 1:
        raise ValidationError(f"multiplier must be >= 1, got {multiplier}")
    for r in dataset:
        _pixels(r)
    tasks = [
        (rec, c, rec.image_id if multiplier == 1 else f"{rec.image_id}_aug{c}")
        for rec in dataset
        for c in range(multiplier)
    ]

    def run(task: tuple[ImageRecord, int, str]) -> AugmentedRecord:
        rec, c, new_id = task
        return augment_one(rec, steps, seed, c, dataset, new_id)

    if workers <= 1:
        return [run(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, tasks))


def synthetic_source(record: ImageRecord) -> ImageRecord:
    """Tag an externally generated image (e.g. GAN output) as synthetic."""
    return record.replace(source=Source.SYNTHETIC)
