"""Dataset directories on disk.

A dataset directory is flat: ``<image_id>.png|.jpg|.jpeg`` rasters beside
``<image_id>.xml`` (Pascal VOC) or ``<image_id>.txt`` (DarkNet) sidecars.
Annotation sets may also be a single ground-truth JSON file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import cv2
import numpy as np

from paveval.dataset import (
    Dataset,
    ImageRecord,
    parse_darknet,
    parse_ground_truth,
    parse_submission,
    parse_voc,
    write_darknet,
    write_ground_truth,
    write_voc,
)
from paveval.errors import ValidationError

IMAGE_EXTS = (".png", ".jpg", ".jpeg")
FORMATS = ("voc", "darknet", "submission")


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Load a PNG/JPEG file as an RGB uint8 array."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_EXTS:
        raise ValidationError(f"unsupported image type {path.suffix!r} ({path})")
    data = np.fromfile(path, dtype=np.uint8)
    bgr = cv2.imdecode(data, cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"cannot decode image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_image(path: str | os.PathLike, pixels: np.ndarray) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in IMAGE_EXTS:
        raise ValidationError(f"unsupported image type {ext!r} ({path})")
    ok, buf = cv2.imencode(ext, cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR))
    if not ok:
        raise OSError(f"cannot encode image {path}")
    path.write_bytes(buf.tobytes())


def _image_files(directory: Path) -> dict[str, Path]:
    found = {}
    for p in sorted(directory.iterdir()):
        if p.suffix.lower() in IMAGE_EXTS:
            found.setdefault(p.stem, p)
    return found


def detect_format(path: Path) -> str:
    if path.is_file():
        return "submission"
    if any(path.glob("*.xml")):
        return "voc"
    return "darknet"


def load_dataset(
    path: str | os.PathLike,
    fmt: str | None = None,
    size: tuple[int, int] | None = None,
    with_pixels: bool = False,
) -> Dataset:
    """Load annotations (and optionally rasters) from a directory or JSON file.

    DarkNet sidecars need image sizes: taken from the raster beside each
    sidecar, else from ``size``. Records are sorted by image_id.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file or directory: {path}")
    fmt = fmt or detect_format(path)
    if fmt not in FORMATS:
        raise ValidationError(f"unknown format {fmt!r}")

    if fmt == "submission":
        json_path = path / "annotations.json" if path.is_dir() else path
        images = _image_files(path) if path.is_dir() else {}
        sizes = {stem: _size_of(p) for stem, p in images.items()} or None
        dataset = _parse_gt_or_submission(json_path.read_bytes(), sizes)
        if size and not images:
            dataset = Dataset(r.replace(width=size[0], height=size[1]) for r in dataset)
        return _attach_pixels(dataset, images) if with_pixels else dataset.sorted()

    images = _image_files(path)
    records = []
    if fmt == "voc":
        for xml in sorted(path.glob("*.xml")):
            records.append(parse_voc(xml.read_text(encoding="utf-8"), xml.stem))
    else:
        for txt in sorted(path.glob("*.txt")):
            if txt.stem in images:
                w, h = _size_of(images[txt.stem])
            elif size:
                w, h = size
            else:
                raise ValidationError(f"{txt}: no image to take the size from; pass a size")
            records.append(parse_darknet(txt.read_text(encoding="utf-8"), w, h, txt.stem))
        # Images with no sidecar have no boxes.
        for stem, img in images.items():
            if not (path / f"{stem}.txt").exists():
                w, h = _size_of(img)
                records.append(ImageRecord(stem, w, h))
    dataset = Dataset(records)
    if with_pixels:
        return _attach_pixels(dataset, images)
    return dataset.sorted()


def _parse_gt_or_submission(text: bytes, sizes) -> Dataset:
    """Ground-truth JSON, or a submission whose scores are dropped after validation."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, list) and any(isinstance(e, dict) and "score" in e for e in doc):
        parse_submission(text)
        text = json.dumps([{k: v for k, v in e.items() if k != "score"} for e in doc])
    return parse_ground_truth(text, sizes)


def _size_of(image_path: Path) -> tuple[int, int]:
    h, w = read_image(image_path).shape[:2]
    return w, h


def _attach_pixels(dataset: Dataset, images: dict[str, Path]) -> Dataset:
    records = []
    for rec in dataset.sorted():
        if rec.image_id not in images:
            raise ValidationError(f"{rec.image_id}: no image file found")
        px = read_image(images[rec.image_id])
        if px.shape[:2] != (rec.height, rec.width):
            raise ValidationError(
                f"{rec.image_id}: image is {px.shape[1]}x{px.shape[0]}, "
                f"annotation says {rec.width}x{rec.height}"
            )
        records.append(rec.replace(pixels=px))
    return Dataset(records, dataset.classes)


def save_dataset(
    dataset: Dataset,
    path: str | os.PathLike,
    fmt: str,
    image_ext: str = ".png",
) -> None:
    """Write annotations (and rasters, where present) in canonical image_id order."""
    if fmt not in FORMATS:
        raise ValidationError(f"unknown format {fmt!r}")
    path = Path(path)
    if fmt == "submission" and path.suffix.lower() == ".json":
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(write_ground_truth(dataset.sorted()), encoding="utf-8")
        return
    path.mkdir(parents=True, exist_ok=True)
    ordered = dataset.sorted()
    if fmt == "submission":
        (path / "annotations.json").write_text(write_ground_truth(ordered), encoding="utf-8")
    for rec in ordered:
        if fmt == "voc":
            (path / f"{rec.image_id}.xml").write_text(write_voc(rec), encoding="utf-8")
        elif fmt == "darknet":
            (path / f"{rec.image_id}.txt").write_text(write_darknet(rec), encoding="utf-8")
        if rec.pixels is not None:
            write_image(path / f"{rec.image_id}{image_ext}", rec.pixels)
