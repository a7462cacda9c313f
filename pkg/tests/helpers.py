"""Random fixture builders shared by the test modules."""

from __future__ import annotations

import random

import numpy as np

from paveval.dataset import Annotation, Dataset, Detection, DistressClass, ImageRecord
from paveval.geometry import BBox


def random_box(rng: random.Random, width: float = 200, height: float = 200, min_side: float = 1.0) -> BBox:
    w = rng.uniform(min_side, width / 2)
    h = rng.uniform(min_side, height / 2)
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return BBox(x, y, x + w, y + h)


def random_int_box(rng: random.Random, width: int, height: int, min_side: int = 2) -> BBox:
    w = rng.randint(min_side, max(min_side, width // 2))
    h = rng.randint(min_side, max(min_side, height // 2))
    x = rng.randint(0, width - w)
    y = rng.randint(0, height - h)
    return BBox(x, y, x + w, y + h)


def random_label(rng: random.Random) -> DistressClass:
    return DistressClass(rng.randrange(7))


def random_dataset(rng: random.Random, n_images: int = 5, max_boxes: int = 6, size=(200, 160)) -> Dataset:
    records = []
    for i in range(n_images):
        anns = tuple(
            Annotation(random_box(rng, *size), random_label(rng)) for _ in range(rng.randint(0, max_boxes))
        )
        records.append(ImageRecord(f"img{i:03d}", size[0], size[1], anns))
    return Dataset(records)


def random_detections(rng: random.Random, n: int, width=200, height=200, labels=None) -> list[Detection]:
    dets = []
    for _ in range(n):
        label = rng.choice(labels) if labels else random_label(rng)
        dets.append(Detection(random_box(rng, width, height), label, rng.random()))
    return dets


def random_raster(np_rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    return np_rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
