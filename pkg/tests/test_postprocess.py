import json

import numpy as np
import pytest

from helpers import random_box, random_detections, random_int_box, random_label, random_raster
from paveval.augment import TransformKind, TransformRecord, hflip, mosaic, scale
from paveval.dataset import Annotation, Detection, DistressClass, ImageRecord
from paveval.errors import ParseError, ValidationError
from paveval.geometry import BBox, iou
from paveval.postprocess import (
    DEFAULT_CONF,
    DEFAULT_NMS_IOU,
    TtaBundle,
    apply_chain,
    confidence_filter,
    emit_tta_copies,
    forward_map_box,
    fuse_predictions,
    inverse_map,
    inverse_map_box,
    nms,
    parse_tta_manifest,
    standard_tta_set,
    tta_fuse,
    write_tta_manifest,
)

B = DistressClass.BLOCK
S = DistressClass.SEALING


def _det(conf, box=(0, 0, 10, 10), label=B):
    return Detection(BBox(*box), label, conf)


def test_defaults():
    assert (DEFAULT_CONF, DEFAULT_NMS_IOU) == (0.25, 0.45)


def test_confidence_filter_examples(rng):
    dets = random_detections(rng, 20)
    assert confidence_filter(dets, 0.0) == dets
    top = [_det(1.0), _det(0.99)]
    assert confidence_filter(top, 1.0) == [top[0]]
    three = [_det(0.9), _det(0.3), _det(0.5)]
    assert [d.confidence for d in confidence_filter(three, 0.5)] == [0.9, 0.5]


def test_nms_examples():
    one = [_det(0.4)]
    assert nms(one, 0.45) == one
    assert nms([_det(0.8), _det(0.9)], 0.45) == [_det(0.9)]
    both = nms([_det(0.9, label=B), _det(0.8, label=S)], 0.45)
    assert len(both) == 2


def test_nms_keeps_boxes_below_threshold():
    a = _det(0.9, (0, 0, 10, 10))
    b = _det(0.8, (0, 0, 10, 4))  # IoU 0.4
    c = _det(0.7, (0, 0, 10, 5))  # IoU 0.5 with a
    assert nms([a, b, c], 0.45) == [a, b]


def test_nms_rejects_bad_threshold():
    with pytest.raises(ValidationError):
        nms([_det(0.5)], 0.0)


def test_nms_properties(rng):
    for _ in range(300):
        dets = random_detections(rng, rng.randint(0, 25), 100, 100, labels=[B, S])
        thr = rng.choice([0.3, 0.45, 0.6])
        kept = nms(dets, thr)
        assert all(k in dets for k in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                if a.label == b.label:
                    assert iou(a.bbox, b.bbox) < thr
        assert nms(kept, thr) == kept


def test_inverse_map_identity_chain():
    dets = [_det(0.5, (1, 2, 3, 4))]
    assert inverse_map(dets, ()) == dets


def test_inverse_map_hflip_example():
    rec = TransformRecord(TransformKind.HFLIP, {}, 100, 100)
    out = inverse_map([_det(0.5, (70, 20, 90, 40))], rec)
    assert out[0].bbox == BBox(10, 20, 30, 40)


def test_inverse_map_crop_example():
    rec = TransformRecord(TransformKind.SAFE_CROP, {"x0": 15, "y0": 10, "x1": 60, "y1": 50}, 100, 100)
    assert inverse_map([_det(0.5, (0, 0, 5, 5))], rec)[0].bbox == BBox(15, 10, 20, 15)


def test_inverse_map_rejects_mosaic():
    px = np.zeros((40, 40, 3), np.uint8)
    r = ImageRecord("m", 40, 40, (), px)
    rec = mosaic([r] * 4, np.random.default_rng(0)).provenance[0][1]
    with pytest.raises(ValidationError):
        inverse_map([_det(0.5)], rec)
    with pytest.raises(ValidationError):
        TtaBundle([((rec,), [])])


def test_inverse_map_clips_to_source():
    px = np.zeros((100, 100, 3), np.uint8)
    _, rec = scale(ImageRecord("s", 100, 100, (), px), 0.5)
    out = inverse_map([_det(0.5, (0, 0, 50, 50))], rec)
    assert out[0].bbox == BBox(0, 0, 50, 50)


def _chains(np_rng, rng, w=120, h=90):
    anns = tuple(Annotation(random_int_box(rng, w, h), random_label(rng)) for _ in range(3))
    r = ImageRecord("c", w, h, anns, random_raster(np_rng, w, h))
    out = []
    for kinds in standard_tta_set():
        out.append(apply_chain(r, kinds, np.random.default_rng(rng.randrange(1000)))[1])
    out.append((scale(r, rng.uniform(0.5, 2.0))[1],))
    return out


def test_forward_inverse_round_trip(np_rng, rng):
    for _ in range(50):
        for chain in _chains(np_rng, rng):
            b = random_box(rng, 120, 90)
            back = inverse_map_box(forward_map_box(b, chain), chain)
            assert np.allclose(back.as_tuple(), b.as_tuple(), rtol=0, atol=1e-9)


def test_standard_set_shape():
    kinds = standard_tta_set()
    assert len(kinds) == 10
    assert kinds[0] == ()
    assert kinds[3] == (TransformKind.HFLIP, TransformKind.VFLIP)
    assert sum(k == (TransformKind.SAFE_CROP,) for k in kinds) == 3


def test_tta_fuse_identity_reduction(rng):
    for _ in range(100):
        dets = random_detections(rng, rng.randint(0, 20), 100, 100)
        assert tta_fuse(TtaBundle([((), dets)]), 0.3, 0.45) == nms(confidence_filter(dets, 0.3), 0.45)


def test_tta_fuse_collapses_mirrored_duplicates(image):
    dets = [Detection(a.bbox, a.label, 0.8) for a in image.annotations]
    flipped, rec = hflip(image)
    mirrored = [Detection(a.bbox, a.label, 0.7) for a in flipped.annotations]
    fused = tta_fuse(TtaBundle([((), dets), ((rec,), mirrored)]))
    assert sorted(d.bbox.as_tuple() for d in fused) == sorted(a.bbox.as_tuple() for a in image.annotations)
    assert all(d.confidence == 0.8 for d in fused)


def test_tta_fuse_empty():
    rec = TransformRecord(TransformKind.VFLIP, {}, 10, 10)
    assert tta_fuse(TtaBundle([((), []), ((rec,), [])])) == []


def test_emit_copies_and_manifest(image):
    copies = emit_tta_copies(image, seed=7)
    assert [c.copy_id for c in copies] == [f"sample_tta{i}" for i in range(10)]
    assert np.array_equal(copies[0].image.pixels, image.pixels)
    assert np.array_equal(copies[1].image.pixels, image.pixels[:, ::-1])
    assert np.array_equal(copies[4].image.pixels, 255 - image.pixels)
    again = emit_tta_copies(image, seed=7)
    assert all(np.array_equal(a.image.pixels, b.image.pixels) for a, b in zip(copies, again))
    manifest = parse_tta_manifest(write_tta_manifest(copies))
    assert manifest == [(c.copy_id, c.source_id, c.chain) for c in copies]


def test_manifest_errors():
    with pytest.raises(ParseError):
        parse_tta_manifest("[]")
    with pytest.raises(ParseError, match=r"copies\[0\]"):
        parse_tta_manifest(json.dumps({"copies": [{"copy_id": "a"}]}))


def test_fuse_predictions_recovers_source_boxes(image):
    copies = emit_tta_copies(image, seed=3)
    manifest = parse_tta_manifest(write_tta_manifest(copies))
    preds = {c.copy_id: [Detection(a.bbox, a.label, 0.9) for a in c.image.annotations] for c in copies}
    fused = fuse_predictions(manifest, preds)
    assert list(fused) == ["sample"]
    got = sorted((d.bbox.as_tuple(), d.label) for d in fused["sample"])
    assert got == sorted((a.bbox.as_tuple(), a.label) for a in image.annotations)


def test_fuse_predictions_unknown_copy(image):
    manifest = parse_tta_manifest(write_tta_manifest(emit_tta_copies(image, seed=3)))
    with pytest.raises(ValidationError, match="ghost"):
        fuse_predictions(manifest, {"ghost": []})
