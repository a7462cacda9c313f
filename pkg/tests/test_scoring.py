import json
import random

import numpy as np
import pytest

from helpers import random_box, random_dataset, random_label
from oracles import brute_force_match, f1_from_counts, mean_f1_oracle
from paveval.dataset import Annotation, Dataset, Detection, DistressClass, ImageRecord, dataset_as_predictions
from paveval.errors import ValidationError
from paveval.geometry import BBox
from paveval.scoring import (
    NONE_INDEX,
    annotation_confusion,
    evaluate,
    f1,
    format_confusion,
    match,
    precision,
    recall,
)

T = DistressClass.TRANSVERSE
L = DistressClass.LONGITUDINAL
A = DistressClass.ALLIGATOR
B = DistressClass.BLOCK
GT_BOX = BBox(0, 0, 10, 10)


def test_match_single_pair_above_threshold():
    result = match([Annotation(GT_BOX, T)], [Detection(BBox(0, 0, 10, 6), T, 0.9)], 0.5)
    assert result.counts(T) == (1, 0, 0)
    assert result.per_class[T].pairs[0][2] == pytest.approx(0.6)


def test_match_below_threshold():
    result = match([Annotation(GT_BOX, T)], [Detection(BBox(0, 0, 10, 4), T, 0.9)], 0.5)
    assert result.counts(T) == (0, 1, 1)


def test_match_requires_same_label():
    result = match([Annotation(GT_BOX, A)], [Detection(BBox(0, 0, 10, 9), B, 0.9)], 0.5)
    assert result.counts(A) == (0, 0, 1)
    assert result.counts(B) == (0, 1, 0)


def test_match_exact_half_is_rejected():
    result = match([Annotation(GT_BOX, T)], [Detection(BBox(0, 0, 10, 5), T, 0.9)], 0.5)
    assert result.counts(T) == (0, 1, 1)


def test_match_higher_confidence_claims_first():
    gts = [Annotation(GT_BOX, T)]
    dets = [Detection(BBox(0, 0, 10, 9), T, 0.3), Detection(BBox(0, 0, 10, 7), T, 0.8)]
    result = match(gts, dets)
    assert [(g, d) for g, d, _ in result.per_class[T].pairs] == [(0, 1)]
    assert result.per_class[T].false_positives == [0]


def test_match_rejects_threshold_outside_unit_interval():
    with pytest.raises(ValidationError):
        match([], [], 1.0)


def test_precision_recall_f1_example():
    p, r = precision(3, 1), recall(3, 2)
    assert p == 0.75
    assert r == 0.6
    assert f1(p, r) == pytest.approx(0.9 / 1.35, abs=1e-12)
    assert f1(1.0, 1.0) == 1.0


def test_degenerate_denominators():
    assert precision(0, 0) == 0.0
    assert recall(0, 0) == 0.0
    assert f1(0.0, 0.0) == 0.0


def test_f1_bounds(rng):
    for _ in range(2000):
        tp, fp, fn = rng.randint(0, 50), rng.randint(0, 50), rng.randint(0, 50)
        p, r = precision(tp, fp), recall(tp, fn)
        v = f1(p, r)
        assert v <= 2 * p + 1e-15
        assert v <= 2 * r + 1e-15
        assert v <= max(p, r) + 1e-15


def _record(image_id, anns, size=(100, 100)):
    return ImageRecord(image_id, size[0], size[1], tuple(anns))


def test_evaluate_perfect_predictions():
    ds = random_dataset(random.Random(3), 6)
    report = evaluate(ds, dataset_as_predictions(ds))
    assert report.mean_f1 == 1.0
    assert all(report.per_class[c].f1 == 1.0 for c in report.classes_evaluated)


def test_evaluate_empty_predictions():
    ds = random_dataset(random.Random(4), 6)
    assert ds.box_count() > 0
    assert evaluate(ds, {}).mean_f1 == 0.0


def test_evaluate_two_image_hand_example():
    gt = Dataset(
        [
            _record("a", [Annotation(GT_BOX, L), Annotation(BBox(50, 50, 60, 60), T)]),
            _record("b", [Annotation(BBox(20, 20, 30, 30), L)]),
        ]
    )
    preds = {
        "a": [Detection(BBox(0, 0, 10, 7), L, 0.9)],
        "b": [Detection(BBox(20, 20, 30, 28), L, 0.8)],
    }
    report = evaluate(gt, preds)
    assert report.per_class[L].f1 == 1.0
    assert report.per_class[T].f1 == 0.0
    assert report.classes_evaluated == [T, L]
    assert report.mean_f1 == 0.5


def test_evaluate_unknown_ids_listed():
    gt = Dataset([_record("a", [])])
    with pytest.raises(ValidationError, match="ghost"):
        evaluate(gt, {"ghost": []})


def test_evaluate_no_boxes_anywhere():
    assert evaluate(Dataset([_record("a", [])]), {}).mean_f1 == 0.0


def test_evaluate_conservation(rng):
    for _ in range(30):
        gt = random_dataset(rng, 4)
        preds = {
            r.image_id: [Detection(random_box(rng, 200, 160), random_label(rng), rng.random()) for _ in range(rng.randint(0, 6))]
            for r in gt
        }
        report = evaluate(gt, preds)
        for c in DistressClass:
            n_gt = sum(1 for r in gt for a in r.annotations if a.label == c)
            n_det = sum(1 for ds in preds.values() for d in ds if d.label == c)
            s = report.per_class[c]
            assert s.tp + s.fn == n_gt
            assert s.tp + s.fp == n_det
        assert 0.0 <= report.mean_f1 <= 1.0
        # confusion rows/columns hold the same totals, label-agnostically
        assert report.confusion[:NONE_INDEX].sum() == gt.box_count()
        assert report.confusion[:, :NONE_INDEX].sum() == sum(len(v) for v in preds.values())


def _scaled(gt, preds, k):
    def s(b):
        return BBox(b.x_min * k, b.y_min * k, b.x_max * k, b.y_max * k)

    gt2 = Dataset(
        ImageRecord(r.image_id, r.width * k, r.height * k, tuple(Annotation(s(a.bbox), a.label) for a in r.annotations))
        for r in gt
    )
    preds2 = {i: [Detection(s(d.bbox), d.label, d.confidence) for d in v] for i, v in preds.items()}
    return gt2, preds2


def test_evaluate_scale_invariant(rng):
    for _ in range(20):
        gt = random_dataset(rng, 3)
        preds = {r.image_id: [Detection(random_box(rng, 200, 160), random_label(rng), rng.random()) for _ in range(5)] for r in gt}
        # near-duplicates of GT so some matches happen
        for r in gt:
            for a in r.annotations:
                b = a.bbox
                preds[r.image_id].append(Detection(BBox(b.x_min, b.y_min, b.x_max, b.y_min + b.height * 0.8), a.label, rng.random()))
        base = evaluate(gt, preds)
        other = evaluate(*_scaled(gt, preds, 4))
        for c in DistressClass:
            s0, s1 = base.per_class[c], other.per_class[c]
            assert (s0.tp, s0.fp, s0.fn) == (s1.tp, s1.fp, s1.fn)
        assert base.mean_f1 == other.mean_f1


def test_evaluate_image_permutation_invariant(rng):
    gt = random_dataset(rng, 6)
    preds = {r.image_id: [Detection(random_box(rng, 200, 160), random_label(rng), rng.random()) for _ in range(6)] for r in gt}
    a = evaluate(gt, preds)
    b = evaluate(Dataset(reversed(list(gt))), dict(reversed(list(preds.items()))))
    assert a.to_dict() == b.to_dict()


def test_matching_agrees_with_brute_force(rng):
    for _ in range(300):
        n_gt, n_det = rng.randint(0, 6), rng.randint(0, 6)
        gts = [(random_box(rng, 60, 60, 5), rng.randrange(3)) for _ in range(n_gt)]
        dets = [(random_box(rng, 60, 60, 5), rng.randrange(3), rng.random()) for _ in range(n_det)]
        result = match(
            [Annotation(b, DistressClass(c)) for b, c in gts],
            [Detection(b, DistressClass(c), s) for b, c, s in dets],
        )
        pairs = sorted((g, d) for m in result.per_class.values() for g, d, _ in m.pairs)
        fps = sorted(d for m in result.per_class.values() for d in m.false_positives)
        fns = sorted(g for m in result.per_class.values() for g in m.false_negatives)
        ogts = [(b.as_tuple(), c) for b, c in gts]
        odets = [(b.as_tuple(), c, s) for b, c, s in dets]
        assert (pairs, fps, fns) == brute_force_match(ogts, odets, 0.5)


def test_mean_f1_agrees_with_oracle(rng):
    for _ in range(50):
        gt = random_dataset(rng, 3, size=(80, 80))
        preds = {}
        images = []
        for r in gt:
            dets = [Detection(random_box(rng, 80, 80, 5), random_label(rng), rng.random()) for _ in range(rng.randint(0, 6))]
            preds[r.image_id] = dets
            images.append(
                (
                    [(a.bbox.as_tuple(), int(a.label)) for a in r.annotations],
                    [(d.bbox.as_tuple(), int(d.label), d.confidence) for d in dets],
                )
            )
        assert evaluate(gt, preds).mean_f1 == pytest.approx(mean_f1_oracle(images), abs=1e-12)


def test_report_serialisation():
    ds = random_dataset(random.Random(9), 3)
    report = evaluate(ds, dataset_as_predictions(ds))
    doc = json.loads(report.to_json())
    assert doc["mean_f1"] == 1.0
    assert len(doc["confusion"]["matrix"]) == 8
    table = report.to_table()
    assert "mean" in table and "Alligator" in table


def test_f1_oracle_matches_counts(rng):
    for _ in range(500):
        tp, fp, fn = rng.randint(0, 30), rng.randint(0, 30), rng.randint(0, 30)
        assert f1(precision(tp, fp), recall(tp, fn)) == f1_from_counts(tp, fp, fn)


# ------------------------------------------------------------- confusion


def _alligator_block_fixture():
    ref = Dataset(
        [
            _record("a", [Annotation(GT_BOX, A), Annotation(BBox(30, 30, 50, 50), L)]),
            _record("b", [Annotation(BBox(5, 5, 25, 40), A)]),
        ]
    )
    cand = Dataset(
        ImageRecord(r.image_id, r.width, r.height, tuple(Annotation(a.bbox, B if a.label == A else a.label) for a in r.annotations))
        for r in ref
    )
    return ref, cand


def test_confusion_identity():
    ds = random_dataset(random.Random(11), 5)
    result = annotation_confusion(ds, ds)
    assert result.accuracy == 100.0
    assert np.count_nonzero(result.matrix - np.diag(np.diag(result.matrix))) == 0


def test_confusion_alligator_to_block():
    ref, cand = _alligator_block_fixture()
    result = annotation_confusion(ref, cand)
    assert result.matrix[A, B] == 2
    assert result.matrix[A].sum() == 2
    assert result.matrix[L, L] == 1
    assert result.accuracy == pytest.approx(100 / 3)


def test_confusion_empty_candidate():
    ref, _ = _alligator_block_fixture()
    empty = Dataset(ImageRecord(r.image_id, r.width, r.height) for r in ref)
    result = annotation_confusion(ref, empty)
    assert result.matrix[:, NONE_INDEX].sum() == 3
    assert result.accuracy == 0.0


def test_confusion_id_mismatch():
    ref, _ = _alligator_block_fixture()
    with pytest.raises(ValidationError):
        annotation_confusion(ref, Dataset([_record("a", [])]))


def test_format_confusion_labels():
    ref, cand = _alligator_block_fixture()
    text = format_confusion(annotation_confusion(ref, cand).matrix)
    assert text.splitlines()[0].split()[-1] == "none"
