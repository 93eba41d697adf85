import numpy as np
import pytest

from src.opad.data_model import Box, EntityAnnotation, Span
from src.opad.metrics import average_precision, box_iou_matrix, entity_f_score, geometry_iou, interpolated_ap
from tests.helpers import make_prediction

N_CLASSES = 3


def random_box(rng):
    x0, y0 = rng.uniform(0.0, 0.6, size=2)
    w, h = rng.uniform(0.1, 0.4, size=2)
    return Box(float(x0), float(y0), float(x0 + w), float(y0 + h))


def jittered(box, rng):
    dx0, dy0, dx1, dy1 = rng.normal(0.0, 0.04, size=4)
    x0, y0 = box.x0 + dx0, box.y0 + dy0
    return Box(float(x0), float(y0), float(max(box.x1 + dx1, x0 + 0.01)), float(max(box.y1 + dy1, y0 + 0.01)))


def oracle_ap(predictions, truth, n_classes):
    """
    Second implementation of the same greedy rule, not an assignment search

    Confidence-ranked predictions each claim the unmatched GT box of their
    class with the highest IoU ≥ 0.5. AP is the sum over hits of the best
    precision at or below their rank, divided by the GT count.
    """
    per_class = []
    for c in range(n_classes):
        gt = {s: [e.geometry.as_tuple() for e in ents if e.class_id == c] for s, ents in truth.items()}
        n_gt = sum(len(g) for g in gt.values())
        if n_gt == 0:
            continue
        ranked = sorted(((s, p) for s, preds in predictions.items() for p in preds if p.predicted_class == c),
                        key=lambda item: (-item[1].confidence, item[0], item[1].geometry.as_tuple()))
        used = {s: set() for s in gt}
        hits = []
        for s, p in ranked:
            hit = False
            if gt.get(s):
                iou = box_iou_matrix(np.array([p.geometry.as_tuple()]), np.array(gt[s]))[0]
                order = [j for j in np.argsort(-iou, kind="stable") if j not in used[s] and iou[j] >= 0.5]
                if order:
                    used[s].add(int(order[0]))
                    hit = True
            hits.append(hit)
        precision = np.cumsum(hits) / np.arange(1, len(hits) + 1) if hits else np.array([])
        total = sum(precision[k:].max() for k, hit in enumerate(hits) if hit)
        per_class.append(total / n_gt)
    return float(np.mean(per_class)) if per_class else 0.0


def test_average_precision_matches_oracle():
    rng = np.random.default_rng(42)
    for _ in range(200):
        truth, predictions = {}, {}
        for sample_id in range(int(rng.integers(1, 5))):
            entities = [EntityAnnotation(int(rng.integers(N_CLASSES)), random_box(rng))
                        for _ in range(int(rng.integers(0, 4)))]
            preds = []
            for entity in entities:
                if rng.random() < 0.8:
                    class_id = entity.class_id if rng.random() < 0.8 else int(rng.integers(N_CLASSES))
                    preds.append(make_prediction(jittered(entity.geometry, rng), class_id,
                                                 float(rng.uniform(0.3, 1.0)), N_CLASSES + 1))
            for _ in range(int(rng.integers(0, 3))):
                preds.append(make_prediction(random_box(rng), int(rng.integers(N_CLASSES)),
                                             float(rng.uniform(0.3, 1.0)), N_CLASSES + 1))
            truth[sample_id] = entities
            predictions[sample_id] = preds
        report = average_precision(predictions, truth, N_CLASSES)
        assert report.value == pytest.approx(oracle_ap(predictions, truth, N_CLASSES), abs=1e-9)


def test_ap_hand_computed():
    gt = {0: [EntityAnnotation(0, Box(0.0, 0.0, 0.2, 0.2)), EntityAnnotation(0, Box(0.5, 0.5, 0.7, 0.7))]}
    preds = {0: [make_prediction(Box(0.0, 0.0, 0.2, 0.2), 0, 0.9, 4),
                 make_prediction(Box(0.8, 0.0, 0.9, 0.1), 0, 0.8, 4),
                 make_prediction(Box(0.5, 0.5, 0.7, 0.7), 0, 0.7, 4)]}
    report = average_precision(preds, gt, N_CLASSES)
    # precisions 1, 1/2, 2/3 at the two hits
    assert report.value == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)
    assert np.isnan(report.per_class[1]) and np.isnan(report.per_class[2])


def test_ap_duplicate_detection_is_a_false_positive():
    box = Box(0.1, 0.1, 0.4, 0.4)
    gt = {0: [EntityAnnotation(1, box)]}
    preds = {0: [make_prediction(box, 1, 0.9, 4), make_prediction(box, 1, 0.8, 4)]}
    assert average_precision(preds, gt, N_CLASSES).value == pytest.approx(1.0)
    preds = {0: [make_prediction(box, 1, 0.8, 4), make_prediction(Box(0.6, 0.6, 0.7, 0.7), 1, 0.9, 4)]}
    assert average_precision(preds, gt, N_CLASSES).value == pytest.approx(0.5)


def test_ap_without_ground_truth_is_zero():
    preds = {0: [make_prediction(Box(0.1, 0.1, 0.4, 0.4), 0, 0.9, 4)]}
    assert average_precision(preds, {0: []}, N_CLASSES).value == 0.0
    assert np.isnan(interpolated_ap([], 0))
    assert interpolated_ap([], 3) == 0.0


def test_geometry_iou():
    assert geometry_iou(Box(0.0, 0.0, 0.5, 0.5), Box(0.25, 0.0, 0.75, 0.5)) == pytest.approx(1.0 / 3.0)
    assert geometry_iou(Box(0.0, 0.0, 0.1, 0.1), Box(0.5, 0.5, 0.6, 0.6)) == 0.0
    assert geometry_iou(Span(0, 4), Span(2, 6)) == pytest.approx(2.0 / 6.0)
    with pytest.raises(TypeError):
        geometry_iou(Span(0, 1), Box(0.0, 0.0, 0.1, 0.1))


def span_case(n_tp, n_fp, n_fn):
    """Disjoint spans: hits of class 0, spurious predictions of class 1, misses of class 2"""
    pred, gt = [], []
    for k in range(n_tp):
        hit = EntityAnnotation(0, Span(10 * k, 10 * k + 2))
        pred.append(hit)
        gt.append(hit)
    pred += [EntityAnnotation(1, Span(10 * k + 3, 10 * k + 5)) for k in range(n_fp)]
    gt += [EntityAnnotation(2, Span(10 * k + 6, 10 * k + 8)) for k in range(n_fn)]
    return {0: pred}, {0: gt}


@pytest.mark.parametrize("n_tp,n_fp,n_fn,expected", [
    (0, 0, 0, 0.0),
    (1, 0, 0, 1.0),
    (0, 1, 0, 0.0),
    (0, 0, 1, 0.0),
    (0, 2, 2, 0.0),
    (1, 1, 0, 2.0 / 3.0),
    (1, 0, 1, 2.0 / 3.0),
    (2, 1, 2, 4.0 / 7.0),
    (3, 0, 3, 2.0 / 3.0),
    (1, 2, 0, 0.5),
    (1, 3, 1, 1.0 / 3.0),
    (2, 3, 3, 0.4),
    (3, 1, 3, 0.6),
    (4, 0, 1, 8.0 / 9.0),
    (5, 5, 5, 0.5),
    (1, 1, 2, 0.4),
])
def test_entity_f_score_counts(n_tp, n_fp, n_fn, expected):
    pred, gt = span_case(n_tp, n_fp, n_fn)
    assert entity_f_score(pred, gt, N_CLASSES).value == pytest.approx(expected)


def test_f_score_needs_exact_class_and_boundaries():
    gt = {0: [EntityAnnotation(0, Span(0, 2))]}
    assert entity_f_score({0: [EntityAnnotation(1, Span(0, 2))]}, gt, N_CLASSES).value == 0.0
    assert entity_f_score({0: [EntityAnnotation(0, Span(0, 3))]}, gt, N_CLASSES).value == 0.0


def test_f_score_matches_within_sample_only():
    a, b = EntityAnnotation(0, Span(0, 2)), EntityAnnotation(1, Span(4, 6))
    report = entity_f_score({0: [a], 1: [b]}, {0: [a], 2: [b]}, N_CLASSES)
    assert report.value == pytest.approx(0.5)


def test_f_score_duplicates_collapse():
    a = EntityAnnotation(0, Span(0, 2))
    report = entity_f_score({0: [a, a]}, {0: [a]}, N_CLASSES)
    assert report.value == pytest.approx(1.0)
    assert report.per_class[0] == pytest.approx(1.0)
    assert np.isnan(report.per_class[2])
