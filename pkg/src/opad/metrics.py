"""
Evaluation metrics: per-class average precision for box predictions and
micro entity F1 for span predictions.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from .data_model import Box, EntityAnnotation, Geometry, Prediction, Span

logger = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5

Entity = Union[EntityAnnotation, Prediction]


@dataclass(frozen=True, eq=False)
class MetricReport:
    """
    A metric value plus its per-class breakdown

    ``AP`` is the mean of ``per_class`` over classes with at least one ground
    truth instance (NaN entries excluded); ``Fscore`` is micro F1 over all
    entities, with ``per_class`` holding per-class F1 for reference.
    """
    value: float
    kind: str
    per_class: np.ndarray


def geometry_iou(a: Geometry, b: Geometry) -> float:
    """IoU of two boxes (area) or two spans (token count)"""
    if isinstance(a, Box) and isinstance(b, Box):
        inter_w = min(a.x1, b.x1) - max(a.x0, b.x0)
        inter_h = min(a.y1, b.y1) - max(a.y0, b.y0)
        if inter_w <= 0 or inter_h <= 0:
            return 0.0
        inter = inter_w * inter_h
        return inter / (a.area + b.area - inter)
    if isinstance(a, Span) and isinstance(b, Span):
        inter = min(a.end, b.end) - max(a.start, b.start)
        if inter <= 0:
            return 0.0
        return inter / ((a.end - a.start) + (b.end - b.start) - inter)
    raise TypeError(f"Cannot compare {type(a).__name__} with {type(b).__name__}")


def box_iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (n, 4) and (m, 4) box arrays"""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    x0 = np.maximum(boxes_a[:, None, 0], boxes_b[None, :, 0])
    y0 = np.maximum(boxes_a[:, None, 1], boxes_b[None, :, 1])
    x1 = np.minimum(boxes_a[:, None, 2], boxes_b[None, :, 2])
    y1 = np.minimum(boxes_a[:, None, 3], boxes_b[None, :, 3])
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def entity_class(entity: Entity) -> int:
    if isinstance(entity, Prediction):
        return entity.predicted_class
    return entity.class_id


def interpolated_ap(tp_flags: Sequence[bool], n_gt: int) -> float:
    """
    All-point interpolated AP of a ranked list of hit/miss flags

    Args:
        tp_flags: True for a matched prediction, in ranking order
        n_gt: Number of ground-truth instances of the class
    """
    if n_gt == 0:
        return float('nan')
    flags = np.asarray(tp_flags, dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def _ranking_key(sample_id: int, prediction: Prediction) -> Tuple:
    return (-prediction.confidence, sample_id, prediction.geometry.as_tuple())


def average_precision(predictions_by_sample: Dict[int, Sequence[Prediction]],
                      ground_truth: Dict[int, Sequence[EntityAnnotation]],
                      n_classes: int, iou_threshold: float = IOU_THRESHOLD) -> MetricReport:
    """
    Macro-averaged all-point AP over classes with ground truth

    Predictions are ranked per class by confidence (ties: sample id, then
    geometry) and greedily matched to the highest-IoU unmatched ground truth
    of the same class and sample with IoU ≥ ``iou_threshold``.

    Args:
        predictions_by_sample: Predictions keyed by sample id
        ground_truth: Reference entities keyed by sample id
        n_classes: Number of entity classes C
        iou_threshold: Minimum IoU for a match

    Returns:
        MetricReport of kind ``AP``
    """
    per_class = np.full(n_classes, np.nan)
    for class_id in range(n_classes):
        gt_by_sample: Dict[int, List[Geometry]] = {}
        for sample_id, entities in ground_truth.items():
            geoms = [e.geometry for e in entities if e.class_id == class_id]
            if geoms:
                gt_by_sample[sample_id] = geoms
        n_gt = sum(len(g) for g in gt_by_sample.values())
        if n_gt == 0:
            continue

        ranked = sorted(
            ((sample_id, p) for sample_id, preds in predictions_by_sample.items()
             for p in preds if p.predicted_class == class_id),
            key=lambda item: _ranking_key(*item),
        )
        matched = {sample_id: np.zeros(len(g), dtype=bool) for sample_id, g in gt_by_sample.items()}
        flags = []
        for sample_id, prediction in ranked:
            hit = False
            if sample_id in gt_by_sample:
                best_iou, best_j = iou_threshold, -1
                for j, geometry in enumerate(gt_by_sample[sample_id]):
                    if matched[sample_id][j]:
                        continue
                    iou = geometry_iou(prediction.geometry, geometry)
                    if iou >= best_iou and (best_j < 0 or iou > best_iou):
                        best_iou, best_j = iou, j
                if best_j >= 0:
                    matched[sample_id][best_j] = True
                    hit = True
            flags.append(hit)
        per_class[class_id] = interpolated_ap(flags, n_gt)

    value = float(np.nanmean(per_class)) if np.any(~np.isnan(per_class)) else 0.0
    return MetricReport(value=value, kind="AP", per_class=per_class)


def _span_keys(entities: Iterable[Entity]) -> set:
    return {(entity_class(e), e.geometry.as_tuple()) for e in entities}


def _f1(tp: int, n_pred: int, n_gt: int) -> float:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def entity_f_score(predicted_spans: Dict[int, Sequence[Entity]],
                   gt_spans: Dict[int, Sequence[EntityAnnotation]],
                   n_classes: int) -> MetricReport:
    """
    Micro F1 over exact (span, class) matches

    Precision is 0 when nothing is predicted and recall is 0 when there is no
    ground truth, so an empty predictor scores 0.
    """
    tp = n_pred = n_gt = 0
    class_counts = np.zeros((n_classes, 3), dtype=np.int64)
    for sample_id in sorted(set(predicted_spans) | set(gt_spans)):
        pred = _span_keys(predicted_spans.get(sample_id, ()))
        gt = _span_keys(gt_spans.get(sample_id, ()))
        hits = pred & gt
        tp += len(hits)
        n_pred += len(pred)
        n_gt += len(gt)
        for keys, column in ((hits, 0), (pred, 1), (gt, 2)):
            for class_id, _ in keys:
                if 0 <= class_id < n_classes:
                    class_counts[class_id, column] += 1

    per_class = np.array([
        _f1(*class_counts[c]) if class_counts[c, 1] or class_counts[c, 2] else np.nan
        for c in range(n_classes)
    ], dtype=np.float64)
    return MetricReport(value=_f1(tp, n_pred, n_gt), kind="Fscore", per_class=per_class)
