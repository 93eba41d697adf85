"""
Simulated annotator for strong and weak labelling, with the annotation-time ledger.

The oracle is perfect: after correction the label set of a sample equals its
ground truth, whatever Θ predicted.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data_model import (AnnotationState, DataPools, EntityAnnotation, LabelKind, Prediction, Sample,
                         TaskKind)
from .errors import ConfigurationError, IntegrityError
from .metrics import MetricReport, average_precision, entity_f_score, geometry_iou
from .utils import save_results_csv

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
VERIFY_IOU = 0.5
LEDGER_COLUMNS = ["cycle", "sample_id", "action", "seconds"]


@dataclass(frozen=True)
class CostModel:
    """Seconds to draw one entity from scratch and to verify one shown prediction"""
    draw: int
    verify: int

    def __post_init__(self):
        if self.draw <= 0 or self.verify <= 0:
            raise ConfigurationError(f"Annotation times must be positive, got {self}")

    @classmethod
    def for_task(cls, task: TaskKind) -> "CostModel":
        # box: draw 15 s / verify 5 s; span: mark 4 s / verify 2 s
        if TaskKind(task) == TaskKind.DETECTION:
            return cls(draw=15, verify=5)
        return cls(draw=4, verify=2)


@dataclass(frozen=True)
class LedgerEntry:
    cycle: int
    sample_id: int
    action: str
    seconds: int


class CostLedger:
    """Append-only record of charged annotation actions"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.entries: List[LedgerEntry] = []

    @property
    def total_seconds(self) -> int:
        return sum(e.seconds for e in self.entries)

    def record(self, cycle: int, sample_id: int, action: str, seconds: int):
        if seconds:
            self.entries.append(LedgerEntry(int(cycle), int(sample_id), action, int(seconds)))

    def seconds_for(self, cycle: int) -> int:
        return sum(e.seconds for e in self.entries if e.cycle == cycle)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(e) for e in self.entries], columns=LEDGER_COLUMNS)

    def to_csv(self, path: str) -> str:
        return save_results_csv(self.to_frame(), path)


@dataclass
class FeedbackOutcome:
    """
    Result of showing Θ's confident predictions for one sample

    ``verified_correct`` and ``rejected`` partition ``shown``; ``annotations``
    is the corrected label set (verified plus ``added_strong``).
    """
    sample_id: int
    shown: List[Prediction]
    verified_correct: List[Prediction]
    rejected: List[Prediction]
    added_strong: List[EntityAnnotation]
    annotations: List[EntityAnnotation]
    ground_truth: List[EntityAnnotation]
    ap_before: float = 0.0
    ap_after: float = 0.0


def label_predictions(annotations: Sequence[EntityAnnotation], n_outputs: int) -> List[Prediction]:
    """Corrected labels as confidence-1 predictions"""
    predictions = []
    for annotation in annotations:
        scores = np.zeros(n_outputs)
        scores[annotation.class_id] = 1.0
        predictions.append(Prediction.from_scores(annotation.geometry, scores))
    return predictions


def batch_metric(task: TaskKind, predictions: Dict[int, Sequence[Prediction]],
                 ground_truth: Dict[int, Sequence[EntityAnnotation]], n_classes: int) -> MetricReport:
    if TaskKind(task) == TaskKind.DETECTION:
        return average_precision(predictions, ground_truth, n_classes)
    return entity_f_score(predictions, ground_truth, n_classes)


class Annotator:
    """
    Oracle annotator with a cost model

    Args:
        task: Task kind (selects the default cost model and metric)
        n_classes: Number of entity classes C
        cost_model: Per-action seconds; defaults to the task's constants
        confidence_threshold: Minimum confidence of predictions shown in weak mode
    """

    def __init__(self, task: TaskKind, n_classes: int, cost_model: Optional[CostModel] = None,
                 confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD):
        self.logger = logging.getLogger(__name__)
        self.task = TaskKind(task)
        self.n_classes = int(n_classes)
        self.cost_model = cost_model or CostModel.for_task(self.task)
        self.confidence_threshold = float(confidence_threshold)

    @property
    def n_outputs(self) -> int:
        return self.n_classes + 1 if self.task == TaskKind.DETECTION else self.n_classes

    def _check_unlabelled(self, sample: Sample, pools: Optional[DataPools]):
        if pools is not None and pools.annotation_state(sample.id) != AnnotationState.UNLABELLED:
            raise IntegrityError(f"Sample {sample.id} is already labelled")

    def annotate_strong(self, sample: Sample,
                        pools: Optional[DataPools] = None) -> Tuple[List[EntityAnnotation], int]:
        """All GT entities as strong labels; cost = entities × draw time"""
        self._check_unlabelled(sample, pools)
        annotations = [EntityAnnotation(e.class_id, e.geometry, LabelKind.STRONG) for e in sample.entities]
        return annotations, len(annotations) * self.cost_model.draw

    def _matches(self, prediction: Prediction, truth: EntityAnnotation) -> Tuple[bool, float]:
        if prediction.predicted_class != truth.class_id:
            return False, 0.0
        if self.task == TaskKind.SEQUENCE:
            exact = prediction.geometry == truth.geometry
            return exact, 1.0 if exact else 0.0
        iou = geometry_iou(prediction.geometry, truth.geometry)
        return iou >= VERIFY_IOU, iou

    def annotate_weak(self, sample: Sample, predictions: Sequence[Prediction],
                      pools: Optional[DataPools] = None) -> Tuple[FeedbackOutcome, List[EntityAnnotation], int]:
        """
        Verify Θ's confident predictions and add what it missed

        Shown predictions are matched in confidence-descending order to the
        unmatched GT entity of the same class with the highest IoU (≥ 0.5 for
        boxes, exact for spans). Matches become weak-verified labels carrying
        the GT geometry; the rest are rejected. Unmatched GT entities are
        drawn from scratch.

        Returns:
            (outcome, corrected annotations, seconds)
        """
        self._check_unlabelled(sample, pools)
        shown = sorted(
            (p for p in predictions if p.confidence >= self.confidence_threshold),
            key=lambda p: (-p.confidence, p.geometry.as_tuple()),
        )
        truths = list(sample.entities)
        matched = [False] * len(truths)
        verified, rejected, annotations = [], [], []
        for prediction in shown:
            best_j, best_score = -1, -1.0
            for j, truth in enumerate(truths):
                if matched[j]:
                    continue
                ok, score = self._matches(prediction, truth)
                if ok and score > best_score:
                    best_j, best_score = j, score
            if best_j < 0:
                rejected.append(prediction)
                continue
            matched[best_j] = True
            verified.append(prediction)
            truth = truths[best_j]
            annotations.append(EntityAnnotation(truth.class_id, truth.geometry, LabelKind.WEAK_VERIFIED))

        added = [EntityAnnotation(t.class_id, t.geometry, LabelKind.STRONG)
                 for t, hit in zip(truths, matched) if not hit]
        annotations.extend(added)
        cost = len(shown) * self.cost_model.verify + len(added) * self.cost_model.draw

        gt = {sample.id: truths}
        outcome = FeedbackOutcome(
            sample_id=sample.id,
            shown=shown,
            verified_correct=verified,
            rejected=rejected,
            added_strong=added,
            annotations=annotations,
            ground_truth=truths,
            ap_before=batch_metric(self.task, {sample.id: shown}, gt, self.n_classes).value,
            ap_after=batch_metric(self.task, {sample.id: label_predictions(annotations, self.n_outputs)},
                                  gt, self.n_classes).value,
        )
        return outcome, annotations, cost

