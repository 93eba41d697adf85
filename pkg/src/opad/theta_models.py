"""
Prediction models Θ trained during active learning.

``DetectionTheta`` classifies every proposal into C classes plus background;
``SequenceTheta`` tags every token with an IOBES tag from a window of
neighbouring token features and decodes tags into spans.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from .data_model import Box, Dataset, EntityAnnotation, Prediction, Sample, Span, TaskKind
from .errors import ConfigurationError
from .metrics import MetricReport, average_precision, box_iou_matrix, entity_f_score
from .nn_kernel import DenseNetKernel, MomentumSGD, softmax_cross_entropy
from .utils import read_npz, write_npz

LabelledSample = Tuple[Sample, Sequence[EntityAnnotation]]

MATCH_IOU = 0.5


class ThetaModel(ABC):
    """
    Base class for the trainable prediction model

    Args:
        n_classes: Number of entity classes C
        feature_dim: Per-unit feature dimension d
        hidden: Hidden layer width
        train_iterations: SGD steps per ``train`` call
        learning_rate: SGD learning rate
        momentum: SGD momentum
        batch_size: Rows per SGD step
        seed: Parameter initialisation seed
        zero_init_output: Start with an all-zero output layer
        cold_start: Re-initialise parameters before every ``train`` call
    """

    task_kind: TaskKind

    def __init__(self, n_classes: int, feature_dim: int, hidden: int = 64,
                 train_iterations: int = 1000, learning_rate: float = 0.05, momentum: float = 0.9,
                 batch_size: int = 32, seed: int = 0, zero_init_output: bool = False,
                 cold_start: bool = False):
        self.logger = logging.getLogger(__name__)
        self.n_classes = int(n_classes)
        self.feature_dim = int(feature_dim)
        self.hidden = int(hidden)
        self.train_iterations = int(train_iterations)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.zero_init_output = bool(zero_init_output)
        self.cold_start = bool(cold_start)
        self.loss_history: List[float] = []
        self.reset()

    @property
    @abstractmethod
    def n_outputs(self) -> int:
        pass

    @property
    def input_dim(self) -> int:
        return self.feature_dim

    def reset(self, seed: Optional[int] = None):
        """Re-initialise parameters (episode start)"""
        if seed is not None:
            self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 23])
        self.kernel = DenseNetKernel(
            [self.input_dim, self.hidden, self.hidden, self.n_outputs], rng,
            zero_init_output=self.zero_init_output,
        )

    def _check_features(self, sample: Sample):
        if sample.n_units and sample.features.shape[1] != self.feature_dim:
            raise ValueError(
                f"Sample {sample.id} has feature dimension {sample.features.shape[1]}, "
                f"model expects {self.feature_dim}"
            )

    @abstractmethod
    def unit_inputs(self, sample: Sample) -> np.ndarray:
        """Network input rows for the sample's proposals/tokens"""

    @abstractmethod
    def unit_targets(self, sample: Sample, annotations: Sequence[EntityAnnotation]) -> np.ndarray:
        """Integer training target per unit"""

    @abstractmethod
    def decode(self, sample: Sample, scores: np.ndarray) -> List[Prediction]:
        """Turn per-unit probabilities into predictions"""

    @abstractmethod
    def evaluate(self, samples: Sequence[Sample]) -> MetricReport:
        """Task metric of the model's predictions against the samples' ground truth"""

    def unit_scores(self, sample: Sample) -> np.ndarray:
        """Per-unit probability rows, shape (units, n_outputs)"""
        self._check_features(sample)
        if not sample.n_units:
            return np.zeros((0, self.n_outputs))
        return softmax(self.kernel.forward(self.unit_inputs(sample)), axis=1)

    def predict(self, sample: Sample) -> List[Prediction]:
        return self.decode(sample, self.unit_scores(sample))

    def predict_many(self, samples: Sequence[Sample]) -> Dict[int, List[Prediction]]:
        scores = self.unit_scores_many(samples)
        return {s.id: self.decode(s, scores[s.id]) for s in samples}

    def unit_scores_many(self, samples: Sequence[Sample]) -> Dict[int, np.ndarray]:
        """One forward per sample; scores never depend on the rest of the batch"""
        return {sample.id: self.unit_scores(sample) for sample in samples}

    def train(self, labelled: Sequence[LabelledSample], iterations: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> "ThetaModel":
        """
        Run SGD steps of cross-entropy over units sampled from the labelled set

        Args:
            labelled: (sample, annotations) pairs from x_l
            iterations: Number of SGD steps; defaults to ``train_iterations``
            rng: Mini-batch sampling generator

        Returns:
            self, updated in place
        """
        if not labelled:
            raise ValueError("Cannot train Θ on an empty labelled set")
        iterations = self.train_iterations if iterations is None else int(iterations)
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        if iterations <= 0:
            return self
        if self.cold_start:
            self.reset()

        inputs, targets = [], []
        for sample, annotations in labelled:
            self._check_features(sample)
            if sample.n_units:
                inputs.append(self.unit_inputs(sample))
                targets.append(self.unit_targets(sample, annotations))
        if not inputs:
            raise ValueError("Labelled samples contain no proposals/tokens to train on")
        x = np.concatenate(inputs)
        y = np.concatenate(targets)

        optimizer = MomentumSGD(self.kernel.parameters(), lr=self.learning_rate, momentum=self.momentum)
        losses = np.empty(iterations)
        for step in range(iterations):
            batch = rng.integers(0, len(x), size=min(self.batch_size, len(x)))
            logits, cache = self.kernel.forward_cached(x[batch])
            loss, _, grad = softmax_cross_entropy(logits, y[batch])
            grads, _ = self.kernel.backward(cache, grad)
            optimizer.step(grads)
            losses[step] = loss

        window = max(1, iterations // 10)
        head, tail = losses[:window].mean(), losses[-window:].mean()
        self.loss_history.append(float(tail))
        if tail > head:
            self.logger.warning(f"Θ training loss did not decrease ({head:.4f} -> {tail:.4f})")
        self.logger.debug(f"Θ trained {iterations} steps on {len(x)} units: loss {head:.4f} -> {tail:.4f}")
        return self


class DetectionTheta(ThetaModel):
    """Proposal classifier with an explicit background output (index C)"""

    task_kind = TaskKind.DETECTION

    @property
    def n_outputs(self) -> int:
        return self.n_classes + 1

    @property
    def background(self) -> int:
        return self.n_classes

    def unit_inputs(self, sample: Sample) -> np.ndarray:
        return sample.features

    def unit_targets(self, sample: Sample, annotations: Sequence[EntityAnnotation]) -> np.ndarray:
        targets = np.full(sample.n_units, self.background, dtype=np.int64)
        if not annotations:
            return targets
        label_boxes = np.array([a.geometry.as_tuple() for a in annotations])
        iou = box_iou_matrix(sample.boxes, label_boxes)
        best = iou.argmax(axis=1)
        matched = iou[np.arange(len(best)), best] >= MATCH_IOU
        classes = np.array([a.class_id for a in annotations])
        targets[matched] = classes[best[matched]]
        return targets

    def decode(self, sample: Sample, scores: np.ndarray) -> List[Prediction]:
        predictions = []
        for box, row in zip(sample.boxes if sample.boxes is not None else [], scores):
            if int(np.argmax(row)) == self.background:
                continue
            predictions.append(Prediction.from_scores(Box(*map(float, box)), row))
        return predictions

    def evaluate(self, samples: Sequence[Sample]) -> MetricReport:
        return average_precision(self.predict_many(samples), {s.id: s.entities for s in samples}, self.n_classes)


def tag_index(class_id: int, position: str) -> int:
    """IOBES tag id: O=0, then B/I/E/S for class k at 1+4k .. 4+4k"""
    return 1 + 4 * class_id + "BIES".index(position)


def spans_to_tags(length: int, entities: Sequence[EntityAnnotation]) -> np.ndarray:
    tags = np.zeros(length, dtype=np.int64)
    for entity in entities:
        start, end = entity.geometry.start, entity.geometry.end
        if end - start == 1:
            tags[start] = tag_index(entity.class_id, "S")
            continue
        tags[start] = tag_index(entity.class_id, "B")
        tags[start + 1:end - 1] = tag_index(entity.class_id, "I")
        tags[end - 1] = tag_index(entity.class_id, "E")
    return tags


def decode_tags(tags: Sequence[int]) -> List[Tuple[int, int, int]]:
    """
    Greedy strict IOBES decoding

    Returns:
        (class_id, start, end) triples; malformed tag runs are dropped
    """
    spans = []
    open_class, open_start = None, None
    for t, tag in enumerate(tags):
        tag = int(tag)
        if tag == 0:
            open_class = None
            continue
        class_id, position = (tag - 1) // 4, "BIES"[(tag - 1) % 4]
        if position == "S":
            spans.append((class_id, t, t + 1))
            open_class = None
        elif position == "B":
            open_class, open_start = class_id, t
        elif open_class != class_id:
            open_class = None
        elif position == "E":
            spans.append((class_id, open_start, t + 1))
            open_class = None
    return spans


class SequenceTheta(ThetaModel):
    """Token tagger over [previous, current, next] feature windows"""

    task_kind = TaskKind.SEQUENCE

    @property
    def n_outputs(self) -> int:
        return 4 * self.n_classes + 1

    @property
    def input_dim(self) -> int:
        return 3 * self.feature_dim

    def unit_inputs(self, sample: Sample) -> np.ndarray:
        padded = np.pad(sample.features, ((1, 1), (0, 0)))
        return np.hstack([padded[:-2], padded[1:-1], padded[2:]])

    def unit_targets(self, sample: Sample, annotations: Sequence[EntityAnnotation]) -> np.ndarray:
        return spans_to_tags(sample.n_units, annotations)

    def decode(self, sample: Sample, scores: np.ndarray) -> List[Prediction]:
        if not self.n_classes or not len(scores):
            return []
        predictions = []
        for class_id, start, end in decode_tags(np.argmax(scores, axis=1)):
            mass = scores[start:end, 1:].reshape(end - start, self.n_classes, 4).sum(axis=2).mean(axis=0)
            predictions.append(Prediction.from_scores(Span(start, end), mass / mass.sum()))
        return predictions

    def evaluate(self, samples: Sequence[Sample]) -> MetricReport:
        return entity_f_score(self.predict_many(samples), {s.id: s.entities for s in samples}, self.n_classes)


def build_theta(dataset: Dataset, **kwargs) -> ThetaModel:
    """Θ matching the dataset's task"""
    if dataset.task == TaskKind.DETECTION:
        return DetectionTheta(dataset.n_classes, dataset.feature_dim, **kwargs)
    return SequenceTheta(dataset.n_classes, dataset.feature_dim, **kwargs)


def train(theta: ThetaModel, labelled: Sequence[LabelledSample], iterations: int,
          rng: np.random.Generator) -> ThetaModel:
    return theta.train(labelled, iterations, rng)


def predict(theta: ThetaModel, sample: Sample) -> List[Prediction]:
    return theta.predict(sample)


def save_theta_checkpoint(theta: ThetaModel, path: str) -> str:
    """Flat parameter vector plus shape manifest"""
    metadata = {
        'task': theta.task_kind.value,
        'n_classes': theta.n_classes,
        'feature_dim': theta.feature_dim,
        'hidden': theta.hidden,
        'train_iterations': theta.train_iterations,
        'learning_rate': theta.learning_rate,
        'momentum': theta.momentum,
        'batch_size': theta.batch_size,
        'seed': theta.seed,
        'cold_start': theta.cold_start,
        'manifest': theta.kernel.shape_manifest(),
    }
    return write_npz(path, {'params': theta.kernel.get_flat()}, metadata)


def load_theta_checkpoint(path: str) -> ThetaModel:
    arrays, metadata = read_npz(path)
    cls = DetectionTheta if metadata['task'] == TaskKind.DETECTION.value else SequenceTheta
    if metadata['task'] not in (TaskKind.DETECTION.value, TaskKind.SEQUENCE.value):
        raise ConfigurationError(f"{path}: unknown task '{metadata['task']}'")
    theta = cls(
        n_classes=metadata['n_classes'], feature_dim=metadata['feature_dim'], hidden=metadata['hidden'],
        train_iterations=metadata['train_iterations'], learning_rate=metadata['learning_rate'],
        momentum=metadata['momentum'], batch_size=metadata['batch_size'], seed=metadata['seed'],
        cold_start=metadata['cold_start'],
    )
    theta.kernel = DenseNetKernel.from_manifest(metadata['manifest'], arrays['params'])
    return theta
