"""
Synthetic task generators.

Two ground-truth tasks stand in for real document datasets: proposal-based
layout detection (boxes on a unit page, classification over proposals with an
explicit background class) and token-span tagging (IOBES over entity spans).
Both are pure functions of (spec, n_samples, seed).
"""

import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

from .opad.data_model import Box, Dataset, EntityAnnotation, Sample, Span, TaskKind, save_dataset
from .opad.errors import ConfigurationError
from .opad.metrics import box_iou_matrix

logger = logging.getLogger(__name__)

MAX_JITTER_RETRIES = 10
MAX_DISTRACTOR_RETRIES = 50


def skewed_prior(n_classes: int, ratio: float = 0.75) -> List[float]:
    """Geometric class prior p_k ∝ ratio^k"""
    if n_classes == 0:
        return []
    weights = ratio ** np.arange(n_classes, dtype=np.float64)
    return (weights / weights.sum()).tolist()


def class_centers(n_centers: int, feature_dim: int, scale: float, seed: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 101]).normal(0.0, scale, size=(n_centers, feature_dim))


@dataclass
class DetectionTaskSpec:
    """
    Layout-detection task

    Row C of the center matrix is the background center used by distractor
    proposals. A proposal jittered from a GT box always keeps IoU > 0.5 with
    it: jitter is retried and falls back to the exact box, so the guarantee
    holds for any ``box_jitter_sigma`` (large sigmas only cost retries).
    """
    n_classes: int = 13
    class_prior: Optional[List[float]] = None
    entities_per_sample: Tuple[int, int] = (2, 8)
    feature_dim: int = 16
    center_scale: float = 1.0
    center_seed: int = 0
    feature_noise_sigma: float = 1.25
    distractor_rate: float = 0.3
    box_jitter_sigma: float = 0.01
    val_fraction: float = 0.25
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.class_prior is None:
            self.class_prior = skewed_prior(self.n_classes)
        self.entities_per_sample = tuple(int(v) for v in self.entities_per_sample)
        self.validate()

    def validate(self):
        if self.n_classes < 2:
            raise ConfigurationError(f"n_classes must be ≥ 2, got {self.n_classes}")
        _validate_prior(self.class_prior, self.n_classes)
        low, high = self.entities_per_sample
        if not 0 <= low <= high:
            raise ConfigurationError(f"entities_per_sample must satisfy 0 ≤ low ≤ high, got {self.entities_per_sample}")
        if not 0.0 <= self.distractor_rate < 1.0:
            raise ConfigurationError(f"distractor_rate must lie in [0, 1), got {self.distractor_rate}")
        _validate_common(self)

    @property
    def centers(self) -> np.ndarray:
        return class_centers(self.n_classes + 1, self.feature_dim, self.center_scale, self.center_seed)


@dataclass
class SequenceTaskSpec:
    """Token-span tagging task with IOBES tags"""
    n_entity_classes: int = 4
    class_prior: Optional[List[float]] = None
    length_range: Tuple[int, int] = (20, 150)
    entities_per_sample: Tuple[int, int] = (1, 6)
    entity_length: Tuple[int, int] = (1, 4)
    max_len: int = 150
    feature_dim: int = 16
    center_scale: float = 1.0
    center_seed: int = 0
    feature_noise_sigma: float = 1.0
    tag_scheme: str = "IOBES"
    val_fraction: float = 0.25
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.class_prior is None:
            self.class_prior = skewed_prior(self.n_entity_classes)
        self.length_range = tuple(int(v) for v in self.length_range)
        self.entities_per_sample = tuple(int(v) for v in self.entities_per_sample)
        self.entity_length = tuple(int(v) for v in self.entity_length)
        self.validate()

    def validate(self):
        if self.n_entity_classes < 0:
            raise ConfigurationError(f"n_entity_classes must be ≥ 0, got {self.n_entity_classes}")
        if self.tag_scheme != "IOBES":
            raise ConfigurationError(f"Unsupported tag scheme '{self.tag_scheme}'")
        if self.max_len < 1:
            raise ConfigurationError(f"max_len must be ≥ 1, got {self.max_len}")
        if not 1 <= self.length_range[0] <= self.length_range[1] <= self.max_len:
            raise ConfigurationError(f"length_range {self.length_range} must lie in [1, max_len={self.max_len}]")
        if not 1 <= self.entity_length[0] <= self.entity_length[1]:
            raise ConfigurationError(f"Invalid entity_length {self.entity_length}")
        if not 0 <= self.entities_per_sample[0] <= self.entities_per_sample[1]:
            raise ConfigurationError(f"Invalid entities_per_sample {self.entities_per_sample}")
        if self.n_entity_classes:
            _validate_prior(self.class_prior, self.n_entity_classes)
        _validate_common(self)

    @property
    def n_tags(self) -> int:
        return 4 * self.n_entity_classes + 1

    @property
    def centers(self) -> np.ndarray:
        """Row 0 is the O center, row k+1 the center of entity class k"""
        return class_centers(self.n_entity_classes + 1, self.feature_dim, self.center_scale, self.center_seed)


def _validate_prior(prior: Sequence[float], n_classes: int):
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (n_classes,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"class_prior must be a probability vector of length {n_classes}")


def _validate_common(spec):
    if spec.feature_dim < 1:
        raise ConfigurationError(f"feature_dim must be ≥ 1, got {spec.feature_dim}")
    if spec.center_scale <= 0:
        raise ConfigurationError(f"center_scale must be > 0, got {spec.center_scale}")
    if spec.feature_noise_sigma < 0:
        raise ConfigurationError(f"feature_noise_sigma must be ≥ 0, got {spec.feature_noise_sigma}")
    if getattr(spec, 'box_jitter_sigma', 0.0) < 0:
        raise ConfigurationError(f"box_jitter_sigma must be ≥ 0, got {spec.box_jitter_sigma}")
    if spec.val_fraction <= 0 or spec.test_fraction <= 0 or spec.val_fraction + spec.test_fraction >= 1:
        raise ConfigurationError("val_fraction and test_fraction must be positive and sum below 1")


def split_ids(ids: Sequence[int], val_fraction: float, test_fraction: float, seed: int) -> Dict[str, List[int]]:
    """Train/val/test split hints"""
    ids = list(ids)
    rest, test = train_test_split(ids, test_size=test_fraction, random_state=seed % (2 ** 32))
    train, val = train_test_split(rest, test_size=val_fraction / (1.0 - test_fraction),
                                  random_state=(seed + 1) % (2 ** 32))
    return {'train': sorted(train), 'val': sorted(val), 'test': sorted(test)}


def _layout_boxes(n_entities: int, rng: np.random.Generator) -> List[Box]:
    """GT boxes in disjoint horizontal bands of the page"""
    boxes = []
    band = 1.0 / max(n_entities, 1)
    for k in range(n_entities):
        height = band * rng.uniform(0.5, 0.9)
        y0 = k * band + rng.uniform(0.0, band - height)
        x0 = rng.uniform(0.02, 0.4)
        x1 = rng.uniform(0.6, 0.98)
        boxes.append(Box(float(x0), float(y0), float(x1), float(y0 + height)))
    return boxes


def _jitter_box(box: Box, sigma: float, rng: np.random.Generator) -> np.ndarray:
    gt = np.array(box.as_tuple())
    for _ in range(MAX_JITTER_RETRIES):
        candidate = np.clip(gt + rng.normal(0.0, sigma, size=4), 0.0, 1.0)
        if candidate[0] < candidate[2] and candidate[1] < candidate[3]:
            if box_iou_matrix(candidate, gt)[0, 0] > 0.5:
                return candidate
    return gt


def _distractor_boxes(count: int, gt_boxes: np.ndarray, rng: np.random.Generator) -> List[np.ndarray]:
    placed = []
    for _ in range(count):
        for _ in range(MAX_DISTRACTOR_RETRIES):
            w, h = rng.uniform(0.05, 0.3, size=2)
            x0, y0 = rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h)
            candidate = np.array([x0, y0, x0 + w, y0 + h])
            if gt_boxes.size == 0 or box_iou_matrix(candidate, gt_boxes).max() < 0.5:
                placed.append(candidate)
                break
    return placed


def generate_detection_dataset(spec: DetectionTaskSpec, n_samples: int, seed: int) -> Dataset:
    """
    Generate a layout-detection dataset

    Args:
        spec: Task spec
        n_samples: Number of pages
        seed: Master seed; identical seeds give identical datasets

    Returns:
        Dataset with one proposal row per jittered GT box or distractor
    """
    spec.validate()
    rng = np.random.default_rng(int(seed))
    centers = spec.centers
    background = centers[spec.n_classes]
    samples = []
    for sample_id in range(n_samples):
        n_entities = int(rng.integers(spec.entities_per_sample[0], spec.entities_per_sample[1] + 1))
        classes = rng.choice(spec.n_classes, size=n_entities, p=spec.class_prior)
        gt_boxes = _layout_boxes(n_entities, rng)
        gt_array = np.array([b.as_tuple() for b in gt_boxes]).reshape(-1, 4)

        proposal_boxes = [_jitter_box(b, spec.box_jitter_sigma, rng) for b in gt_boxes]
        proposal_means = [centers[c] for c in classes]
        n_distractors = int(round(spec.distractor_rate / (1.0 - spec.distractor_rate) * n_entities))
        for box in _distractor_boxes(n_distractors, gt_array, rng):
            proposal_boxes.append(box)
            proposal_means.append(background)

        order = rng.permutation(len(proposal_boxes))
        means = np.array(proposal_means).reshape(-1, spec.feature_dim)[order]
        features = means + rng.normal(0.0, 1.0, size=means.shape) * spec.feature_noise_sigma
        boxes = np.array(proposal_boxes).reshape(-1, 4)[order]

        entities = tuple(EntityAnnotation(int(c), b) for c, b in zip(classes, gt_boxes))
        samples.append(Sample(id=sample_id, entities=entities, features=features, boxes=boxes))

    spec_dict = asdict(spec)
    logger.info(f"Generated {n_samples} detection samples (seed={seed})")
    return Dataset(
        task=TaskKind.DETECTION,
        n_classes=spec.n_classes,
        feature_dim=spec.feature_dim,
        samples=samples,
        splits=split_ids(range(n_samples), spec.val_fraction, spec.test_fraction, seed),
        seed=seed,
        spec=spec_dict,
    )


def _place_spans(length: int, lengths: List[int], rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Non-overlapping spans separated by at least one O token"""
    while lengths and sum(lengths) + len(lengths) - 1 > length:
        lengths = lengths[:-1]
    if not lengths:
        return []
    slack = length - (sum(lengths) + len(lengths) - 1)
    gaps = rng.multinomial(slack, np.full(len(lengths) + 1, 1.0 / (len(lengths) + 1)))
    spans = []
    position = int(gaps[0])
    for k, span_len in enumerate(lengths):
        spans.append((position, position + span_len))
        position += span_len + 1 + int(gaps[k + 1])
    return spans


def generate_sequence_dataset(spec: SequenceTaskSpec, n_samples: int, seed: int) -> Dataset:
    """
    Generate a span-tagging dataset

    Tokens outside entities carry O-center features; tokens inside an entity
    carry that class's center. Entities never touch, so IOBES boundaries are
    recoverable from neighbouring tokens.
    """
    spec.validate()
    rng = np.random.default_rng(int(seed))
    centers = spec.centers
    samples = []
    for sample_id in range(n_samples):
        length = int(rng.integers(spec.length_range[0], spec.length_range[1] + 1))
        entities: List[EntityAnnotation] = []
        token_class = np.zeros(length, dtype=np.int64)
        if spec.n_entity_classes:
            n_entities = int(rng.integers(spec.entities_per_sample[0], spec.entities_per_sample[1] + 1))
            lengths = rng.integers(spec.entity_length[0], spec.entity_length[1] + 1, size=n_entities).tolist()
            for start, end in _place_spans(length, lengths, rng):
                class_id = int(rng.choice(spec.n_entity_classes, p=spec.class_prior))
                entities.append(EntityAnnotation(class_id, Span(start, end)))
                token_class[start:end] = class_id + 1
        features = centers[token_class] + rng.normal(0.0, 1.0, size=(length, spec.feature_dim)) * spec.feature_noise_sigma
        samples.append(Sample(id=sample_id, entities=tuple(entities), features=features))

    logger.info(f"Generated {n_samples} sequence samples (seed={seed})")
    return Dataset(
        task=TaskKind.SEQUENCE,
        n_classes=spec.n_entity_classes,
        feature_dim=spec.feature_dim,
        samples=samples,
        splits=split_ids(range(n_samples), spec.val_fraction, spec.test_fraction, seed),
        seed=seed,
        spec=asdict(spec),
        max_len=spec.max_len,
    )


def generate_dataset(task: str, spec, n_samples: int, seed: int) -> Dataset:
    if TaskKind(task) == TaskKind.DETECTION:
        return generate_detection_dataset(spec, n_samples, seed)
    return generate_sequence_dataset(spec, n_samples, seed)


def dataset_path(output_dir: str, task: str, seed: int) -> str:
    return os.path.join(output_dir, "datasets", f"{task}_seed{seed}.npz")


def generate_all_datasets(specs: Dict[str, object], n_samples: Dict[str, int],
                          seeds: Sequence[int], output_dir: str) -> List[str]:
    """
    Generate and save one dataset per (task, seed)

    Args:
        specs: Task spec keyed by task name
        n_samples: Sample count keyed by task name
        seeds: Generator seeds
        output_dir: Run directory; files go to ``datasets/{task}_seed{seed}.npz``

    Returns:
        Paths written
    """
    paths = []
    for task, spec in specs.items():
        for seed in seeds:
            dataset = generate_dataset(task, spec, n_samples[task], seed)
            path = save_dataset(dataset, dataset_path(output_dir, task, seed))
            logger.info(f"Saved {task} dataset for seed {seed} to {path}")
            paths.append(path)
    return paths
