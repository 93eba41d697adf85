"""
Core sample/label types, the dataset container and the pool manager.

Pool membership is kept as id sets over an immutable dataset table; labels
acquired during active learning live in the pools, never on the samples.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .errors import BudgetExceeded, ConfigurationError, EndOfEpisode, IntegrityError
from .utils import read_npz, write_npz

logger = logging.getLogger(__name__)

CONTAINER_VERSION = 1


class TaskKind(str, Enum):
    DETECTION = "detection"
    SEQUENCE = "sequence"


class LabelKind(str, Enum):
    STRONG = "strong"
    WEAK_VERIFIED = "weak_verified"


class AnnotationState(str, Enum):
    UNLABELLED = "unlabelled"
    STRONG_LABELLED = "strong_labelled"
    WEAK_LABELLED = "weak_labelled"


class Regime(str, Enum):
    POLICY_TRAINING = "policy_training"
    DEPLOYMENT = "deployment"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in unit-page coordinates"""
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"Degenerate box {self}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class Span:
    """Token span, ``end`` exclusive"""
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"Empty span {self}")

    def as_tuple(self) -> Tuple[int, int]:
        return (self.start, self.end)


Geometry = Union[Box, Span]


@dataclass(frozen=True)
class EntityAnnotation:
    class_id: int
    geometry: Geometry
    label_kind: LabelKind = LabelKind.STRONG

    def key(self) -> Tuple:
        """Identity of the entity irrespective of how it was labelled"""
        return (self.class_id, type(self.geometry).__name__, self.geometry.as_tuple())


@dataclass(frozen=True, eq=False)
class Prediction:
    """
    One model output: a geometry with a class-probability vector.

    Detection vectors carry a trailing background slot; sequence vectors do not.
    """
    geometry: Geometry
    class_scores: np.ndarray
    confidence: float

    def __post_init__(self):
        scores = np.asarray(self.class_scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("class_scores must be a non-empty vector")
        if abs(scores.sum() - 1.0) > 1e-9:
            raise ValueError(f"class_scores sum to {scores.sum()!r}, expected 1")
        scores.setflags(write=False)
        object.__setattr__(self, 'class_scores', scores)

    @classmethod
    def from_scores(cls, geometry: Geometry, class_scores: np.ndarray) -> "Prediction":
        scores = np.asarray(class_scores, dtype=np.float64)
        return cls(geometry=geometry, class_scores=scores, confidence=float(scores.max()))

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.class_scores))


@dataclass(frozen=True, eq=False)
class Sample:
    """
    One document-like unit.

    ``features`` holds one row per proposal (detection) or token (sequence);
    ``boxes`` holds the proposal boxes and is None for sequence samples.
    ``entities`` is the hidden ground truth.
    """
    id: int
    entities: Tuple[EntityAnnotation, ...]
    features: np.ndarray
    boxes: Optional[np.ndarray] = None

    @property
    def n_units(self) -> int:
        return int(self.features.shape[0])


class Dataset:
    """Immutable table of samples plus split hints and generator metadata"""

    SPLITS = ("train", "val", "test")

    def __init__(self, task: Union[TaskKind, str], n_classes: int, feature_dim: int,
                 samples: Iterable[Sample], splits: Dict[str, Sequence[int]],
                 seed: int, spec: Optional[Dict[str, Any]] = None,
                 max_len: Optional[int] = None, labelled: bool = True):
        self.task = TaskKind(task)
        self.n_classes = int(n_classes)
        self.feature_dim = int(feature_dim)
        self.seed = int(seed)
        self.spec = dict(spec or {})
        self.max_len = None if max_len is None else int(max_len)
        self.labelled = bool(labelled)

        self.samples: Dict[int, Sample] = {}
        for sample in samples:
            if sample.id in self.samples:
                raise IntegrityError(f"Duplicate sample id {sample.id}")
            self._validate_sample(sample)
            self.samples[sample.id] = sample

        self.splits: Dict[str, Tuple[int, ...]] = {}
        for name in self.SPLITS:
            ids = tuple(sorted(int(i) for i in splits.get(name, ())))
            missing = [i for i in ids if i not in self.samples]
            if missing:
                raise IntegrityError(f"Split '{name}' references unknown ids {missing[:5]}")
            self.splits[name] = ids
        seen: Set[int] = set()
        for name in self.SPLITS:
            if seen & set(self.splits[name]):
                raise IntegrityError(f"Split '{name}' overlaps another split")
            seen |= set(self.splits[name])

    def _validate_sample(self, sample: Sample):
        if sample.features.ndim != 2 or (sample.features.shape[0] and sample.features.shape[1] != self.feature_dim):
            raise ConfigurationError(
                f"Sample {sample.id} has features of shape {sample.features.shape}, "
                f"expected (*, {self.feature_dim})"
            )
        for entity in sample.entities:
            if not 0 <= entity.class_id < self.n_classes:
                raise IntegrityError(f"Sample {sample.id} has class {entity.class_id} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, sample_id: int) -> Sample:
        return self.samples[sample_id]

    def split(self, name: str) -> Tuple[int, ...]:
        return self.splits[name]

    @property
    def n_tags(self) -> int:
        """IOBES tag count (sequence tasks)"""
        return 4 * self.n_classes + 1

    @property
    def n_outputs(self) -> int:
        """Width of Θ's output layer"""
        if self.task == TaskKind.DETECTION:
            return self.n_classes + 1
        return self.n_tags

    def gather(self, ids: Iterable[int]) -> List[Sample]:
        return [self.samples[i] for i in ids]


@dataclass
class DataPools:
    """
    The named id sets of one active-learning run plus its label store.

    ``x_met`` is unreachable in the deployment regime and ``x_test`` in the
    policy-training regime.
    """
    regime: Regime
    x_train: Set[int] = field(default_factory=set)
    x_val: Set[int] = field(default_factory=set)
    x_u: Set[int] = field(default_factory=set)
    x_l: Set[int] = field(default_factory=set)
    x_init: Set[int] = field(default_factory=set)
    x_state: Set[int] = field(default_factory=set)
    x_cand: Set[int] = field(default_factory=set)
    budget_total: float = math.inf
    budget_spent: float = 0.0
    labels: Dict[int, Tuple[EntityAnnotation, ...]] = field(default_factory=dict)
    states: Dict[int, AnnotationState] = field(default_factory=dict)
    _x_met: Set[int] = field(default_factory=set, repr=False)
    _x_test: Set[int] = field(default_factory=set, repr=False)

    @property
    def x_met(self) -> Set[int]:
        if self.regime == Regime.DEPLOYMENT:
            raise IntegrityError("x_met is not available in the deployment regime")
        return self._x_met

    @property
    def x_test(self) -> Set[int]:
        if self.regime == Regime.POLICY_TRAINING:
            raise IntegrityError("x_test must not be read during policy training")
        return self._x_test

    def evaluation_ids(self) -> List[int]:
        """Ids the metric is computed on: x_met (training) or x_test (deployment)"""
        if self.regime == Regime.POLICY_TRAINING:
            return sorted(self.x_met)
        return sorted(self.x_test)

    def annotation_state(self, sample_id: int) -> AnnotationState:
        return self.states.get(sample_id, AnnotationState.UNLABELLED)

    def charge(self, seconds: float):
        if self.budget_spent + seconds > self.budget_total + 1e-9:
            raise BudgetExceeded(
                f"Charging {seconds}s would exceed the budget ({self.budget_spent}/{self.budget_total}s)"
            )
        self.budget_spent += seconds

    def check_invariants(self):
        """Raise IntegrityError on any violated pool invariant"""
        if self.x_l & self.x_u:
            raise IntegrityError("x_l and x_u overlap")
        if self.regime == Regime.POLICY_TRAINING:
            if self._x_met & self.x_state:
                raise IntegrityError("x_state and x_met overlap")
            parts = [self.x_u, self.x_l, self.x_state, self._x_met]
            if sum(len(p) for p in parts) != len(set().union(*parts)):
                raise IntegrityError("x_u, x_l, x_state and x_met are not mutually disjoint")
            if set().union(*parts) != self.x_train:
                raise IntegrityError("x_u ∪ x_l ∪ x_state ∪ x_met differs from x_train")
        else:
            if (self.x_u | self.x_l) != self.x_val:
                raise IntegrityError("x_u ∪ x_l differs from x_val")
        if self.budget_spent > self.budget_total + 1e-9:
            raise IntegrityError("Budget overrun")


def _held_out_sets(train_ids: Sequence[int], n_state: int, met_fraction: float,
                   rng_seed: int) -> Tuple[Set[int], Set[int], List[int]]:
    """Draw x_met then x_state; returns (x_met, x_state, remaining ids in draw order)"""
    rng = np.random.default_rng([int(rng_seed), 11])
    order = rng.permutation(np.asarray(sorted(train_ids), dtype=np.int64))
    n_met = int(math.ceil(met_fraction * len(train_ids) - 1e-9))
    x_met = set(order[:n_met].tolist())
    x_state = set(order[n_met:n_met + n_state].tolist())
    return x_met, x_state, sorted(order[n_met + n_state:].tolist())


def draw_state_set(dataset: Dataset, n_state: int, met_fraction: float, rng_seed: int) -> Set[int]:
    """The x_state a policy-training run with the same arguments uses"""
    _, x_state, _ = _held_out_sets(dataset.split("train"), n_state, met_fraction, rng_seed)
    return x_state


def _strong_labels(dataset: Dataset, ids: Iterable[int]) -> Dict[int, Tuple[EntityAnnotation, ...]]:
    return {
        i: tuple(EntityAnnotation(e.class_id, e.geometry, LabelKind.STRONG) for e in dataset[i].entities)
        for i in ids
    }


def init_policy_training_pools(dataset: Dataset, n_init: int, n_state: int, met_fraction: float,
                               rng_seed: int, episode_seed: Optional[int] = None,
                               budget_seconds: float = math.inf) -> DataPools:
    """
    Build the policy-training pools from the train split

    x_met and x_state depend only on ``rng_seed``; x_init is drawn from
    ``episode_seed`` (defaults to ``rng_seed``) so episodes can re-draw the
    seed set while keeping the held-out sets fixed.

    Raises:
        ConfigurationError: the train split cannot hold all requested sets
    """
    train_ids = dataset.split("train")
    if not 0.0 <= met_fraction < 1.0:
        raise ConfigurationError(f"met_fraction must lie in [0, 1), got {met_fraction}")
    if n_init < 1 or n_state < 1:
        raise ConfigurationError("n_init and n_state must be positive")
    n_met = int(math.ceil(met_fraction * len(train_ids) - 1e-9))
    needed = n_init + n_state + n_met
    if len(train_ids) < needed:
        raise ConfigurationError(
            f"Train split has {len(train_ids)} samples, need at least {needed} "
            f"(n_init={n_init}, n_state={n_state}, met={n_met})"
        )

    x_met, x_state, remaining = _held_out_sets(train_ids, n_state, met_fraction, rng_seed)
    episode_rng = np.random.default_rng([int(rng_seed if episode_seed is None else episode_seed), 13])
    init_idx = episode_rng.choice(len(remaining), size=n_init, replace=False)
    x_init = {remaining[i] for i in init_idx.tolist()}
    x_u = set(remaining) - x_init

    pools = DataPools(
        regime=Regime.POLICY_TRAINING,
        x_train=set(train_ids),
        x_u=x_u,
        x_l=set(x_init),
        x_init=set(x_init),
        x_state=x_state,
        budget_total=budget_seconds,
        labels=_strong_labels(dataset, x_init),
        _x_met=x_met,
    )
    for i in x_init:
        pools.states[i] = AnnotationState.STRONG_LABELLED
    for i in x_met:
        pools.states[i] = AnnotationState.STRONG_LABELLED
    pools.check_invariants()
    logger.debug(f"Policy-training pools: |x_u|={len(x_u)} |x_l|={len(x_init)} "
                 f"|x_state|={len(x_state)} |x_met|={len(x_met)}")
    return pools


def init_deployment_pools(dataset: Dataset, n_init: int, rng_seed: int,
                          x_state: Optional[Iterable[int]] = None,
                          budget_seconds: float = math.inf) -> DataPools:
    """
    Build the deployment pools from the val split

    Raises:
        ConfigurationError: n_init is not smaller than the val split
        IntegrityError: the reused x_state overlaps x_val
    """
    val_ids = dataset.split("val")
    if n_init < 1 or n_init >= len(val_ids):
        raise ConfigurationError(f"n_init={n_init} must be in [1, |x_val|={len(val_ids)})")
    state_ids = set(x_state or ())
    if state_ids & set(val_ids):
        raise IntegrityError("x_state overlaps x_val")

    rng = np.random.default_rng([int(rng_seed), 17])
    init_idx = rng.choice(len(val_ids), size=n_init, replace=False)
    x_init = {val_ids[i] for i in init_idx.tolist()}

    pools = DataPools(
        regime=Regime.DEPLOYMENT,
        x_val=set(val_ids),
        x_u=set(val_ids) - x_init,
        x_l=set(x_init),
        x_init=set(x_init),
        x_state=state_ids,
        budget_total=budget_seconds,
        labels=_strong_labels(dataset, x_init),
        _x_test=set(dataset.split("test")),
    )
    for i in x_init:
        pools.states[i] = AnnotationState.STRONG_LABELLED
    pools.check_invariants()
    return pools


def sample_candidates(pools: DataPools, n_pool: int, n_cycle: int, rng: np.random.Generator) -> List[int]:
    """
    Draw n_pool × n_cycle distinct candidate ids uniformly from x_u

    Raises:
        EndOfEpisode: x_u is smaller than the candidate set
    """
    size = n_pool * n_cycle
    if len(pools.x_u) < size:
        raise EndOfEpisode(f"|x_u|={len(pools.x_u)} < n_pool*n_cycle={size}")
    pool = np.asarray(sorted(pools.x_u), dtype=np.int64)
    return pool[rng.choice(len(pool), size=size, replace=False)].tolist()


def commit_selection(pools: DataPools, selected_ids: Sequence[int],
                     annotations: Dict[int, Sequence[EntityAnnotation]],
                     weak: bool = False) -> DataPools:
    """
    Move selected ids from x_u to x_l with their annotations attached

    Raises:
        IntegrityError: duplicates, ids outside x_u or outside x_cand, or missing annotations
    """
    selected = [int(i) for i in selected_ids]
    if len(set(selected)) != len(selected):
        raise IntegrityError("Duplicate id in selection")
    outside = [i for i in selected if i not in pools.x_u]
    if outside:
        raise IntegrityError(f"Ids not in x_u: {outside[:5]}")
    if pools.x_cand:
        stray = [i for i in selected if i not in pools.x_cand]
        if stray:
            raise IntegrityError(f"Ids not in x_cand: {stray[:5]}")
    missing = [i for i in selected if i not in annotations]
    if missing:
        raise IntegrityError(f"No annotations for ids {missing[:5]}")

    state = AnnotationState.WEAK_LABELLED if weak else AnnotationState.STRONG_LABELLED
    for i in selected:
        pools.x_u.discard(i)
        pools.x_l.add(i)
        pools.labels[i] = tuple(annotations[i])
        pools.states[i] = state
    if selected:
        pools.x_cand = set()
    return pools


def save_dataset(dataset: Dataset, path: str) -> str:
    """Write a dataset as a self-describing ``.npz`` container"""
    ids = sorted(dataset.samples)
    samples = dataset.gather(ids)
    unit_counts = np.array([s.n_units for s in samples], dtype=np.int64)
    entity_counts = np.array([len(s.entities) for s in samples], dtype=np.int64)
    features = [s.features for s in samples if s.n_units]
    entities = [e for s in samples for e in s.entities]
    geometry_width = 4 if dataset.task == TaskKind.DETECTION else 2
    geometry_dtype = np.float64 if dataset.task == TaskKind.DETECTION else np.int64

    arrays = {
        'sample_ids': np.array(ids, dtype=np.int64),
        'unit_counts': unit_counts,
        'features': np.concatenate(features) if features else np.zeros((0, dataset.feature_dim)),
        'entity_counts': entity_counts,
        'entity_classes': np.array([e.class_id for e in entities], dtype=np.int64),
        'entity_geometry': np.array([e.geometry.as_tuple() for e in entities],
                                    dtype=geometry_dtype).reshape(-1, geometry_width),
    }
    if dataset.task == TaskKind.DETECTION:
        boxes = [s.boxes for s in samples if s.n_units]
        arrays['proposal_boxes'] = np.concatenate(boxes) if boxes else np.zeros((0, 4))
    for name in Dataset.SPLITS:
        arrays[f'split_{name}'] = np.array(dataset.split(name), dtype=np.int64)

    metadata = {
        'container_version': CONTAINER_VERSION,
        'task': dataset.task.value,
        'n_classes': dataset.n_classes,
        'feature_dim': dataset.feature_dim,
        'seed': dataset.seed,
        'spec': dataset.spec,
        'max_len': dataset.max_len,
        'labelled': dataset.labelled,
    }
    return write_npz(path, arrays, metadata)


def load_dataset(path: str) -> Dataset:
    """Read a container written by ``save_dataset``"""
    arrays, metadata = read_npz(path)
    if metadata.get('container_version') != CONTAINER_VERSION:
        raise ConfigurationError(f"{path}: unsupported container version {metadata.get('container_version')}")
    task = TaskKind(metadata['task'])

    unit_offsets = np.concatenate([[0], np.cumsum(arrays['unit_counts'])])
    entity_offsets = np.concatenate([[0], np.cumsum(arrays['entity_counts'])])
    samples = []
    for row, sample_id in enumerate(arrays['sample_ids'].tolist()):
        lo, hi = unit_offsets[row], unit_offsets[row + 1]
        entities = []
        for k in range(entity_offsets[row], entity_offsets[row + 1]):
            values = arrays['entity_geometry'][k].tolist()
            geometry = Box(*values) if task == TaskKind.DETECTION else Span(*values)
            entities.append(EntityAnnotation(int(arrays['entity_classes'][k]), geometry))
        samples.append(Sample(
            id=int(sample_id),
            entities=tuple(entities),
            features=arrays['features'][lo:hi],
            boxes=arrays['proposal_boxes'][lo:hi] if task == TaskKind.DETECTION else None,
        ))

    return Dataset(
        task=task,
        n_classes=metadata['n_classes'],
        feature_dim=metadata['feature_dim'],
        samples=samples,
        splits={name: arrays[f'split_{name}'].tolist() for name in Dataset.SPLITS},
        seed=metadata['seed'],
        spec=metadata.get('spec'),
        max_len=metadata.get('max_len'),
        labelled=metadata.get('labelled', True),
    )
