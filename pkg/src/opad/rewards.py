"""
Policy rewards: metric delta, class-balance entropy of an acquired batch and
human-feedback gain, combined linearly.
"""

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.stats

from .annotator import FeedbackOutcome, label_predictions
from .data_model import EntityAnnotation, TaskKind
from .errors import ConfigurationError
from .metrics import average_precision

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewardConfig:
    use_class_entropy: bool = False
    lambda_cls: float = 0.0
    use_feedback: bool = False
    lambda_fb: float = 0.0
    metric_kind: str = "AP"
    task: TaskKind = TaskKind.DETECTION

    def __post_init__(self):
        if self.lambda_cls < 0 or self.lambda_fb < 0:
            raise ConfigurationError("Reward λ values must be non-negative")
        if self.use_feedback and TaskKind(self.task) != TaskKind.DETECTION:
            raise ConfigurationError("The feedback reward applies to detection tasks only")
        if self.metric_kind not in ("AP", "Fscore"):
            raise ConfigurationError(f"Unknown metric kind '{self.metric_kind}'")

    @property
    def variant(self) -> str:
        """Short name used in checkpoint and cell names"""
        parts = ["vanilla"]
        if self.use_class_entropy:
            parts.append(f"cls{self.lambda_cls:g}")
        if self.use_feedback:
            parts.append(f"fb{self.lambda_fb:g}")
        return "-".join(parts)


@dataclass(frozen=True)
class RewardBreakdown:
    vanilla: float
    cls_entropy: float
    feedback: float
    total: float


def vanilla_reward(metric_t: float, metric_prev: float) -> float:
    return float(metric_t) - float(metric_prev)


def class_entropy(annotations: Iterable[EntityAnnotation]) -> float:
    """Entropy (natural log) of the empirical class distribution; 0 without entities"""
    counts = Counter(a.class_id for a in annotations)
    if not counts:
        return 0.0
    return float(scipy.stats.entropy(np.array([counts[k] for k in sorted(counts)], dtype=np.float64)))


def class_entropy_reward(new_samples: Iterable[Sequence[EntityAnnotation]]) -> float:
    """
    Class-balance reward of a newly acquired batch

    Args:
        new_samples: GT entity labels of each acquired sample
    """
    return class_entropy(a for sample in new_samples for a in sample)


def feedback_reward(outcomes: Sequence[FeedbackOutcome], n_classes: int,
                    task: TaskKind = TaskKind.DETECTION) -> float:
    """
    AP of the corrected labels minus AP of Θ's shown predictions over the batch

    Raises:
        ConfigurationError: called for a sequence task
    """
    if TaskKind(task) != TaskKind.DETECTION:
        raise ConfigurationError("The feedback reward applies to detection tasks only")
    gt = {o.sample_id: o.ground_truth for o in outcomes}
    before = average_precision({o.sample_id: o.shown for o in outcomes}, gt, n_classes).value
    after = average_precision(
        {o.sample_id: label_predictions(o.annotations, n_classes + 1) for o in outcomes}, gt, n_classes
    ).value
    return after - before


def combine(config: RewardConfig, vanilla: float, cls_entropy: float = 0.0,
            feedback: float = 0.0) -> RewardBreakdown:
    """total = vanilla + λ_cls·H + λ_fb·feedback, disabled terms contributing 0"""
    total = float(vanilla)
    if config.use_class_entropy and config.lambda_cls:
        total += config.lambda_cls * cls_entropy
    if config.use_feedback and config.lambda_fb:
        total += config.lambda_fb * feedback
    return RewardBreakdown(vanilla=float(vanilla), cls_entropy=float(cls_entropy),
                           feedback=float(feedback), total=total)
