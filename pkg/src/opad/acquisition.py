"""
Acquisition strategies: random, uncertainty baselines and the learned policy.

Uncertainty scores aggregate over the entities Θ actually emits for a sample
(background-suppressed detections, decoded spans).
"""

import logging
from abc import ABC, abstractmethod
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.stats

from .data_model import DataPools, Dataset, Prediction
from .errors import ConfigurationError
from .policy_dqn import PolicyAgent
from .state_encoder import DEFAULT_TOP_K, StateRepr, build_state
from .theta_models import ThetaModel

STRATEGIES = ("random", "entropy_max", "entropy_sum", "margin", "policy")
MARGIN_DIRECTIONS = ("highest", "lowest")


def prediction_entropy(prediction: Prediction) -> float:
    """Shannon entropy (natural log) of one class-score vector"""
    return float(scipy.stats.entropy(prediction.class_scores))


def prediction_margin(prediction: Prediction) -> float:
    """p_(1) − p_(2)"""
    top = np.sort(prediction.class_scores)[::-1]
    return float(top[0] - top[1])


def score_sample_entropy(predictions: Sequence[Prediction], mode: str = "max") -> float:
    """
    Aggregate per-entity entropy: ``max`` or ``sum``; 0 without entities
    """
    if mode not in ("max", "sum"):
        raise ValueError(f"Unknown entropy aggregation '{mode}'")
    if not predictions:
        return 0.0
    values = [prediction_entropy(p) for p in predictions]
    return float(max(values)) if mode == "max" else float(np.sum(values))


def score_sample_margin(predictions: Sequence[Prediction]) -> float:
    """Largest v_1vs2 over the sample's entities; 0 without entities"""
    if not predictions:
        return 0.0
    return max(prediction_margin(p) for p in predictions)


def top_n_by_score(scores: Dict[int, float], n: int) -> List[int]:
    """Ids of the n highest scores; ties go to the lowest id"""
    return [i for i, _ in sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:n]]


class AcquisitionStrategy(ABC):
    """Pool-based selection of n_cycle ids from the candidate set"""

    name: str = ""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def select(self, theta: ThetaModel, dataset: Dataset, x_cand: Iterable[int], n_cycle: int,
               pools: DataPools, rng: np.random.Generator) -> List[int]:
        candidates = sorted(int(i) for i in x_cand)
        if len(candidates) < n_cycle:
            raise ValueError(f"Candidate set of {len(candidates)} cannot supply {n_cycle} samples")
        selected = self._select(theta, dataset, candidates, n_cycle, pools, rng)
        self.logger.debug(f"{self.name} selected {len(selected)} of {len(candidates)} candidates")
        return selected

    @abstractmethod
    def _select(self, theta: ThetaModel, dataset: Dataset, candidates: List[int], n_cycle: int,
                pools: DataPools, rng: np.random.Generator) -> List[int]:
        pass


class RandomStrategy(AcquisitionStrategy):
    name = "random"

    def _select(self, theta, dataset, candidates, n_cycle, pools, rng):
        idx = rng.choice(len(candidates), size=n_cycle, replace=False)
        return [candidates[i] for i in idx.tolist()]


class ScoreStrategy(AcquisitionStrategy):
    """Top-n_cycle candidates by a per-sample score of Θ's predictions"""

    def __init__(self, scorer: Callable[[Sequence[Prediction]], float], higher_first: bool = True):
        super().__init__()
        self.scorer = scorer
        self.higher_first = higher_first

    def scores(self, theta: ThetaModel, dataset: Dataset, candidates: Sequence[int]) -> Dict[int, float]:
        predictions = theta.predict_many(dataset.gather(candidates))
        sign = 1.0 if self.higher_first else -1.0
        return {i: sign * self.scorer(predictions[i]) for i in candidates}

    def _select(self, theta, dataset, candidates, n_cycle, pools, rng):
        return top_n_by_score(self.scores(theta, dataset, candidates), n_cycle)


class EntropyMaxStrategy(ScoreStrategy):
    name = "entropy_max"

    def __init__(self):
        super().__init__(lambda preds: score_sample_entropy(preds, "max"))


class EntropySumStrategy(ScoreStrategy):
    name = "entropy_sum"

    def __init__(self):
        super().__init__(lambda preds: score_sample_entropy(preds, "sum"))


class MarginStrategy(ScoreStrategy):
    """Highest aggregate margin first, or the classical lowest-first order"""

    name = "margin"

    def __init__(self, direction: str = "highest"):
        if direction not in MARGIN_DIRECTIONS:
            raise ConfigurationError(f"margin_direction must be one of {MARGIN_DIRECTIONS}, got '{direction}'")
        super().__init__(score_sample_margin, higher_first=direction == "highest")
        self.direction = direction


class PolicyStrategy(AcquisitionStrategy):
    """
    Delegates to the policy's ε-greedy per-mini-batch choice

    The state and partition of the last call are kept for callers that
    record transitions.
    """

    name = "policy"

    def __init__(self, agent: PolicyAgent, top_k: int = DEFAULT_TOP_K, epsilon: float = 0.0):
        super().__init__()
        self.agent = agent
        self.top_k = int(top_k)
        self.epsilon = float(epsilon)
        self.last_state: Optional[StateRepr] = None
        self.last_partition: Optional[np.ndarray] = None
        self.last_actions: Optional[np.ndarray] = None

    def _select(self, theta, dataset, candidates, n_cycle, pools, rng):
        if not pools.x_state:
            raise ConfigurationError("The policy strategy needs a non-empty x_state")
        state = build_state(theta, dataset, candidates, pools.x_state, self.top_k)
        return self.select_from_state(state, n_cycle, rng)

    def select_from_state(self, state: StateRepr, n_cycle: int, rng: np.random.Generator) -> List[int]:
        actions, partition = self.agent.select_actions(state, n_cycle, self.epsilon, rng)
        self.last_state, self.last_partition, self.last_actions = state, partition, actions
        return [state.cand_ids[a] for a in actions.tolist()]


def build_strategy(name: str, agent: Optional[PolicyAgent] = None, margin_direction: str = "highest",
                   top_k: int = DEFAULT_TOP_K) -> AcquisitionStrategy:
    """Strategy from its config string"""
    if name == "random":
        return RandomStrategy()
    if name == "entropy_max":
        return EntropyMaxStrategy()
    if name == "entropy_sum":
        return EntropySumStrategy()
    if name == "margin":
        return MarginStrategy(margin_direction)
    if name == "policy":
        if agent is None:
            raise ConfigurationError("The policy strategy needs a trained policy checkpoint")
        return PolicyStrategy(agent, top_k=top_k, epsilon=0.0)
    raise ConfigurationError(f"Unknown strategy '{name}'; expected one of {STRATEGIES}")


def select(strategy: AcquisitionStrategy, theta: ThetaModel, dataset: Dataset, x_cand: Iterable[int],
           n_cycle: int, pools: DataPools, rng: np.random.Generator) -> List[int]:
    return strategy.select(theta, dataset, x_cand, n_cycle, pools, rng)
