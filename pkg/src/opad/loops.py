"""
Active-learning orchestration: policy training over episodes and learning-curve
runs for a trained policy or a baseline strategy.
"""

import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .acquisition import AcquisitionStrategy, PolicyStrategy
from .annotator import Annotator, CostLedger, FeedbackOutcome
from .data_model import (DataPools, Dataset, EntityAnnotation, TaskKind, commit_selection,
                         init_deployment_pools, init_policy_training_pools, sample_candidates)
from .errors import BudgetExceeded, ConfigurationError, EndOfEpisode, IntegrityError
from .policy_dqn import PolicyAgent, Transition, compact_state, make_partition
from .rewards import (RewardBreakdown, RewardConfig, class_entropy_reward, combine, feedback_reward,
                      vanilla_reward)
from .state_encoder import build_state, embedding_dim
from .theta_models import ThetaModel, build_theta

logger = logging.getLogger(__name__)

# Independent RNG streams, keyed into every seed tuple
STREAMS = {'episode': 1, 'theta_init': 2, 'theta_train': 3, 'candidates': 4, 'select': 5,
           'optimize': 6, 'deploy_pools': 7, 'policy_init': 8, 'partition': 9}


def stream_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[stream], *[int(k) for k in keys]])


def stream_seed(seed: int, stream: str, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), STREAMS[stream], *[int(k) for k in keys]]).generate_state(1)[0])


def strategy_key(name: str) -> int:
    return zlib.crc32(name.encode('utf-8'))


@dataclass
class EpisodeConfig:
    """
    Settings of one active-learning run

    Budgets may be given as a labelled-sample count, as annotation seconds or
    both; every set budget is enforced.
    """
    task: TaskKind
    n_cycle: int
    n_init: int
    n_state: int
    n_pool: int = 4
    n_cycles: int = 10
    n_episodes: int = 10
    met_fraction: float = 0.1
    budget_samples: Optional[int] = None
    budget_seconds: float = math.inf
    labelling_mode: str = "strong"
    reward: RewardConfig = field(default_factory=RewardConfig)
    theta_iterations: int = 1000
    theta_params: Dict[str, Any] = field(default_factory=dict)
    policy_params: Dict[str, Any] = field(default_factory=dict)
    policy_updates_per_cycle: int = 1
    top_k: int = 10
    confidence_threshold: float = 0.5
    paired_sampling: bool = True
    seed: int = 0

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if self.labelling_mode not in ("strong", "weak"):
            raise ConfigurationError(f"labelling_mode must be strong or weak, got '{self.labelling_mode}'")
        if self.n_cycle < 1 or self.n_pool < 1 or self.n_cycles < 0:
            raise ConfigurationError("n_cycle and n_pool must be positive and n_cycles non-negative")
        if self.budget_samples is not None and self.budget_samples <= 0:
            raise ConfigurationError("budget_samples must be positive")
        if self.budget_seconds <= 0:
            raise ConfigurationError("budget_seconds must be positive")

    @property
    def weak(self) -> bool:
        return self.labelling_mode == "weak"


@dataclass
class CycleRecord:
    """One learning-curve point; cycle 0 is the seed-set model"""
    cycle: int
    selected_ids: Tuple[int, ...]
    reward: RewardBreakdown
    metric: float
    seconds_spent: int
    n_labelled: int
    batch_class_entropy: float = 0.0
    selection_wall_seconds: float = 0.0
    truncated: bool = False
    episode: int = 0


@dataclass
class PolicyTrainingResult:
    agent: PolicyAgent
    records: List[CycleRecord]
    losses: List[Dict[str, Any]]
    x_state: List[int]


@dataclass
class CurveResult:
    strategy: str
    labelling_mode: str
    records: List[CycleRecord]
    ledger: CostLedger


ZERO_REWARD = RewardBreakdown(0.0, 0.0, 0.0, 0.0)


def _labelled_pairs(dataset: Dataset, pools: DataPools) -> List[Tuple[Any, Tuple[EntityAnnotation, ...]]]:
    return [(dataset[i], pools.labels[i]) for i in sorted(pools.x_l)]


def _can_start_cycle(config: EpisodeConfig, pools: DataPools) -> bool:
    if config.budget_samples is not None and len(pools.x_l) + config.n_cycle > config.budget_samples:
        return False
    return len(pools.x_u) >= config.n_pool * config.n_cycle


class ActiveLearningLoop:
    """
    Shared machinery of the policy-training and curve loops

    Owns Θ, the annotator and the ledger of one run; the pools are passed in
    because the two loops build them from different splits.
    """

    def __init__(self, dataset: Dataset, config: EpisodeConfig):
        self.logger = logging.getLogger(__name__)
        self.dataset = dataset
        self.config = config
        self.annotator = Annotator(dataset.task, dataset.n_classes,
                                   confidence_threshold=config.confidence_threshold)
        self.theta: ThetaModel = build_theta(dataset, train_iterations=config.theta_iterations,
                                             **config.theta_params)

    def reset_theta(self, seed: int):
        self.theta.reset(seed)

    def retrain(self, pools: DataPools, rng: np.random.Generator):
        self.theta.train(_labelled_pairs(self.dataset, pools), self.config.theta_iterations, rng)

    def evaluate(self, pools: DataPools) -> float:
        return self.theta.evaluate(self.dataset.gather(pools.evaluation_ids())).value

    def annotate(self, pools: DataPools, selected: Sequence[int], ledger: CostLedger, cycle: int):
        """
        Annotate selected ids in order, charging the ledger, stopping before the
        first sample whose cost would overrun the seconds budget

        Returns:
            (committed ids, annotations by id, feedback outcomes, truncated flag)
        """
        committed, annotations, outcomes = [], {}, []
        cost_model = self.annotator.cost_model
        for sample_id in selected:
            sample = self.dataset[sample_id]
            if self.config.weak:
                outcome, labels, cost = self.annotator.annotate_weak(sample, self.theta.predict(sample), pools)
                split = {'verify': len(outcome.shown) * cost_model.verify,
                         'draw': len(outcome.added_strong) * cost_model.draw}
            else:
                labels, cost = self.annotator.annotate_strong(sample, pools)
                outcome, split = None, {'draw': cost}
            try:
                pools.charge(cost)
            except BudgetExceeded:
                self.logger.warning(f"Cycle {cycle}: seconds budget reached after {len(committed)} samples")
                return committed, annotations, outcomes, True
            for action, seconds in split.items():
                ledger.record(cycle, sample_id, action, seconds)
            committed.append(sample_id)
            annotations[sample_id] = labels
            if outcome is not None:
                outcomes.append(outcome)
        return committed, annotations, outcomes, False

    def reward(self, metric: float, metric_prev: float, annotations: Dict[int, Sequence[EntityAnnotation]],
               outcomes: List[FeedbackOutcome]) -> Tuple[RewardBreakdown, float]:
        """Configured reward plus the batch class entropy (always reported)"""
        entropy = class_entropy_reward(annotations[i] for i in sorted(annotations))
        feedback = 0.0
        if self.config.weak and self.dataset.task == TaskKind.DETECTION and outcomes:
            feedback = feedback_reward(outcomes, self.dataset.n_classes)
        reward = combine(self.config.reward, vanilla_reward(metric, metric_prev), entropy, feedback)
        return reward, entropy


def run_policy_training(dataset: Dataset, config: EpisodeConfig,
                        agent: Optional[PolicyAgent] = None) -> PolicyTrainingResult:
    """
    Train Π over ``n_episodes`` simulated active-learning episodes

    Each episode re-initialises Θ and redraws x_init while x_met and x_state
    stay fixed. Each cycle selects ε-greedily, annotates, retrains Θ,
    rewards the metric change on x_met and pushes one transition; the next
    state is built on a freshly drawn candidate set, which is also the
    candidate set the next cycle acts on.

    Args:
        dataset: Dataset whose train split hosts the episodes
        config: Episode settings
        agent: Existing agent to continue training; a new one is built if None

    Returns:
        PolicyTrainingResult with the agent, per-cycle records and loss log
    """
    seed = config.seed
    if config.reward.use_feedback and not config.weak:
        raise ConfigurationError("The feedback reward needs weak labelling")
    if agent is None:
        dim = embedding_dim(dataset.task, dataset.n_classes, dataset.feature_dim, config.top_k, dataset.max_len)
        agent = PolicyAgent(dim, seed=stream_seed(seed, 'policy_init'), **config.policy_params)
    loop = ActiveLearningLoop(dataset, config)
    records: List[CycleRecord] = []
    losses: List[Dict[str, Any]] = []
    x_state: List[int] = []

    for episode in range(config.n_episodes):
        pools = init_policy_training_pools(
            dataset, config.n_init, config.n_state, config.met_fraction, rng_seed=seed,
            episode_seed=stream_seed(seed, 'episode', episode), budget_seconds=config.budget_seconds,
        )
        if len(pools.x_u) < config.n_cycles * config.n_cycle:
            raise ConfigurationError(
                f"x_u holds {len(pools.x_u)} samples, fewer than n_cycles·n_cycle={config.n_cycles * config.n_cycle}"
            )
        x_state = sorted(pools.x_state)
        ledger = CostLedger()
        loop.reset_theta(stream_seed(seed, 'theta_init', episode))
        loop.retrain(pools, stream_rng(seed, 'theta_train', episode, 0))
        metric_prev = loop.evaluate(pools)
        records.append(CycleRecord(0, (), ZERO_REWARD, metric_prev, 0, len(pools.x_l), episode=episode))
        logger.info(f"Episode {episode}: initial metric {metric_prev:.4f}")

        if config.n_cycles == 0 or not _can_start_cycle(config, pools):
            continue
        candidates = sample_candidates(pools, config.n_pool, config.n_cycle, stream_rng(seed, 'candidates', episode, 0))
        pools.x_cand = set(candidates)
        state = build_state(loop.theta, dataset, candidates, pools.x_state, config.top_k, cycle_index=0)
        partition = make_partition(len(state.cand_ids), config.n_cycle, stream_rng(seed, 'partition', episode, 0))
        stored_state = compact_state(state)

        for cycle in range(config.n_cycles):
            started = time.perf_counter()
            epsilon = agent.epsilon(cycle)
            actions, partition = agent.select_actions(state, config.n_cycle, epsilon,
                                                      stream_rng(seed, 'select', episode, cycle), partition)
            selected = [state.cand_ids[a] for a in actions.tolist()]
            selection_seconds = time.perf_counter() - started

            committed, annotations, outcomes, truncated = loop.annotate(pools, selected, ledger, cycle + 1)
            commit_selection(pools, committed, annotations, weak=config.weak)
            pools.x_cand = set()
            pools.check_invariants()
            loop.retrain(pools, stream_rng(seed, 'theta_train', episode, cycle + 1))
            metric = loop.evaluate(pools)
            reward, entropy = loop.reward(metric, metric_prev, annotations, outcomes)

            terminal = truncated or cycle == config.n_cycles - 1 or not _can_start_cycle(config, pools)
            next_state = next_partition = stored_next = None
            if not terminal:
                candidates = sample_candidates(pools, config.n_pool, config.n_cycle,
                                               stream_rng(seed, 'candidates', episode, cycle + 1))
                pools.x_cand = set(candidates)
                next_state = build_state(loop.theta, dataset, candidates, pools.x_state, config.top_k,
                                         cycle_index=cycle + 1)
                next_partition = make_partition(len(next_state.cand_ids), config.n_cycle,
                                                stream_rng(seed, 'partition', episode, cycle + 1))
                stored_next = compact_state(next_state)
            agent.push(Transition(stored_state, partition, actions, reward.total, stored_next,
                                  next_partition, terminal))

            optimize_rng = stream_rng(seed, 'optimize', episode, cycle)
            lr = agent.optimizer.lr
            step_losses = []
            for _ in range(config.policy_updates_per_cycle):
                step_losses.append(agent.optimize(optimize_rng))
                logger.debug(f"Update {agent.updates}: loss {step_losses[-1]:.6f}")
            losses.append({'episode': episode, 'cycle': cycle + 1, 'updates': agent.updates,
                           'loss': float(np.mean(step_losses)), 'last_loss': step_losses[-1],
                           'epsilon': epsilon, 'lr': lr, 'reward': reward.total})

            records.append(CycleRecord(
                cycle=cycle + 1, selected_ids=tuple(committed), reward=reward, metric=metric,
                seconds_spent=ledger.total_seconds, n_labelled=len(pools.x_l), batch_class_entropy=entropy,
                selection_wall_seconds=selection_seconds, truncated=truncated, episode=episode,
            ))
            logger.info(f"Episode {episode} cycle {cycle + 1}: metric {metric:.4f} reward {reward.total:+.4f} "
                        f"ε={epsilon:.3g} loss={losses[-1]['loss']:.5f}")
            metric_prev = metric
            if terminal:
                break
            state, partition, stored_state = next_state, next_partition, stored_next

    return PolicyTrainingResult(agent=agent, records=records, losses=losses, x_state=x_state)


def run_learning_curve(dataset: Dataset, strategy: AcquisitionStrategy, config: EpisodeConfig,
                       x_state: Optional[Sequence[int]] = None) -> CurveResult:
    """
    Deployment-regime active learning on the val split, reporting on x_test

    Pools, Θ initialisation and Θ training streams depend only on the seed;
    candidate draws are shared across strategies unless paired sampling is off.
    """
    seed = config.seed
    if not dataset.labelled or not dataset.split("test"):
        raise IntegrityError("Deployment needs a labelled, non-empty x_test")
    pools = init_deployment_pools(dataset, config.n_init, stream_seed(seed, 'deploy_pools'),
                                  x_state=x_state, budget_seconds=config.budget_seconds)
    loop = ActiveLearningLoop(dataset, config)
    ledger = CostLedger()
    loop.reset_theta(stream_seed(seed, 'theta_init'))
    loop.retrain(pools, stream_rng(seed, 'theta_train', 0))
    metric_prev = loop.evaluate(pools)
    records = [CycleRecord(0, (), ZERO_REWARD, metric_prev, 0, len(pools.x_l))]
    candidate_keys = () if config.paired_sampling else (strategy_key(strategy.name),)

    for cycle in range(config.n_cycles):
        if not _can_start_cycle(config, pools):
            break
        try:
            candidates = sample_candidates(pools, config.n_pool, config.n_cycle,
                                           stream_rng(seed, 'candidates', cycle + 1, *candidate_keys))
        except EndOfEpisode:
            break
        pools.x_cand = set(candidates)
        started = time.perf_counter()
        selected = strategy.select(loop.theta, dataset, candidates, config.n_cycle, pools,
                                   stream_rng(seed, 'select', cycle + 1))
        selection_seconds = time.perf_counter() - started

        committed, annotations, outcomes, truncated = loop.annotate(pools, selected, ledger, cycle + 1)
        commit_selection(pools, committed, annotations, weak=config.weak)
        pools.x_cand = set()
        pools.check_invariants()
        loop.retrain(pools, stream_rng(seed, 'theta_train', cycle + 1))
        metric = loop.evaluate(pools)
        reward, entropy = loop.reward(metric, metric_prev, annotations, outcomes)
        records.append(CycleRecord(
            cycle=cycle + 1, selected_ids=tuple(committed), reward=reward, metric=metric,
            seconds_spent=ledger.total_seconds, n_labelled=len(pools.x_l), batch_class_entropy=entropy,
            selection_wall_seconds=selection_seconds, truncated=truncated,
        ))
        logger.info(f"{strategy.name}/{config.labelling_mode} cycle {cycle + 1}: metric {metric:.4f} "
                    f"|x_l|={len(pools.x_l)} seconds={ledger.total_seconds} (+{ledger.seconds_for(cycle + 1)})")
        metric_prev = metric
        if truncated:
            break

    return CurveResult(strategy=strategy.name, labelling_mode=config.labelling_mode, records=records, ledger=ledger)


def run_deployment(dataset: Dataset, trained_policy: PolicyAgent, config: EpisodeConfig,
                   x_state: Sequence[int]) -> CurveResult:
    """Learning curve of a frozen policy with ε = 0"""
    strategy = PolicyStrategy(trained_policy, top_k=config.top_k, epsilon=trained_policy.epsilon(0, deployment=True))
    return run_learning_curve(dataset, strategy, config, x_state=x_state)


def run_baseline(dataset: Dataset, strategy: AcquisitionStrategy, config: EpisodeConfig,
                 x_state: Optional[Sequence[int]] = None) -> CurveResult:
    return run_learning_curve(dataset, strategy, config, x_state=x_state)
