"""
Experiment harness: dataset generation, policy training over the reward
variants, evaluation of the strategy × labelling-mode matrix and aggregation
of the per-cycle CSVs into summaries.

Every file except the manifests is a pure function of the configuration and
the master seed.
"""

import glob
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import auc

from .. import __version__
from ..data_generator import (DetectionTaskSpec, SequenceTaskSpec, dataset_path, generate_all_datasets,
                              generate_dataset)
from .acquisition import build_strategy
from .config import ExperimentConfig
from .data_model import Dataset, TaskKind, draw_state_set, load_dataset, save_dataset
from .errors import ConfigurationError
from .loops import CurveResult, CycleRecord, EpisodeConfig, run_baseline, run_deployment, run_policy_training
from .policy_dqn import load_policy_checkpoint, save_policy_checkpoint
from .rewards import RewardConfig
from .utils import save_results, save_results_csv

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["run_id", "task", "strategy", "labelling_mode", "seed", "cycle", "n_labelled", "metric",
                 "reward_total", "reward_vanilla", "reward_cls", "reward_fb", "batch_class_entropy",
                 "seconds_spent", "truncated"]
EPISODE_COLUMNS = ["episode", "cycle", "n_labelled", "metric", "reward_total", "reward_vanilla", "reward_cls",
                   "reward_fb", "batch_class_entropy", "seconds_spent", "truncated"]
LOSS_COLUMNS = ["episode", "cycle", "updates", "loss", "last_loss", "epsilon", "lr", "reward"]
RUN_KEYS = ["task", "strategy", "labelling_mode"]


@dataclass(frozen=True)
class Cell:
    """One (task, strategy, labelling mode) entry of the evaluation matrix"""
    task: str
    strategy: str
    labelling_mode: str
    variant: str = "vanilla"

    @property
    def strategy_label(self) -> str:
        if self.strategy != "policy" or self.variant == "vanilla":
            return self.strategy
        return "policy-" + self.variant.replace("vanilla-", "", 1)

    @property
    def name(self) -> str:
        return f"{self.strategy_label}_{self.labelling_mode}"


# ---------------------------------------------------------------- builders

def task_spec(config: ExperimentConfig, task: str):
    """Generator spec of a task from the experiment config"""
    if TaskKind(task) == TaskKind.DETECTION:
        return DetectionTaskSpec(
            n_classes=config.detection_n_classes,
            feature_dim=config.detection_feature_dim,
            feature_noise_sigma=config.detection_noise_sigma,
            distractor_rate=config.detection_distractor_rate,
            box_jitter_sigma=config.detection_jitter_sigma,
            val_fraction=config.val_fraction,
            test_fraction=config.test_fraction,
        )
    return SequenceTaskSpec(
        n_entity_classes=config.sequence_n_classes,
        max_len=config.sequence_max_len,
        length_range=(min(20, config.sequence_max_len), config.sequence_max_len),
        feature_dim=config.sequence_feature_dim,
        feature_noise_sigma=config.sequence_noise_sigma,
        val_fraction=config.val_fraction,
        test_fraction=config.test_fraction,
    )


def n_samples_for(config: ExperimentConfig, task: str) -> int:
    return config.detection_n_samples if TaskKind(task) == TaskKind.DETECTION else config.sequence_n_samples


def reward_variants(config: ExperimentConfig, task: str, labelling_mode: str) -> List[RewardConfig]:
    """
    Reward configurations trained and evaluated for a (task, mode) pair

    The base reward follows the config flags; with ablation on, strong
    labelling adds one class-balance variant per λ_cls and weak detection
    labelling adds one feedback variant per λ_fb.
    """
    kind = TaskKind(task)
    metric_kind = "AP" if kind == TaskKind.DETECTION else "Fscore"
    feedback_ok = kind == TaskKind.DETECTION and labelling_mode == "weak"
    variants = [RewardConfig(
        use_class_entropy=config.use_class_entropy, lambda_cls=config.lambda_cls,
        use_feedback=config.use_feedback and feedback_ok, lambda_fb=config.lambda_fb,
        metric_kind=metric_kind, task=kind,
    )]
    if config.ablation:
        if labelling_mode == "strong":
            variants += [RewardConfig(use_class_entropy=True, lambda_cls=lam, metric_kind=metric_kind, task=kind)
                         for lam in config.lambda_cls_grid]
        if feedback_ok:
            variants += [RewardConfig(use_feedback=True, lambda_fb=lam, metric_kind=metric_kind, task=kind)
                         for lam in config.lambda_fb_grid]
    unique: Dict[str, RewardConfig] = {}
    for variant in variants:
        unique.setdefault(variant.variant, variant)
    return list(unique.values())


def episode_config(config: ExperimentConfig, task: str, labelling_mode: str,
                   reward: Optional[RewardConfig] = None, seed: Optional[int] = None) -> EpisodeConfig:
    if reward is None:
        reward = reward_variants(config, task, labelling_mode)[0]
    return EpisodeConfig(
        task=TaskKind(task),
        n_cycle=config.task_value(task, 'n_cycle'),
        n_init=config.task_value(task, 'n_init'),
        n_state=config.task_value(task, 'n_state'),
        n_pool=config.n_pool,
        n_cycles=config.n_cycles,
        n_episodes=config.n_episodes,
        met_fraction=config.met_fraction,
        budget_samples=config.budget_samples_for(task),
        budget_seconds=config.budget_seconds_for(task),
        labelling_mode=labelling_mode,
        reward=reward,
        theta_iterations=config.theta_iterations,
        theta_params={
            'hidden': config.theta_hidden, 'learning_rate': config.theta_lr, 'momentum': config.theta_momentum,
            'batch_size': config.theta_batch_size, 'cold_start': config.cold_start,
        },
        policy_params={
            'hidden': config.policy_hidden, 'lr': config.policy_lr, 'momentum': config.policy_momentum,
            'lr_decay': config.policy_lr_decay, 'gamma': config.gamma, 'batch_size': config.policy_batch_size,
            'replay_capacity': config.replay_capacity, 'target_sync_every': config.target_sync_every,
            'target_style': config.target_style, 'eps0': config.eps0, 'eps_factor': config.eps_factor,
            'eps_decay_mode': config.eps_decay_mode,
        },
        policy_updates_per_cycle=config.policy_updates_per_cycle,
        top_k=config.top_k,
        confidence_threshold=config.confidence_threshold,
        paired_sampling=config.paired_sampling,
        seed=config.seed if seed is None else int(seed),
    )


def policy_path(output_dir: str, task: str, labelling_mode: str, variant: str) -> str:
    return os.path.join(output_dir, "policy", f"{task}_{labelling_mode}_{variant}.npz")


def experiment_cells(config: ExperimentConfig) -> List[Cell]:
    cells = []
    for task in config.tasks:
        for mode in config.labelling_modes:
            for strategy in config.strategies:
                if strategy != "policy":
                    cells.append(Cell(task, strategy, mode))
                    continue
                cells.extend(Cell(task, "policy", mode, reward.variant)
                             for reward in reward_variants(config, task, mode))
    return cells


# ---------------------------------------------------------------- datasets

def _spec_matches(dataset: Dataset, spec, n_samples: int) -> bool:
    expected = json.loads(json.dumps(asdict(spec)))
    return len(dataset) == n_samples and json.loads(json.dumps(dataset.spec)) == expected


def ensure_dataset(config: ExperimentConfig, task: str, seed: int) -> str:
    """Write the (task, seed) dataset unless an identical one is on disk"""
    spec, n_samples = task_spec(config, task), n_samples_for(config, task)
    path = dataset_path(config.output_dir, task, seed)
    if os.path.exists(path):
        if _spec_matches(load_dataset(path), spec, n_samples):
            return path
        logger.warning(f"{path} was generated from different settings; regenerating")
    return save_dataset(generate_dataset(task, spec, n_samples, seed), path)


def cli_generate(config: ExperimentConfig) -> List[str]:
    """
    Generate the synthetic datasets of every configured task

    One file per (task, seed) for the master seed and every evaluation seed;
    rerunning with the same config rewrites identical bytes.
    """
    specs = {task: task_spec(config, task) for task in config.tasks}
    n_samples = {task: n_samples_for(config, task) for task in config.tasks}
    return generate_all_datasets(specs, n_samples, sorted({config.seed, *config.seeds}), config.output_dir)


# ---------------------------------------------------------------- workers

def _run_jobs(fn: Callable, jobs: Sequence[Tuple], workers: int) -> List[Any]:
    """Run independent jobs, in worker processes when workers > 1; results keep job order"""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    results: Dict[int, Any] = {}
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, *job): idx for idx, job in enumerate(jobs)}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return [results[idx] for idx in range(len(jobs))]


def _record_row(record: CycleRecord) -> Dict[str, Any]:
    return {
        'cycle': record.cycle,
        'n_labelled': record.n_labelled,
        'metric': record.metric,
        'reward_total': record.reward.total,
        'reward_vanilla': record.reward.vanilla,
        'reward_cls': record.reward.cls_entropy,
        'reward_fb': record.reward.feedback,
        'batch_class_entropy': record.batch_class_entropy,
        'seconds_spent': record.seconds_spent,
        'truncated': record.truncated,
    }


def curve_frame(cell: Cell, seed: int, result: CurveResult) -> pd.DataFrame:
    """Per-cycle rows of one deployment run"""
    rows = []
    for record in result.records:
        row = {'run_id': f"{cell.task}/{cell.name}/seed{seed}", 'task': cell.task,
               'strategy': cell.strategy_label, 'labelling_mode': cell.labelling_mode, 'seed': int(seed)}
        row.update(_record_row(record))
        rows.append(row)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def _train_policy_job(config: ExperimentConfig, task: str, labelling_mode: str,
                      reward: RewardConfig) -> Dict[str, Any]:
    dataset = load_dataset(dataset_path(config.output_dir, task, config.seed))
    episode = episode_config(config, task, labelling_mode, reward)
    result = run_policy_training(dataset, episode)

    path = policy_path(config.output_dir, task, labelling_mode, reward.variant)
    stem = path[:-len(".npz")]
    extra = {
        'task': task, 'labelling_mode': labelling_mode, 'variant': reward.variant,
        'reward': {'use_class_entropy': reward.use_class_entropy, 'lambda_cls': reward.lambda_cls,
                   'use_feedback': reward.use_feedback, 'lambda_fb': reward.lambda_fb},
        'seed': config.seed, 'x_state': result.x_state, 'top_k': config.top_k,
    }
    save_policy_checkpoint(result.agent, path, extra)
    save_results_csv(pd.DataFrame(result.losses, columns=LOSS_COLUMNS), f"{stem}_loss.csv")
    episodes = pd.DataFrame([dict(episode=r.episode, **_record_row(r)) for r in result.records],
                            columns=EPISODE_COLUMNS)
    save_results_csv(episodes, f"{stem}_episodes.csv")
    final_loss = result.losses[-1]['loss'] if result.losses else float('nan')
    return {'task': task, 'labelling_mode': labelling_mode, 'variant': reward.variant, 'checkpoint': path,
            'updates': result.agent.updates, 'final_loss': final_loss}


def _evaluate_cell_job(config: ExperimentConfig, cell: Cell, seed: int) -> Dict[str, Any]:
    dataset = load_dataset(dataset_path(config.output_dir, cell.task, seed))
    rewards = {r.variant: r for r in reward_variants(config, cell.task, cell.labelling_mode)}
    episode = episode_config(config, cell.task, cell.labelling_mode, rewards.get(cell.variant), seed)
    x_state = sorted(draw_state_set(dataset, episode.n_state, episode.met_fraction, seed))

    if cell.strategy == "policy":
        agent = load_policy_checkpoint(policy_path(config.output_dir, cell.task, cell.labelling_mode, cell.variant))
        result = run_deployment(dataset, agent, episode, x_state)
    else:
        strategy = build_strategy(cell.strategy, margin_direction=config.margin_direction, top_k=config.top_k)
        result = run_baseline(dataset, strategy, episode, x_state=x_state)

    curve_path = os.path.join(config.output_dir, "curves", cell.task, f"{cell.name}_seed{seed}.csv")
    ledger_path = os.path.join(config.output_dir, "ledgers", cell.task, f"{cell.name}_seed{seed}.csv")
    save_results_csv(curve_frame(cell, seed, result), curve_path)
    result.ledger.to_csv(ledger_path)
    timings = [r.selection_wall_seconds for r in result.records if r.cycle > 0]
    return {'cell': f"{cell.task}/{cell.name}", 'seed': int(seed), 'curve': curve_path,
            'selection_seconds': float(np.mean(timings)) if timings else 0.0}


# ---------------------------------------------------------------- commands

def cli_train_policy(config: ExperimentConfig) -> List[Dict[str, Any]]:
    """
    Train one policy per (task, labelling mode, reward variant)

    Writes ``policy/{task}_{mode}_{variant}.npz`` with ``_loss.csv`` (one row
    per cycle) and ``_episodes.csv`` next to it, plus ``policy/manifest.json``.
    """
    jobs = []
    for task in config.tasks:
        ensure_dataset(config, task, config.seed)
        for mode in config.labelling_modes:
            jobs.extend((config, task, mode, reward) for reward in reward_variants(config, task, mode))
    logger.info(f"Training {len(jobs)} policies with {config.workers} worker(s)")
    trained = _run_jobs(_train_policy_job, jobs, config.workers)
    for entry in trained:
        logger.info(f"{entry['task']}/{entry['labelling_mode']}/{entry['variant']}: "
                    f"{entry['updates']} updates, final loss {entry['final_loss']:.5f}")
    save_results({
        'version': __version__,
        'created': datetime.now().isoformat(),
        'config': config.to_dict(),
        'policies': trained,
    }, os.path.join(config.output_dir, "policy", "manifest.json"))
    return trained


def cli_evaluate(config: ExperimentConfig) -> pd.DataFrame:
    """
    Run every cell of the evaluation matrix over every seed and summarise

    Raises:
        ConfigurationError: a policy cell has no trained checkpoint
    """
    cells = experiment_cells(config)
    for cell in cells:
        if cell.strategy == "policy":
            path = policy_path(config.output_dir, cell.task, cell.labelling_mode, cell.variant)
            if not os.path.exists(path):
                raise ConfigurationError(f"Cell {cell.task}/{cell.name}: policy checkpoint {path} not found; "
                                         f"run train-policy first")
    for task in config.tasks:
        for seed in config.seeds:
            ensure_dataset(config, task, seed)

    jobs = [(config, cell, seed) for cell in cells for seed in config.seeds]
    logger.info(f"Evaluating {len(cells)} cells × {len(config.seeds)} seeds with {config.workers} worker(s)")
    runs = _run_jobs(_evaluate_cell_job, jobs, config.workers)

    selection = pd.DataFrame(runs).groupby('cell', sort=True)['selection_seconds'].mean()
    save_results({
        'version': __version__,
        'created': datetime.now().isoformat(),
        'config': config.to_dict(),
        'seeds': list(config.seeds),
        'cells': [f"{c.task}/{c.name}" for c in cells],
        'mean_selection_seconds': {k: float(v) for k, v in selection.items()},
    }, os.path.join(config.output_dir, "manifest.json"))
    return cli_report(config)


def cli_report(config: ExperimentConfig) -> pd.DataFrame:
    """Rebuild summary.csv, runs.csv, curve_summary.csv and comparisons.csv from the curve CSVs"""
    curves_dir = os.path.join(config.output_dir, "curves")
    targets = {task: config.task_value(task, 'target_metric') for task in config.tasks}
    runs, summary, curve_summary = aggregate_results(curves_dir, targets)
    save_results_csv(runs, os.path.join(config.output_dir, "runs.csv"))
    save_results_csv(summary, os.path.join(config.output_dir, "summary.csv"))
    save_results_csv(curve_summary, os.path.join(config.output_dir, "curve_summary.csv"))
    save_results_csv(compare_paired(runs), os.path.join(config.output_dir, "comparisons.csv"))
    logger.info(f"Summarised {len(runs)} runs into {len(summary)} cells")
    return summary


# ---------------------------------------------------------------- aggregation

def learning_curve_area(n_labelled: Sequence[float], metric: Sequence[float]) -> float:
    """Area under metric vs |x_l|, divided by the |x_l| range so it reads on the metric scale"""
    x = np.asarray(n_labelled, dtype=np.float64)
    y = np.asarray(metric, dtype=np.float64)
    if len(x) < 2 or x[-1] == x[0]:
        return float(y[-1]) if len(y) else float('nan')
    return float(auc(x, y) / (x[-1] - x[0]))


def seconds_to_target(frame: pd.DataFrame, target: float) -> float:
    """Cumulative annotation seconds at the first cycle whose metric reaches ``target``; NaN if never"""
    reached = frame[frame['metric'] >= target]
    if reached.empty:
        return float('nan')
    return float(reached.sort_values('cycle')['seconds_spent'].iloc[0])


def load_curves(curves_dir: str) -> pd.DataFrame:
    paths = sorted(glob.glob(os.path.join(curves_dir, "*", "*.csv")))
    if not paths:
        raise ConfigurationError(f"No curve CSVs found under {curves_dir}; run evaluate first")
    return pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)


def aggregate_results(curves, targets: Dict[str, float]) -> Tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """
    Per-run and per-cell statistics of learning curves

    Args:
        curves: Curve CSV directory or an already loaded curve DataFrame
        targets: Target metric per task for the seconds-to-target column

    Returns:
        (runs, summary, curve_summary) DataFrames
    """
    frame = load_curves(curves) if isinstance(curves, str) else curves
    run_rows = []
    for (task, strategy, mode, seed), run in frame.groupby(RUN_KEYS + ["seed"], sort=True):
        run = run.sort_values('cycle')
        acquired = run[run['cycle'] > 0]
        run_rows.append({
            'task': task, 'strategy': strategy, 'labelling_mode': mode, 'seed': int(seed),
            'cycles': int(run['cycle'].max()),
            'final_n_labelled': int(run['n_labelled'].iloc[-1]),
            'final_metric': float(run['metric'].iloc[-1]),
            'aulc': learning_curve_area(run['n_labelled'], run['metric']),
            'seconds_to_target': seconds_to_target(run, targets.get(task, float('inf'))),
            'final_seconds': float(run['seconds_spent'].iloc[-1]),
            'mean_batch_class_entropy': float(acquired['batch_class_entropy'].mean()) if len(acquired) else 0.0,
        })
    runs = pd.DataFrame(run_rows)

    grouped = runs.groupby(RUN_KEYS, sort=True)
    summary = grouped.agg(
        n_seeds=('seed', 'count'),
        final_metric_mean=('final_metric', 'mean'),
        final_metric_std=('final_metric', 'std'),
        aulc_mean=('aulc', 'mean'),
        aulc_std=('aulc', 'std'),
        seconds_to_target_mean=('seconds_to_target', 'mean'),
        n_reached_target=('seconds_to_target', 'count'),
        final_seconds_mean=('final_seconds', 'mean'),
        batch_class_entropy_mean=('mean_batch_class_entropy', 'mean'),
    ).reset_index()

    curve_summary = frame.groupby(RUN_KEYS + ["cycle"], sort=True).agg(
        n_seeds=('seed', 'count'),
        n_labelled_mean=('n_labelled', 'mean'),
        metric_mean=('metric', 'mean'),
        metric_std=('metric', 'std'),
        seconds_mean=('seconds_spent', 'mean'),
    ).reset_index()
    return runs, summary, curve_summary


def _paired(runs: pd.DataFrame, task: str, a: Tuple[str, str], b: Tuple[str, str], column: str,
            comparison: str) -> Optional[Dict[str, Any]]:
    left = runs[(runs['task'] == task) & (runs['strategy'] == a[0]) & (runs['labelling_mode'] == a[1])]
    right = runs[(runs['task'] == task) & (runs['strategy'] == b[0]) & (runs['labelling_mode'] == b[1])]
    joined = left.merge(right, on='seed', suffixes=('_a', '_b'))
    if joined.empty:
        return None
    diff = joined[f"{column}_a"] - joined[f"{column}_b"]
    return {
        'task': task, 'comparison': comparison,
        'cell_a': f"{a[0]}_{a[1]}", 'cell_b': f"{b[0]}_{b[1]}",
        'n_pairs': int(len(diff)), 'mean_diff': float(diff.mean()),
        'std_diff': float(diff.std()) if len(diff) > 1 else 0.0,
        'n_a_greater': int((diff > 0).sum()),
    }


def compare_paired(runs: pd.DataFrame) -> pd.DataFrame:
    """
    Seed-paired differences

    Every policy cell against random in the same mode (AULC and mean batch
    class entropy) and weak against strong labelling for every strategy
    (final annotation seconds and final metric).
    """
    rows = []
    for task in sorted(runs['task'].unique()):
        task_runs = runs[runs['task'] == task]
        for mode in sorted(task_runs['labelling_mode'].unique()):
            strategies = sorted(task_runs[task_runs['labelling_mode'] == mode]['strategy'].unique())
            for strategy in (s for s in strategies if s.startswith("policy")):
                for column, name in (('aulc', 'aulc_vs_random'),
                                     ('mean_batch_class_entropy', 'class_entropy_vs_random')):
                    rows.append(_paired(runs, task, (strategy, mode), ("random", mode), column, name))
        for strategy in sorted(task_runs['strategy'].unique()):
            for column, name in (('final_seconds', 'seconds_weak_vs_strong'),
                                 ('final_metric', 'metric_weak_vs_strong')):
                rows.append(_paired(runs, task, (strategy, "weak"), (strategy, "strong"), column, name))
    columns = ['task', 'comparison', 'cell_a', 'cell_b', 'n_pairs', 'mean_diff', 'std_diff', 'n_a_greater']
    return pd.DataFrame([r for r in rows if r is not None], columns=columns)
