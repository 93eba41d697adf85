"""
Policy-learned acquisition for pool-based active learning.
"""

from .acquisition import build_strategy, select
from .annotator import Annotator, CostLedger, CostModel
from .config import ExperimentConfig, load_experiment_config
from .data_model import (DataPools, Dataset, EntityAnnotation, Prediction, Sample, TaskKind, commit_selection,
                         init_deployment_pools, init_policy_training_pools, load_dataset, sample_candidates,
                         save_dataset)
from .errors import BudgetExceeded, ConfigurationError, EndOfEpisode, IntegrityError, OPADError
from .loops import EpisodeConfig, run_baseline, run_deployment, run_policy_training
from .policy_dqn import PolicyAgent, load_policy_checkpoint, save_policy_checkpoint
from .rewards import RewardConfig
from .theta_models import build_theta, load_theta_checkpoint, save_theta_checkpoint
from .utils import setup_logging

__all__ = [
    "Annotator", "BudgetExceeded", "ConfigurationError", "CostLedger", "CostModel", "DataPools", "Dataset",
    "EndOfEpisode", "EntityAnnotation", "EpisodeConfig", "ExperimentConfig", "IntegrityError", "OPADError",
    "PolicyAgent", "Prediction", "RewardConfig", "Sample", "TaskKind", "build_strategy", "build_theta",
    "commit_selection", "init_deployment_pools", "init_policy_training_pools", "load_dataset",
    "load_experiment_config", "load_policy_checkpoint", "load_theta_checkpoint", "run_baseline",
    "run_deployment", "run_policy_training", "sample_candidates", "save_dataset", "save_policy_checkpoint",
    "save_theta_checkpoint", "select", "setup_logging",
]
