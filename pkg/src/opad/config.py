"""
Experiment configuration.

Values come from a ``KEY=value`` file, then ``OPAD_``-prefixed environment
variables, then explicit overrides (CLI flags), later sources winning.
"""

import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, get_type_hints

from dotenv import dotenv_values

from .acquisition import STRATEGIES
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

ENV_PREFIX = "OPAD_"

TASKS = ("detection", "sequence")
LABELLING_MODES = ("strong", "weak")

# Per-task active-learning sizes used when the matching key is unset
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'detection': {'n_init': 512, 'n_cycle': 64, 'n_state': 256, 'target_metric': 0.5},
    'sequence': {'n_init': 100, 'n_cycle': 25, 'n_state': 512, 'target_metric': 0.5},
}


@dataclass
class ExperimentConfig:
    # experiment matrix
    tasks: List[str] = field(default_factory=lambda: list(TASKS))
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    seed: int = 0
    output_dir: str = "results"
    strategies: List[str] = field(default_factory=lambda: ["random", "entropy_max", "entropy_sum", "margin", "policy"])
    labelling_modes: List[str] = field(default_factory=lambda: list(LABELLING_MODES))
    workers: int = 1
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # synthetic tasks
    detection_n_samples: int = 10000
    detection_n_classes: int = 13
    detection_feature_dim: int = 16
    detection_noise_sigma: float = 1.25
    detection_distractor_rate: float = 0.3
    detection_jitter_sigma: float = 0.01
    sequence_n_samples: int = 4000
    sequence_n_classes: int = 4
    sequence_max_len: int = 150
    sequence_feature_dim: int = 16
    sequence_noise_sigma: float = 1.0
    val_fraction: float = 0.25
    test_fraction: float = 0.25

    # pools and cycles; None means the task default
    n_init: Optional[int] = None
    n_state: Optional[int] = None
    n_cycle: Optional[int] = None
    met_fraction: float = 0.1
    n_pool: int = 4
    n_cycles: int = 10
    n_episodes: int = 10
    budget_samples: Optional[int] = None
    budget_seconds: Optional[float] = None
    target_metric: Optional[float] = None
    paired_sampling: bool = True

    # prediction model Θ
    theta_hidden: int = 64
    theta_iterations: int = 1000
    theta_lr: float = 0.05
    theta_momentum: float = 0.9
    theta_batch_size: int = 32
    cold_start: bool = False

    # policy Π
    top_k: int = 10
    policy_hidden: int = 64
    policy_lr: float = 0.001
    policy_momentum: float = 0.95
    policy_lr_decay: float = 0.998
    gamma: float = 0.9
    replay_capacity: int = 1000
    policy_batch_size: int = 32
    policy_updates_per_cycle: int = 10
    target_sync_every: int = 10
    target_style: str = "double"
    eps0: float = 0.9
    eps_factor: float = 0.1
    eps_decay_mode: str = "multiplicative"

    # acquisition, annotation and rewards
    margin_direction: str = "highest"
    confidence_threshold: float = 0.5
    use_class_entropy: bool = False
    lambda_cls: float = 0.25
    use_feedback: bool = False
    lambda_fb: float = 0.1
    ablation: bool = True
    lambda_cls_grid: List[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    lambda_fb_grid: List[float] = field(default_factory=lambda: [0.1, 0.25, 0.4, 0.7, 1.0])

    def __post_init__(self):
        self.validate()

    def validate(self):
        for task in self.tasks:
            if task not in TASKS:
                raise ConfigurationError(f"tasks: unknown task '{task}'")
        for mode in self.labelling_modes:
            if mode not in LABELLING_MODES:
                raise ConfigurationError(f"labelling_modes: unknown mode '{mode}'")
        for strategy in self.strategies:
            if strategy not in STRATEGIES:
                raise ConfigurationError(f"strategies: unknown strategy '{strategy}'")
        if not self.seeds:
            raise ConfigurationError("seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"seeds: values must be distinct, got {self.seeds}")
        if self.ablation and (not self.lambda_cls_grid or not self.lambda_fb_grid):
            raise ConfigurationError("lambda_cls_grid/lambda_fb_grid: must be non-empty when ablation is enabled")
        for name in ("n_pool", "n_cycles", "n_episodes", "theta_iterations", "workers", "top_k",
                     "policy_updates_per_cycle", "target_sync_every", "replay_capacity"):
            if getattr(self, name) < 0 or (name != "theta_iterations" and getattr(self, name) < 1):
                raise ConfigurationError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.budget_samples is not None and self.budget_samples <= 0:
            raise ConfigurationError(f"budget_samples: must be positive, got {self.budget_samples}")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ConfigurationError(f"budget_seconds: must be positive, got {self.budget_seconds}")
        if not 0.0 <= self.met_fraction < 1.0:
            raise ConfigurationError(f"met_fraction: must lie in [0, 1), got {self.met_fraction}")
        if self.target_style not in ("double", "vanilla"):
            raise ConfigurationError(f"target_style: expected double or vanilla, got '{self.target_style}'")
        if self.use_feedback and "sequence" in self.tasks:
            logger.warning("use_feedback applies to detection only; sequence policies use the vanilla reward")

    def task_value(self, task: str, name: str):
        """A per-task setting: the explicit value if set, else the task default"""
        value = getattr(self, name)
        return TASK_DEFAULTS[task][name] if value is None else value

    def budget_samples_for(self, task: str) -> int:
        if self.budget_samples is not None:
            return self.budget_samples
        return self.task_value(task, 'n_init') + self.n_cycles * self.task_value(task, 'n_cycle')

    def budget_seconds_for(self, task: str) -> float:
        return math.inf if self.budget_seconds is None else float(self.budget_seconds)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _convert(name: str, raw: str, hint) -> Any:
    text = str(raw).strip()
    if text == "":
        raise ConfigurationError(f"{name.upper()}: value is empty")
    origin = getattr(hint, '__origin__', None)
    args = getattr(hint, '__args__', ())
    if origin is not None and type(None) in args:
        if text.lower() in ("none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
        origin = getattr(hint, '__origin__', None)
        args = getattr(hint, '__args__', ())
    try:
        if origin in (list, List):
            return [_convert(name, item, args[0]) for item in text.split(",") if item.strip()]
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"{name.upper()}: cannot parse '{text}'") from None


def load_experiment_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
                           environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a key-value file, the environment and overrides

    Args:
        path: Optional ``KEY=value`` file
        overrides: Highest-priority values (CLI flags); None entries are ignored
        environ: Environment mapping; defaults to ``os.environ``

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigurationError: unknown key, empty value or unparsable value
    """
    raw: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"Config file not found: {path}")
        raw.update({k.lower(): v for k, v in dotenv_values(path).items()})
    environ = os.environ if environ is None else environ
    raw.update({k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)})
    raw.update({k.lower(): v for k, v in (overrides or {}).items() if v is not None})

    hints = get_type_hints(ExperimentConfig)
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigurationError(f"{key.upper()}: unknown configuration key")
        if value is None:
            raise ConfigurationError(f"{key.upper()}: value is empty")
        values[key] = value if not isinstance(value, str) else _convert(key, value, hints[key])
    config = ExperimentConfig(**values)
    logger.debug(f"Loaded configuration from {path or 'defaults'} with {len(values)} explicit values")
    return config
