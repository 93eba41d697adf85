"""
Acquisition policy network Π with experience replay and a target network.

The per-sample encoder is shared between candidate rows and state rows; the
state set is mean-pooled so Q is invariant to the order of its rows. One
transition per active-learning cycle carries all n_cycle sub-actions with a
single shared reward.
"""

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .nn_kernel import DenseNetKernel, MomentumSGD
from .state_encoder import StateRepr
from .utils import read_npz, write_npz

logger = logging.getLogger(__name__)

TARGET_STYLES = ("double", "vanilla")
EPS_DECAY_MODES = ("multiplicative", "subtractive")


class PolicyNet:
    """
    Q(c_i, S) = head([φ(c_i), φ(c_i)⊙s̄, φ(c_i)·s̄]) with s̄ the mean of φ over s_t

    Args:
        input_dim: Embedding dimension of candidate/state rows
        hidden: Width h of encoder and head layers
        seed: Initialisation seed
        zero_init_output: Start the head's output layer at zero (all Q = 0)
    """

    def __init__(self, input_dim: int, hidden: int = 64, seed: int = 0, zero_init_output: bool = False):
        self.input_dim = int(input_dim)
        self.hidden = int(hidden)
        rng = np.random.default_rng([int(seed), 31])
        self.encoder = DenseNetKernel([self.input_dim, self.hidden, self.hidden], rng,
                                      activations=["relu", "relu"])
        self.head = DenseNetKernel([2 * self.hidden + 1, self.hidden, 1], rng,
                                   zero_init_output=zero_init_output)

    def parameters(self) -> List[np.ndarray]:
        return self.encoder.parameters() + self.head.parameters()

    def shape_manifest(self) -> Dict[str, Any]:
        return {'encoder': self.encoder.shape_manifest(), 'head': self.head.shape_manifest()}

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.get_flat(), self.head.get_flat()])

    def set_flat(self, flat: np.ndarray):
        n_encoder = self.encoder.get_flat().size
        self.encoder.set_flat(flat[:n_encoder])
        self.head.set_flat(flat[n_encoder:])

    def copy(self) -> "PolicyNet":
        clone = PolicyNet.__new__(PolicyNet)
        clone.input_dim, clone.hidden = self.input_dim, self.hidden
        clone.encoder, clone.head = self.encoder.copy(), self.head.copy()
        return clone

    def _check(self, c_rows: np.ndarray, s_t: np.ndarray):
        for name, matrix in (("c_t", c_rows), ("s_t", s_t)):
            if matrix.ndim != 2 or matrix.shape[1] != self.input_dim:
                raise ValueError(f"{name} has shape {matrix.shape}, expected (n, {self.input_dim})")
        if len(s_t) == 0:
            raise ValueError("s_t must have at least one row")

    def forward_cached(self, c_rows: np.ndarray, s_t: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
        c_rows = np.asarray(c_rows, dtype=np.float64)
        s_t = np.asarray(s_t, dtype=np.float64)
        self._check(c_rows, s_t)
        n_c = len(c_rows)
        encoded, encoder_cache = self.encoder.forward_cached(np.vstack([c_rows, s_t]))
        e_c, e_s = encoded[:n_c], encoded[n_c:]
        s_bar = e_s.mean(axis=0)
        z = np.hstack([e_c, e_c * s_bar, (e_c @ s_bar)[:, None]])
        q, head_cache = self.head.forward_cached(z)
        cache = {'encoder': encoder_cache, 'head': head_cache, 'e_c': e_c, 's_bar': s_bar, 'n_s': len(s_t)}
        return q[:, 0], cache

    def backward(self, cache: Dict[str, Any], grad_q: np.ndarray) -> List[np.ndarray]:
        """Parameter gradients of sum(grad_q * Q), aligned with ``parameters()``"""
        h = self.hidden
        head_grads, dz = self.head.backward(cache['head'], np.asarray(grad_q, dtype=np.float64)[:, None])
        e_c, s_bar = cache['e_c'], cache['s_bar']
        d_prod, d_dot = dz[:, h:2 * h], dz[:, 2 * h:2 * h + 1]
        d_e_c = dz[:, :h] + d_prod * s_bar + d_dot * s_bar
        d_s_bar = (d_prod * e_c).sum(axis=0) + (d_dot * e_c).sum(axis=0)
        d_e_s = np.tile(d_s_bar / cache['n_s'], (cache['n_s'], 1))
        encoder_grads, _ = self.encoder.backward(cache['encoder'], np.vstack([d_e_c, d_e_s]))
        return encoder_grads + head_grads

    def q_rows(self, c_rows: np.ndarray, s_t: np.ndarray) -> np.ndarray:
        q, _ = self.forward_cached(c_rows, s_t)
        return q


def q_values(policy: PolicyNet, state: StateRepr) -> np.ndarray:
    """One Q-value per candidate row of ``state``"""
    return policy.q_rows(state.c_t, state.s_t)


@dataclass
class EpsilonSchedule:
    """ε(c) = eps0·factor^c (multiplicative) or max(0, eps0 − factor·c) (subtractive)"""
    eps0: float = 0.9
    factor: float = 0.1
    mode: str = "multiplicative"

    def __post_init__(self):
        if self.mode not in EPS_DECAY_MODES:
            raise ConfigurationError(f"eps_decay_mode must be one of {EPS_DECAY_MODES}, got '{self.mode}'")

    def value(self, cycle: int, deployment: bool = False) -> float:
        if deployment:
            return 0.0
        if self.mode == "multiplicative":
            return self.eps0 * self.factor ** cycle
        return max(0.0, self.eps0 - self.factor * cycle)


@dataclass(frozen=True, eq=False)
class Transition:
    """
    (S_t, A_t, R_{t+1}, S_{t+1}) for one cycle

    ``partition`` holds the n_cycle × n_pool candidate-row blocks of S_t and
    ``actions`` the chosen row of each block.
    """
    state: StateRepr
    partition: np.ndarray
    actions: np.ndarray
    reward: float
    next_state: Optional[StateRepr]
    next_partition: Optional[np.ndarray]
    terminal: bool

    def __post_init__(self):
        if len(self.actions) != len(self.partition):
            raise ValueError(f"{len(self.actions)} actions for {len(self.partition)} mini-batches")
        for block, action in zip(self.partition, self.actions):
            if action not in block:
                raise ValueError(f"Action {action} is outside its mini-batch {block.tolist()}")
        if not self.terminal and (self.next_state is None or self.next_partition is None):
            raise ValueError("A non-terminal transition needs a next state and partition")


class ReplayBuffer:
    """FIFO experience store"""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.storage: deque = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.storage)

    def push(self, transition: Transition):
        self.storage.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> List[Transition]:
        if not self.storage:
            raise ValueError("Cannot sample from an empty replay buffer")
        idx = rng.choice(len(self.storage), size=min(batch_size, len(self.storage)), replace=False)
        return [self.storage[i] for i in idx]


def push_transition(buffer: ReplayBuffer, transition: Transition):
    buffer.push(transition)


def make_partition(n_candidates: int, n_cycle: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffle candidate rows into n_cycle equal mini-batches"""
    if n_cycle < 1 or n_candidates % n_cycle:
        raise ValueError(f"{n_candidates} candidates cannot be split into {n_cycle} equal mini-batches")
    return rng.permutation(n_candidates).reshape(n_cycle, n_candidates // n_cycle)


def block_argmax(q: np.ndarray, partition: np.ndarray) -> np.ndarray:
    """Row with the highest Q in every block; ties go to the lowest row index"""
    choices = np.empty(len(partition), dtype=np.int64)
    for b, block in enumerate(partition):
        values = q[block]
        choices[b] = block[values == values.max()].min()
    return choices


def select_actions(policy: PolicyNet, state: StateRepr, n_cycle: int, epsilon: float,
                   rng: np.random.Generator, partition: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    ε-greedy choice of one candidate row per mini-batch

    The partition is drawn from ``rng`` unless one is given (a next-state
    partition already stored in a transition).

    Returns:
        (chosen row indices into ``state.c_t``, the n_cycle × n_pool partition)
    """
    if partition is None:
        partition = make_partition(len(state.c_t), n_cycle, rng)
    elif partition.shape[0] != n_cycle:
        raise ValueError(f"Partition has {partition.shape[0]} mini-batches, expected {n_cycle}")
    explore = rng.random(n_cycle) < epsilon
    picks = rng.integers(0, partition.shape[1], size=n_cycle)
    if explore.all():
        greedy = np.zeros(n_cycle, dtype=np.int64)
    else:
        greedy = block_argmax(q_values(policy, state), partition)
    actions = np.where(explore, partition[np.arange(n_cycle), picks], greedy)
    return actions.astype(np.int64), partition


def td_targets(policy: PolicyNet, target: PolicyNet, transition: Transition, gamma: float,
               target_style: str = "double") -> np.ndarray:
    """y_i per sub-action of a transition"""
    n = len(transition.actions)
    reward = np.full(n, float(transition.reward))
    if transition.terminal or gamma == 0.0:
        return reward
    next_state, next_partition = transition.next_state, transition.next_partition
    q_target = q_values(target, next_state)
    if target_style == "double":
        best = block_argmax(q_values(policy, next_state), next_partition)
    elif target_style == "vanilla":
        best = block_argmax(q_target, next_partition)
    else:
        raise ConfigurationError(f"target_style must be one of {TARGET_STYLES}, got '{target_style}'")
    return reward + gamma * q_target[best]


def optimize_step(policy: PolicyNet, target: PolicyNet, buffer: ReplayBuffer, batch_size: int,
                  gamma: float, rng: np.random.Generator, optimizer: MomentumSGD,
                  target_style: str = "double") -> float:
    """
    One TD update of the online network

    Returns:
        Mean squared TD error over (transition, sub-action), measured before the update

    Raises:
        ValueError: the buffer is empty
    """
    batch = buffer.sample(batch_size, rng)
    n_terms = sum(len(t.actions) for t in batch)
    total = [np.zeros_like(p) for p in policy.parameters()]
    loss = 0.0
    for transition in batch:
        y = td_targets(policy, target, transition, gamma, target_style)
        q, cache = policy.forward_cached(transition.state.c_t[transition.actions], transition.state.s_t)
        diff = q - y
        loss += float(diff @ diff)
        for acc, grad in zip(total, policy.backward(cache, 2.0 * diff / n_terms)):
            acc += grad
    optimizer.step(total)
    return loss / n_terms


def sync_target(policy: PolicyNet, target: PolicyNet, every_n_updates: int = 10, n_updates: int = 0) -> bool:
    """Hard-copy online parameters into the target every N updates; returns True if copied"""
    if every_n_updates < 1:
        raise ConfigurationError(f"Target sync interval must be positive, got {every_n_updates}")
    if n_updates % every_n_updates:
        return False
    target.set_flat(policy.get_flat())
    return True


class PolicyAgent:
    """
    Online network, target network, replay buffer and optimizer as one unit

    Args:
        input_dim: State-row embedding dimension
        hidden: Hidden width of Π
        lr: Learning rate
        momentum: SGD momentum
        lr_decay: Per-step learning-rate multiplier
        gamma: Discount factor
        batch_size: Transitions per optimize step
        replay_capacity: Replay buffer size
        target_sync_every: Optimize steps between target syncs
        target_style: ``double`` or ``vanilla`` TD target
        eps0, eps_factor, eps_decay_mode: ε-greedy schedule
        seed: Initialisation seed
        zero_init_output: Start with all Q = 0
    """

    def __init__(self, input_dim: int, hidden: int = 64, lr: float = 0.001, momentum: float = 0.95,
                 lr_decay: float = 0.998, gamma: float = 0.9, batch_size: int = 32,
                 replay_capacity: int = 1000, target_sync_every: int = 10, target_style: str = "double",
                 eps0: float = 0.9, eps_factor: float = 0.1, eps_decay_mode: str = "multiplicative",
                 seed: int = 0, zero_init_output: bool = False):
        self.logger = logging.getLogger(__name__)
        if target_style not in TARGET_STYLES:
            raise ConfigurationError(f"target_style must be one of {TARGET_STYLES}, got '{target_style}'")
        self.config = {
            'input_dim': int(input_dim), 'hidden': int(hidden), 'lr': float(lr), 'momentum': float(momentum),
            'lr_decay': float(lr_decay), 'gamma': float(gamma), 'batch_size': int(batch_size),
            'replay_capacity': int(replay_capacity), 'target_sync_every': int(target_sync_every),
            'target_style': target_style, 'eps0': float(eps0), 'eps_factor': float(eps_factor),
            'eps_decay_mode': eps_decay_mode, 'seed': int(seed), 'zero_init_output': bool(zero_init_output),
        }
        self.online = PolicyNet(input_dim, hidden, seed, zero_init_output)
        self.target = self.online.copy()
        self.buffer = ReplayBuffer(replay_capacity)
        self.optimizer = MomentumSGD(self.online.parameters(), lr=lr, momentum=momentum, lr_decay=lr_decay)
        self.schedule = EpsilonSchedule(eps0, eps_factor, eps_decay_mode)
        self.gamma = float(gamma)
        self.batch_size = int(batch_size)
        self.target_sync_every = int(target_sync_every)
        self.target_style = target_style
        self.updates = 0
        self.checkpoint_extra: Dict[str, Any] = {}

    def epsilon(self, cycle: int, deployment: bool = False) -> float:
        return self.schedule.value(cycle, deployment)

    def q_values(self, state: StateRepr) -> np.ndarray:
        return q_values(self.online, state)

    def select_actions(self, state: StateRepr, n_cycle: int, epsilon: float, rng: np.random.Generator,
                       partition: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        return select_actions(self.online, state, n_cycle, epsilon, rng, partition)

    def push(self, transition: Transition):
        push_transition(self.buffer, transition)

    def optimize(self, rng: np.random.Generator) -> float:
        loss = optimize_step(self.online, self.target, self.buffer, self.batch_size, self.gamma, rng,
                             self.optimizer, self.target_style)
        self.updates += 1
        if sync_target(self.online, self.target, self.target_sync_every, self.updates):
            self.logger.debug(f"Synced target network after {self.updates} updates")
        return loss


def compact_state(state: StateRepr) -> StateRepr:
    """float32 copy of a state for replay storage"""
    return replace(state, c_t=state.c_t.astype(np.float32), s_t=state.s_t.astype(np.float32))


def save_policy_checkpoint(agent: PolicyAgent, path: str, extra: Optional[Dict[str, Any]] = None) -> str:
    """Online/target parameters, momentum buffers, schedule and config"""
    metadata = {
        'config': agent.config,
        'manifest': agent.online.shape_manifest(),
        'optimizer': agent.optimizer.state_dict(),
        'updates': agent.updates,
        'schedule': {'eps0': agent.schedule.eps0, 'factor': agent.schedule.factor, 'mode': agent.schedule.mode},
        'extra': extra if extra is not None else agent.checkpoint_extra,
    }
    arrays = {
        'online': agent.online.get_flat(),
        'target': agent.target.get_flat(),
        'velocity': np.concatenate([v.ravel() for v in agent.optimizer.velocity]),
    }
    return write_npz(path, arrays, metadata)


def load_policy_checkpoint(path: str) -> PolicyAgent:
    """Rebuild an agent; the replay buffer starts empty"""
    arrays, metadata = read_npz(path)
    agent = PolicyAgent(**metadata['config'])
    if agent.online.shape_manifest() != metadata['manifest']:
        raise ConfigurationError(f"{path}: parameter shapes do not match the stored config")
    agent.online.set_flat(arrays['online'])
    agent.target.set_flat(arrays['target'])
    velocity, offset = [], 0
    for buffer in agent.optimizer.velocity:
        velocity.append(arrays['velocity'][offset:offset + buffer.size].reshape(buffer.shape))
        offset += buffer.size
    agent.optimizer.load_state_dict(metadata['optimizer'], velocity)
    agent.updates = int(metadata['updates'])
    agent.schedule = EpsilonSchedule(**metadata['schedule'])
    agent.checkpoint_extra = metadata.get('extra') or {}
    return agent
