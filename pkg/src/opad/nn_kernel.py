"""
Tiny dense-network kernel shared by the prediction model and the policy network.

Layers are plain NumPy weight/bias pairs with hand-written backward passes;
``MomentumSGD`` applies heavy-ball updates with an optional per-step
learning-rate decay.
"""

import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}'")

    @property
    def fan_in(self) -> int:
        return int(self.weight.shape[0])

    @property
    def fan_out(self) -> int:
        return int(self.weight.shape[1])


class DenseNetKernel:
    """
    Feed-forward stack of dense layers operating on row batches

    Args:
        sizes: Layer widths, input first (``[d, h, h, out]``)
        activations: One activation per layer; defaults to ReLU on hidden
            layers and identity on the output layer
        rng: Generator used for the uniform ±1/√fan_in initialisation
        zero_init_output: Start the output layer at exactly zero
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator,
                 activations: Optional[Sequence[str]] = None, zero_init_output: bool = False):
        if len(sizes) < 2:
            raise ValueError("A kernel needs at least an input and an output size")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ValueError(f"Expected {n_layers} activations, got {len(activations)}")

        self.layers: List[DenseLayer] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if zero_init_output and i == n_layers - 1:
                weight = np.zeros((fan_in, fan_out))
                bias = np.zeros(fan_out)
            else:
                weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                bias = rng.uniform(-bound, bound, size=fan_out)
            self.layers.append(DenseLayer(weight, bias, activations[i]))

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
        """Forward pass keeping (layer input, pre-activation) per layer for backward"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"Expected input of shape (n, {self.input_dim}), got {x.shape}")
        cache = []
        for layer in self.layers:
            z = x @ layer.weight + layer.bias
            cache.append((x, z))
            x = np.maximum(z, 0.0) if layer.activation == "relu" else z
        return x, cache

    def backward(self, cache: List[Tuple[np.ndarray, np.ndarray]],
                 grad_out: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """
        Backpropagate ``grad_out`` (dLoss/dOutput) through the cached pass

        Returns:
            (gradients aligned with ``parameters()``, dLoss/dInput)
        """
        grads: List[np.ndarray] = [None] * (2 * len(self.layers))
        delta = np.asarray(grad_out, dtype=np.float64)
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            x, z = cache[i]
            if layer.activation == "relu":
                delta = delta * (z > 0.0)
            grads[2 * i] = x.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ layer.weight.T
        return grads, delta

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def shape_manifest(self) -> List[Dict]:
        return [
            {'weight': list(layer.weight.shape), 'bias': list(layer.bias.shape), 'activation': layer.activation}
            for layer in self.layers
        ]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(p.size for p in self.parameters())
        if flat.shape != (expected,):
            raise ValueError(f"Flat vector has shape {flat.shape}, expected ({expected},)")
        offset = 0
        for param in self.parameters():
            param[...] = flat[offset:offset + param.size].reshape(param.shape)
            offset += param.size

    @classmethod
    def from_manifest(cls, manifest: List[Dict], flat: np.ndarray) -> "DenseNetKernel":
        """Rebuild a kernel from ``shape_manifest()`` and ``get_flat()`` output"""
        kernel = cls.__new__(cls)
        kernel.layers = [
            DenseLayer(np.zeros(entry['weight']), np.zeros(entry['bias']), entry['activation'])
            for entry in manifest
        ]
        kernel.set_flat(flat)
        return kernel

    def copy(self) -> "DenseNetKernel":
        return copy.deepcopy(self)


class MomentumSGD:
    """
    SGD with momentum: ``v = momentum * v + lr * g``, ``p -= v``

    The learning rate is multiplied by ``lr_decay`` after every step.
    """

    def __init__(self, params: List[np.ndarray], lr: float = 0.001, momentum: float = 0.95,
                 lr_decay: float = 1.0):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.lr_decay = float(lr_decay)
        self.velocity = [np.zeros_like(p) for p in params]
        self.steps = 0

    def step(self, grads: List[np.ndarray]):
        if len(grads) != len(self.params):
            raise ValueError(f"Got {len(grads)} gradients for {len(self.params)} parameters")
        for param, velocity, grad in zip(self.params, self.velocity, grads):
            velocity *= self.momentum
            velocity += self.lr * grad
            param -= velocity
        self.lr *= self.lr_decay
        self.steps += 1

    def state_dict(self) -> Dict:
        return {'lr': self.lr, 'momentum': self.momentum, 'lr_decay': self.lr_decay, 'steps': self.steps}

    def load_state_dict(self, state: Dict, velocity: Optional[List[np.ndarray]] = None):
        self.lr = float(state['lr'])
        self.momentum = float(state['momentum'])
        self.lr_decay = float(state['lr_decay'])
        self.steps = int(state['steps'])
        if velocity is not None:
            for buffer, saved in zip(self.velocity, velocity):
                buffer[...] = saved


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean cross-entropy of integer targets under softmax(logits)

    Returns:
        (loss, probabilities, dLoss/dLogits)
    """
    log_probs = log_softmax(logits, axis=1)
    probs = np.exp(log_probs)
    n = logits.shape[0]
    loss = float(-log_probs[np.arange(n), targets].mean())
    grad = probs.copy()
    grad[np.arange(n), targets] -= 1.0
    return loss, probs, grad / n
