"""
MDP state encoding: per-sample embeddings of Θ's predictions, stacked over the
candidate set and the state set.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .data_model import Dataset, Prediction, Sample, TaskKind
from .theta_models import ThetaModel

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 10


@dataclass(frozen=True, eq=False)
class StateRepr:
    """
    c_t and s_t with the sample ids of their rows

    Rows are in ascending id order in both matrices.
    """
    c_t: np.ndarray
    s_t: np.ndarray
    cand_ids: Tuple[int, ...]
    state_ids: Tuple[int, ...]
    cycle_index: int = 0

    @property
    def dim(self) -> int:
        return int(self.c_t.shape[1])


def embedding_dim(task: TaskKind, n_classes: int, feature_dim: int, top_k: int = DEFAULT_TOP_K,
                  max_len: Optional[int] = None) -> int:
    """K·(C+1) + d for detection, max_len·(4C+1) for sequence"""
    if TaskKind(task) == TaskKind.DETECTION:
        return top_k * (n_classes + 1) + feature_dim
    return int(max_len) * (4 * n_classes + 1)


def _detection_embedding(predictions: List[Prediction], features: np.ndarray, top_k: int,
                         n_outputs: int) -> np.ndarray:
    # stable sort keeps proposal order among equal confidences
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].confidence)[:top_k]
    scores = np.zeros((top_k, n_outputs))
    for row, i in enumerate(order):
        scores[row] = predictions[i].class_scores
    mean_features = features.mean(axis=0) if len(features) else np.zeros(features.shape[1])
    return np.concatenate([scores.ravel(), mean_features])


def _sequence_embedding(token_scores: np.ndarray, max_len: int, n_tags: int) -> np.ndarray:
    if len(token_scores) > max_len:
        raise ValueError(f"Sequence of {len(token_scores)} tokens exceeds max_len={max_len}")
    vector = np.zeros(max_len * n_tags)
    vector[:token_scores.size] = token_scores.ravel()
    return vector


def encode_sample(theta: ThetaModel, sample: Sample, top_k: int = DEFAULT_TOP_K,
                  max_len: Optional[int] = None) -> np.ndarray:
    """
    Embed one sample

    Detection: the top-K predictions' class-score vectors in confidence order,
    zero-padded to K, followed by the mean proposal feature vector. Sequence:
    per-token tag scores, zero-padded to ``max_len`` tokens.
    """
    return encode_samples(theta, [sample], top_k, max_len)[0]


def encode_samples(theta: ThetaModel, samples: Sequence[Sample], top_k: int = DEFAULT_TOP_K,
                   max_len: Optional[int] = None) -> np.ndarray:
    """Row-stacked ``encode_sample`` for many samples"""
    scores = theta.unit_scores_many(samples)
    if theta.task_kind == TaskKind.DETECTION:
        rows = [
            _detection_embedding(theta.decode(s, scores[s.id]), s.features.reshape(-1, theta.feature_dim),
                                 top_k, theta.n_outputs)
            for s in samples
        ]
    else:
        if max_len is None:
            raise ValueError("Sequence encoding requires max_len")
        rows = [_sequence_embedding(scores[s.id], max_len, theta.n_outputs) for s in samples]
    dim = embedding_dim(theta.task_kind, theta.n_classes, theta.feature_dim, top_k, max_len)
    return np.array(rows).reshape(len(samples), dim)


def build_state(theta: ThetaModel, dataset: Dataset, x_cand: Iterable[int], x_state: Iterable[int],
                top_k: int = DEFAULT_TOP_K, cycle_index: int = 0) -> StateRepr:
    """
    Encode the candidate and state sets in ascending id order

    Raises:
        ValueError: either set is empty
    """
    cand_ids = tuple(sorted(int(i) for i in x_cand))
    state_ids = tuple(sorted(int(i) for i in x_state))
    if not cand_ids or not state_ids:
        raise ValueError("build_state needs non-empty candidate and state sets")
    c_t = encode_samples(theta, dataset.gather(cand_ids), top_k, dataset.max_len)
    s_t = encode_samples(theta, dataset.gather(state_ids), top_k, dataset.max_len)
    return StateRepr(c_t=c_t, s_t=s_t, cand_ids=cand_ids, state_ids=state_ids, cycle_index=cycle_index)
