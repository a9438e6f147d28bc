"""Temporal cycle-consistency distance between embedding sequences.

Each query frame finds a soft nearest neighbor in the other sequence
(softmax over negative squared distances), that neighbor cycles back to
a soft nearest neighbor among the query sequence's frames, and the frame
loss is the squared L2 gap between the query frame and its cycled-back
reconstruction (the full difference-vector norm, not divided by the
dimension; an unsquared variant is selectable via ``squared=False``).

The sequence distance sums frame losses over the first argument's frames
and is therefore asymmetric; ``tcc_distance_symmetric`` averages both
directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSequence
from .ot import pairwise_sq_dists


@dataclass(frozen=True)
class TccConfig:
    temperature: float = 0.1
    squared: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True, eq=False)
class CycleTrace:
    """Both softmax hops for one query frame, for inspection and tests."""

    frame_index: int
    alpha: np.ndarray
    soft_neighbor: np.ndarray
    beta: np.ndarray
    cycled_back: np.ndarray
    loss: float


def _frames(x: EmbeddingSequence | np.ndarray) -> np.ndarray:
    if isinstance(x, EmbeddingSequence):
        return x.frames
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a T x d matrix, got shape {arr.shape}")
    return arr


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def soft_nearest_neighbor(
    query: np.ndarray,
    keys: EmbeddingSequence | np.ndarray,
    cfg: TccConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax attention of one vector over a sequence's frames.

    Returns ``(weights, vector)`` with ``weights[j] proportional to
    exp(-|query - key_j|^2 / temperature)`` and ``vector = weights @ keys``.
    """
    cfg = cfg or TccConfig()
    q = np.asarray(query, dtype=np.float64)
    K = _frames(keys)
    if q.ndim != 1 or q.shape[0] != K.shape[1]:
        raise ValueError(f"dimension mismatch: query {q.shape} vs keys {K.shape}")
    sq = pairwise_sq_dists(q[None, :], K)[0]
    weights = _softmax_rows(-sq / cfg.temperature)
    return weights, weights @ K


def tcc_frame_loss(
    t: int,
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    cfg: TccConfig | None = None,
) -> tuple[float, CycleTrace]:
    """Cycle loss for frame ``t`` of ``a`` through ``b`` and back."""
    cfg = cfg or TccConfig()
    A, B = _frames(a), _frames(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if not 0 <= t < A.shape[0]:
        raise IndexError(f"frame index {t} out of range for T={A.shape[0]}")
    alpha, neighbor = soft_nearest_neighbor(A[t], B, cfg)
    beta, cycled = soft_nearest_neighbor(neighbor, A, cfg)
    diff = A[t] - cycled
    sq = float(diff @ diff)
    loss = sq if cfg.squared else float(np.sqrt(sq))
    return loss, CycleTrace(
        frame_index=t,
        alpha=alpha,
        soft_neighbor=neighbor,
        beta=beta,
        cycled_back=cycled,
        loss=loss,
    )


def tcc_distance(
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    cfg: TccConfig | None = None,
) -> float:
    """Sum of cycle losses over all frames of ``a`` (asymmetric in a, b)."""
    cfg = cfg or TccConfig()
    A, B = _frames(a), _frames(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    alpha = _softmax_rows(-pairwise_sq_dists(A, B) / cfg.temperature)
    neighbors = alpha @ B
    beta = _softmax_rows(-pairwise_sq_dists(neighbors, A) / cfg.temperature)
    cycled = beta @ A
    sq = ((A - cycled) ** 2).sum(axis=1)
    per_frame = sq if cfg.squared else np.sqrt(sq)
    return float(per_frame.sum())


def tcc_distance_symmetric(
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    cfg: TccConfig | None = None,
) -> float:
    """Average of both directed distances; an extension beyond the base method."""
    return 0.5 * (tcc_distance(a, b, cfg) + tcc_distance(b, a, cfg))
