"""Entropic optimal-transport distances between embedding sequences.

Frames of the two sequences carry uniform mass (1/T and 1/T'); the frame
cost is cosine distance by default. The Sinkhorn solver runs in the log
domain by default, is fully deterministic, and reports non-convergence
through a flag on the returned plan instead of raising: retrieval can
still rank with a near-feasible plan, and callers that need hard
guarantees check the flag.

The reported sequence distance is the raw plan cost ``sum(C * M)``; the
plan moves unit total mass by construction, so no extra length
normalization is applied (none is implied for rectangular instances).

``exact_ot_small`` solves the unregularized problem exactly on tiny
instances by enumerating basic feasible solutions of the transportation
polytope; it exists as an independent oracle for tests and is not used
on the retrieval path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSequence

COSINE = "cosine"
SQEUCLIDEAN = "squared_euclidean"
_METRICS = (COSINE, SQEUCLIDEAN)

_EXACT_MAX_CELLS = 16


class SinkhornOverflowError(FloatingPointError):
    """Plain-domain scaling over/underflowed; rerun with ``log_domain=True``."""


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs. ``epsilon`` is the entropic regularization strength."""

    epsilon: float = 0.05
    max_iters: int = 1000
    tol_marginal: float = 1e-6
    log_domain: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol_marginal > 0:
            raise ValueError(f"tol_marginal must be > 0, got {self.tol_marginal}")


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """A T x T' matrix of pairwise frame costs plus its metric tag."""

    entries: np.ndarray
    metric: str

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"cost matrix must be 2-D and non-empty, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("cost matrix contains NaN or Inf")
        if self.metric not in _METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == COSINE and (arr.min() < 0.0 or arr.max() > 2.0):
            raise ValueError("cosine costs must lie in [0, 2]")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling with uniform marginals, its cost, and convergence info.

    ``potentials`` holds the log-domain dual variables (f, g) when the
    solver ran in the log domain; they can warm-start another solve.
    """

    coupling: np.ndarray
    cost: float
    iterations_used: int
    converged: bool
    potentials: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        arr = np.array(self.coupling, dtype=np.float64, order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "coupling", arr)

    def marginal_error(self) -> float:
        """Max deviation of the stored coupling from uniform marginals."""
        m, n = self.coupling.shape
        row_err = np.abs(self.coupling.sum(axis=1) - 1.0 / m).max()
        col_err = np.abs(self.coupling.sum(axis=0) - 1.0 / n).max()
        return float(max(row_err, col_err))

    def recompute_cost(self, cost: "CostMatrix | np.ndarray") -> float:
        entries = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost)
        return float(np.sum(entries * self.coupling))


def _frame_matrix(x: EmbeddingSequence | np.ndarray) -> np.ndarray:
    if isinstance(x, EmbeddingSequence):
        return x.frames
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a T x d matrix, got shape {arr.shape}")
    return arr


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared euclidean distances between the rows of two matrices."""
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.clip(sq, 0.0, None)


def cost_matrix(
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    metric: str = COSINE,
) -> CostMatrix:
    """Pairwise frame costs between two sequences.

    Cosine entries are ``1 - <a_i, b_j> / (|a_i| |b_j|)``, clipped into
    [0, 2] against float round-off. Zero-norm frames are rejected rather
    than silently perturbed.
    """
    A, B = _frame_matrix(a), _frame_matrix(b)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if metric == COSINE:
        na = np.linalg.norm(A, axis=1)
        nb = np.linalg.norm(B, axis=1)
        if (na == 0.0).any() or (nb == 0.0).any():
            raise ValueError("zero-norm frame: cosine distance undefined")
        sim = (A @ B.T) / np.outer(na, nb)
        entries = np.clip(1.0 - sim, 0.0, 2.0)
    elif metric == SQEUCLIDEAN:
        entries = pairwise_sq_dists(A, B)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return CostMatrix(entries, metric)


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(
        m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)), axis=axis
    )


def _sinkhorn_core(
    C: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    cfg: SinkhornConfig,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> TransportPlan:
    eps = cfg.epsilon
    if cfg.log_domain:
        loga, logb = np.log(a), np.log(b)
        if init is not None:
            f, g = np.array(init[0], dtype=np.float64), np.array(init[1], dtype=np.float64)
        else:
            f, g = np.zeros_like(a), np.zeros_like(b)
        P = np.empty_like(C)
        it = 0
        err = np.inf
        for it in range(1, cfg.max_iters + 1):
            f = eps * (loga - _logsumexp((g[None, :] - C) / eps, axis=1))
            g = eps * (logb - _logsumexp((f[:, None] - C) / eps, axis=0))
            P = np.exp((f[:, None] + g[None, :] - C) / eps)
            err = max(
                np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max()
            )
            if err <= cfg.tol_marginal:
                break
        cost = float(np.sum(C * P))
        return TransportPlan(P, cost, it, bool(err <= cfg.tol_marginal), potentials=(f, g))
    else:
        K = np.exp(-C / eps)
        if not np.isfinite(K).all() or (K.sum(axis=1) == 0.0).any() or (K.sum(axis=0) == 0.0).any():
            raise SinkhornOverflowError(
                "kernel exp(-C/eps) under/overflowed; use log_domain=True"
            )
        u = np.ones_like(a)
        v = np.ones_like(b)
        it = 0
        err = np.inf
        for it in range(1, cfg.max_iters + 1):
            Kv = K @ v
            if (Kv == 0.0).any():
                raise SinkhornOverflowError("scaling underflow; use log_domain=True")
            u = a / Kv
            Ktu = K.T @ u
            if (Ktu == 0.0).any():
                raise SinkhornOverflowError("scaling underflow; use log_domain=True")
            v = b / Ktu
            if not (np.isfinite(u).all() and np.isfinite(v).all()):
                raise SinkhornOverflowError("scaling overflow; use log_domain=True")
            P = u[:, None] * K * v[None, :]
            err = max(
                np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max()
            )
            if err <= cfg.tol_marginal:
                break
    cost = float(np.sum(C * P))
    return TransportPlan(P, cost, it, bool(err <= cfg.tol_marginal))


def sinkhorn(
    cost: CostMatrix | np.ndarray,
    cfg: SinkhornConfig | None = None,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> TransportPlan:
    """Entropy-regularized coupling under uniform marginals (1/T, 1/T').

    Never raises on slow convergence: the plan's ``converged`` flag is
    False when the marginal tolerance was not met within ``max_iters``.
    ``init`` warm-starts the log-domain potentials (useful when sweeping
    epsilon ladders).
    """
    cfg = cfg or SinkhornConfig()
    C = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or not np.isfinite(C).all():
        raise ValueError("cost must be a finite 2-D matrix")
    m, n = C.shape
    a = np.full(m, 1.0 / m)
    b = np.full(n, 1.0 / n)
    return _sinkhorn_core(C, a, b, cfg, init=init)


def ot_plan(
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    cfg: SinkhornConfig | None = None,
    metric: str = COSINE,
) -> TransportPlan:
    return sinkhorn(cost_matrix(a, b, metric), cfg)


def ot_distance(
    a: EmbeddingSequence | np.ndarray,
    b: EmbeddingSequence | np.ndarray,
    cfg: SinkhornConfig | None = None,
    metric: str = COSINE,
) -> float:
    """Cost of the entropic transport plan between two sequences."""
    return ot_plan(a, b, cfg, metric).cost


def exact_ot_small(cost: CostMatrix | np.ndarray) -> float:
    """Exact unregularized optimum for instances with at most 16 cells.

    Enumerates candidate bases of the transportation polytope (subsets of
    m*n variables of size m+n-1), solves each equality system, keeps the
    feasible ones, and returns the cheapest. Every polytope vertex has a
    spanning-tree basis of that size, so the LP optimum is among them.
    """
    C = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)
    if C.ndim != 2:
        raise ValueError("cost must be 2-D")
    m, n = C.shape
    if m * n > _EXACT_MAX_CELLS:
        raise ValueError(f"instance too large for exact solve: {m}x{n} > {_EXACT_MAX_CELLS} cells")
    a = np.full(m, 1.0 / m)
    b = np.full(n, 1.0 / n)
    A = np.zeros((m + n, m * n))
    for i in range(m):
        for j in range(n):
            A[i, i * n + j] = 1.0
            A[m + j, i * n + j] = 1.0
    rhs = np.concatenate([a, b])
    c = C.reshape(-1)
    basis_size = m + n - 1
    best = np.inf
    for basis in itertools.combinations(range(m * n), basis_size):
        sub = A[:, basis]
        sol, *_ = np.linalg.lstsq(sub, rhs, rcond=None)
        if np.abs(sub @ sol - rhs).max() > 1e-9 or sol.min() < -1e-12:
            continue
        best = min(best, float(c[list(basis)] @ np.clip(sol, 0.0, None)))
    return best


def swav_codes(scores: np.ndarray, cfg: SinkhornConfig | None = None) -> np.ndarray:
    """Balanced soft assignment of a batch of projections to prototypes.

    Returns the B x K matrix maximizing ``Tr(Q^T scores) + eps * H(Q)``
    over the equal-partition transportation polytope (row sums 1/B,
    column sums 1/K), via Sinkhorn on the negated scores. Multiplying a
    row by B yields that sample's assignment distribution.
    """
    return swav_code_plan(scores, cfg).coupling


def swav_code_plan(scores: np.ndarray, cfg: SinkhornConfig | None = None) -> TransportPlan:
    cfg = cfg or SinkhornConfig()
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ValueError(f"scores must be a non-empty B x K matrix, got {S.shape}")
    if not np.isfinite(S).all():
        raise ValueError("scores contain NaN or Inf")
    B, K = S.shape
    a = np.full(B, 1.0 / B)
    b = np.full(K, 1.0 / K)
    return _sinkhorn_core(-S, a, b, cfg)
