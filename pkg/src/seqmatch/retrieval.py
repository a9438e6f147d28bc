"""Segment a robot sequence, retrieve the closest play snippet per segment,
and compose the retrieved snippets into an imagined demonstration.

Retrieval is label-free and uses a brute-force linear scan over the
snippet bank (exactness matters more than speed at desk scale). Ties on
distance go to the lexicographically smallest snippet id. Evaluation
metrics are computed at retrieval level: they ask whether the imagined
demo names the right tasks, not whether a downstream policy would have
completed them, and every report carries a note saying so.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .data import (
    EmbeddingSequence,
    LabeledSequence,
    SnippetDatabase,
    dataset_content_hash,
)
from .ot import COSINE, SinkhornConfig, cost_matrix, sinkhorn
from .tcc import TccConfig, tcc_distance, tcc_distance_symmetric

METRICS_NOTE = (
    "Metrics are retrieval-level: task recall/imprecision compare the labels of "
    "retrieved snippets against the robot trajectory's labels; no policy rollouts."
)


class RetrievalError(Exception):
    """Retrieval could not produce a valid result; carries the segment index."""

    def __init__(self, message: str, segment_index: int | None = None):
        if segment_index is not None:
            message = f"segment {segment_index}: {message}"
        super().__init__(message)
        self.segment_index = segment_index


class DistanceResult(NamedTuple):
    value: float
    converged: bool


class OtSequenceDistance:
    """Entropic transport cost as a sequence distance (permutation-invariant)."""

    name = "ot"

    def __init__(self, cfg: SinkhornConfig | None = None, metric: str = COSINE):
        self.cfg = cfg or SinkhornConfig()
        self.metric = metric

    def __call__(self, a: EmbeddingSequence, b: EmbeddingSequence) -> DistanceResult:
        plan = sinkhorn(cost_matrix(a, b, self.metric), self.cfg)
        return DistanceResult(plan.cost, plan.converged)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "metric": self.metric,
            "epsilon": self.cfg.epsilon,
            "max_iters": self.cfg.max_iters,
            "tol_marginal": self.cfg.tol_marginal,
            "log_domain": self.cfg.log_domain,
        }


class TccSequenceDistance:
    """Cycle-consistency loss as a sequence distance (asymmetric unless symmetrized)."""

    name = "tcc"

    def __init__(self, cfg: TccConfig | None = None, symmetric: bool = False):
        self.cfg = cfg or TccConfig()
        self.symmetric = symmetric

    def __call__(self, a: EmbeddingSequence, b: EmbeddingSequence) -> DistanceResult:
        fn = tcc_distance_symmetric if self.symmetric else tcc_distance
        return DistanceResult(fn(a, b, self.cfg), True)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "temperature": self.cfg.temperature,
            "squared": self.cfg.squared,
            "symmetric": self.symmetric,
        }


SequenceDistance = Callable[[EmbeddingSequence, EmbeddingSequence], DistanceResult]


@dataclass(frozen=True)
class RetrievalConfig:
    """Segmentation plus a pluggable sequence distance.

    Exactly one of ``segment_len`` (K frames per segment) or
    ``segment_count`` (K', giving K = max(1, floor(T / K')) per sequence)
    must be set. The default keeps the trailing remainder as a short
    final segment; ``overlap_final=True`` instead slides the last window
    back so it ends flush at T (overlapping its predecessor).
    """

    distance: SequenceDistance
    segment_len: int | None = None
    segment_count: int | None = None
    overlap_final: bool = False

    def __post_init__(self):
        if (self.segment_len is None) == (self.segment_count is None):
            raise ValueError("set exactly one of segment_len or segment_count")
        for name in ("segment_len", "segment_count"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")

    def describe(self) -> dict:
        doc: dict = {
            "segment_len": self.segment_len,
            "segment_count": self.segment_count,
            "overlap_final": self.overlap_final,
        }
        describe = getattr(self.distance, "describe", None)
        doc["distance"] = describe() if callable(describe) else repr(self.distance)
        return doc


def segment(z: EmbeddingSequence | int, cfg: RetrievalConfig) -> list[tuple[int, int]]:
    """Ordered frame ranges covering [0, T).

    All ranges have length K except possibly the last, which holds the
    remainder (at least one frame) when K does not divide T. K larger
    than T yields the single range [0, T).
    """
    T = z.n_frames if isinstance(z, EmbeddingSequence) else int(z)
    if T < 1:
        raise ValueError(f"need T >= 1, got {T}")
    if cfg.segment_len is not None:
        K = cfg.segment_len
    else:
        K = max(1, T // cfg.segment_count)
    if K >= T:
        return [(0, T)]
    bounds = [(start, min(start + K, T)) for start in range(0, T, K)]
    if cfg.overlap_final and bounds[-1][1] - bounds[-1][0] < K:
        bounds[-1] = (T - K, T)
    return bounds


@dataclass(frozen=True)
class SegmentRecord:
    """One retrieval decision: the robot frame range and what it fetched."""

    start: int
    end: int
    snippet_index: int
    snippet_id: str
    distance: float
    margin: float | None
    converged: bool
    n_nonconverged: int = 0

    def to_json_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "snippet_index": self.snippet_index,
            "snippet_id": self.snippet_id,
            "distance": self.distance,
            "margin": self.margin,
            "converged": self.converged,
            "n_nonconverged": self.n_nonconverged,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SegmentRecord":
        return cls(
            start=int(doc["start"]),
            end=int(doc["end"]),
            snippet_index=int(doc["snippet_index"]),
            snippet_id=str(doc["snippet_id"]),
            distance=float(doc["distance"]),
            margin=None if doc.get("margin") is None else float(doc["margin"]),
            converged=bool(doc["converged"]),
            n_nonconverged=int(doc.get("n_nonconverged", 0)),
        )


@dataclass(frozen=True, eq=False)
class ImaginedDemo:
    """Composed retrieved snippets for one robot sequence.

    ``composed`` is None only for records rehydrated from a report file
    without their frame data.
    """

    source_id: str | None
    segments: tuple[SegmentRecord, ...]
    composed: EmbeddingSequence | None

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def snippet_indices(self) -> tuple[int, ...]:
        return tuple(r.snippet_index for r in self.segments)


@dataclass(frozen=True, eq=False)
class PairedEntry:
    robot: LabeledSequence
    demo: ImaginedDemo


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """One imagined demo per robot trajectory, with full provenance."""

    entries: tuple[PairedEntry, ...]
    provenance: dict

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[str] = set()
        for e in self.entries:
            if e.robot.seq_id in seen:
                raise ValueError(f"robot sequence '{e.robot.seq_id}' appears twice")
            seen.add(e.robot.seq_id)

    def __len__(self) -> int:
        return len(self.entries)


def _evaluate_segment(
    z: EmbeddingSequence,
    bounds: tuple[int, int],
    seg_index: int,
    db: SnippetDatabase,
    distance: SequenceDistance,
) -> SegmentRecord:
    start, end = bounds
    sub = EmbeddingSequence(z.frames[start:end])
    values = np.empty(len(db))
    converged = np.empty(len(db), dtype=bool)
    for j, snippet in enumerate(db.snippets):
        result = distance(sub, snippet.sequence)
        values[j] = result.value
        converged[j] = result.converged
    finite = np.isfinite(values)
    if not finite.any():
        raise RetrievalError("all snippet distances are NaN", segment_index=seg_index)
    best_value = values[finite].min()
    tied = np.flatnonzero(finite & (values == best_value))
    best = min(tied, key=lambda j: db.snippets[j].seq_id)
    others = values[finite & (np.arange(len(db)) != best)]
    margin = float(others.min() - best_value) if others.size else None
    return SegmentRecord(
        start=start,
        end=end,
        snippet_index=int(best),
        snippet_id=db.snippets[best].seq_id,
        distance=float(values[best]),
        margin=margin,
        converged=bool(converged[best]),
        n_nonconverged=int((~converged).sum()),
    )


def imagine_demo(
    z: EmbeddingSequence,
    db: SnippetDatabase,
    cfg: RetrievalConfig,
    threads: int = 1,
    source_id: str | None = None,
) -> ImaginedDemo:
    """Retrieve the closest snippet per segment and concatenate the results.

    Per-segment retrievals are independent; ``threads`` caps the worker
    pool and never changes the result (segments are reassembled in
    order).
    """
    if len(db) == 0:
        raise RetrievalError("snippet database is empty")
    if db.dim != z.dim:
        raise ValueError(f"dimension mismatch: sequence d={z.dim}, database d={db.dim}")
    bounds = segment(z, cfg)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(
                pool.map(
                    lambda ib: _evaluate_segment(z, ib[1], ib[0], db, cfg.distance),
                    enumerate(bounds),
                )
            )
    else:
        records = [
            _evaluate_segment(z, b, i, db, cfg.distance) for i, b in enumerate(bounds)
        ]
    composed = EmbeddingSequence(
        np.vstack([db.snippets[r.snippet_index].sequence.frames for r in records])
    )
    return ImaginedDemo(source_id=source_id, segments=tuple(records), composed=composed)


def build_paired_dataset(
    robot_set: Sequence[LabeledSequence],
    db: SnippetDatabase,
    cfg: RetrievalConfig,
    threads: int = 1,
    extra_provenance: dict | None = None,
) -> PairedDataset:
    """One imagined demo per robot trajectory.

    Each entry keeps both the robot embeddings and the imagined demo so
    downstream consumers can condition on either side of the pairing.
    """
    robot_set = list(robot_set)
    if not robot_set:
        raise RetrievalError("robot set is empty")

    def build_one(ls: LabeledSequence) -> PairedEntry:
        demo = imagine_demo(ls.sequence, db, cfg, threads=1, source_id=ls.seq_id)
        return PairedEntry(robot=ls, demo=demo)

    if threads > 1 and len(robot_set) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            entries = list(pool.map(build_one, robot_set))
    else:
        entries = [build_one(ls) for ls in robot_set]
    provenance = {
        "retrieval": cfg.describe(),
        "robot_hash": dataset_content_hash(robot_set),
        "play_hash": dataset_content_hash(db),
    }
    if extra_provenance:
        provenance.update(extra_provenance)
    return PairedDataset(entries=tuple(entries), provenance=provenance)


@dataclass(frozen=True)
class TrajectoryEval:
    robot_id: str
    recall: float
    imprecision: float
    n_segments: int
    top1_hits: int
    robot_tasks: tuple[int, ...]
    retrieved_tasks: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "robot_id": self.robot_id,
            "recall": self.recall,
            "imprecision": self.imprecision,
            "n_segments": self.n_segments,
            "top1_hits": self.top1_hits,
            "robot_tasks": list(self.robot_tasks),
            "retrieved_tasks": list(self.retrieved_tasks),
        }


@dataclass(frozen=True)
class EvalReport:
    """Retrieval-level task recall / imprecision plus per-segment top-1 accuracy."""

    task_recall: float
    task_imprecision: float
    top1_accuracy: float
    per_trajectory: tuple[TrajectoryEval, ...]
    note: str = METRICS_NOTE

    def __post_init__(self):
        for name in ("task_recall", "task_imprecision", "top1_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_json_dict(self) -> dict:
        return {
            "note": self.note,
            "task_recall": self.task_recall,
            "task_imprecision": self.task_imprecision,
            "top1_accuracy": self.top1_accuracy,
            "per_trajectory": [t.to_json_dict() for t in self.per_trajectory],
        }


def evaluate(paired: PairedDataset, db: SnippetDatabase) -> EvalReport:
    """Score a paired dataset against ground-truth labels.

    Recall: fraction of the robot trajectory's tasks covered by the
    retrieved snippets' tasks, averaged over trajectories. Imprecision:
    fraction of retrieved tasks absent from the robot trajectory,
    averaged. Top-1: fraction of segments whose retrieved snippet's task
    set equals the segment's ground-truth task set.
    """
    per_traj = []
    total_segments = 0
    total_hits = 0
    for entry in paired.entries:
        robot_tasks = entry.robot.task_set
        retrieved: set[int] = set()
        hits = 0
        for rec in entry.demo.segments:
            if rec.snippet_index >= len(db):
                raise RetrievalError(
                    f"snippet index {rec.snippet_index} outside database of {len(db)}"
                )
            snippet = db.snippets[rec.snippet_index]
            snippet_tasks = snippet.task_set
            retrieved |= snippet_tasks
            segment_tasks = {
                t
                for label in entry.robot.labels[rec.start : rec.end]
                for t in label.tasks
            }
            if snippet_tasks == segment_tasks:
                hits += 1
        recall = len(retrieved & robot_tasks) / len(robot_tasks)
        imprecision = len(retrieved - robot_tasks) / len(retrieved) if retrieved else 0.0
        per_traj.append(
            TrajectoryEval(
                robot_id=entry.robot.seq_id,
                recall=recall,
                imprecision=imprecision,
                n_segments=entry.demo.n_segments,
                top1_hits=hits,
                robot_tasks=tuple(sorted(robot_tasks)),
                retrieved_tasks=tuple(sorted(retrieved)),
            )
        )
        total_segments += entry.demo.n_segments
        total_hits += hits
    return EvalReport(
        task_recall=float(np.mean([t.recall for t in per_traj])),
        task_imprecision=float(np.mean([t.imprecision for t in per_traj])),
        top1_accuracy=total_hits / total_segments if total_segments else 0.0,
        per_trajectory=tuple(per_traj),
    )


def paired_to_json_dict(paired: PairedDataset) -> dict:
    """Serializable view of a paired dataset (embeddings live in dataset dirs)."""
    return {
        "provenance": paired.provenance,
        "entries": [
            {
                "robot_id": e.robot.seq_id,
                "segments": [r.to_json_dict() for r in e.demo.segments],
            }
            for e in paired.entries
        ],
    }


def paired_from_json_dict(
    doc: dict, robot_db: SnippetDatabase, play_db: SnippetDatabase
) -> PairedDataset:
    """Rehydrate a paired dataset from its report plus the two source datasets."""
    entries = []
    for rec in doc["entries"]:
        robot_id = rec["robot_id"]
        try:
            robot = robot_db.get(robot_id)
        except KeyError:
            raise RetrievalError(f"robot sequence '{robot_id}' missing from robot dataset")
        segments = tuple(SegmentRecord.from_json_dict(s) for s in rec["segments"])
        for s in segments:
            if s.snippet_index >= len(play_db) or play_db.snippets[s.snippet_index].seq_id != s.snippet_id:
                raise RetrievalError(
                    f"snippet '{s.snippet_id}' not at index {s.snippet_index} in play dataset"
                )
        entries.append(
            PairedEntry(
                robot=robot,
                demo=ImaginedDemo(source_id=robot_id, segments=segments, composed=None),
            )
        )
    return PairedDataset(entries=tuple(entries), provenance=dict(doc.get("provenance", {})))
