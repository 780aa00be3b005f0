"""Two-phase label combiner: weighted score union, then a confidence threshold."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import JACCARD, Metric, Record, ScoredLabelSet

SetMetric = Callable[[Iterable[str], Iterable[str]], float]


@dataclass(frozen=True)
class CombinerParams:
    w: float = 0.5
    theta: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.w <= 1.0 and 0.0 <= self.theta <= 1.0):
            raise ValueError(f"w and theta must lie in [0, 1], got w={self.w}, theta={self.theta}")


def combine_scores(base_set: ScoredLabelSet, addon_set: ScoredLabelSet, w: float) -> dict[str, float]:
    """Union of both label sets scored ``w * base + (1 - w) * addon`` (absent = 0)."""
    out = {}
    for label in base_set.keys() | addon_set.keys():
        out[label] = w * base_set.get(label, 0.0) + (1.0 - w) * addon_set.get(label, 0.0)
    return out


def apply_threshold(scored: ScoredLabelSet, theta: float) -> frozenset[str]:
    return frozenset(label for label, s in scored.items() if s > theta)


def combine_and_predict(record: Record, base: int, k: int, params: CombinerParams) -> frozenset[str]:
    base_set = record.predictions[base]
    if k == base:
        return apply_threshold(base_set, params.theta)
    return apply_threshold(combine_scores(base_set, record.predictions[k], params.w), params.theta)


def _grid_scores_generic(records, base, k, grid, metric) -> np.ndarray:
    # scores[i_w, i_theta]
    scores = np.zeros((grid.size, grid.size))
    for i, w in enumerate(grid):
        for j, theta in enumerate(grid):
            p = CombinerParams(float(w), float(theta))
            scores[i, j] = sum(metric(r.truth, combine_and_predict(r, base, k, p)) for r in records)
    return scores / len(records)


def _grid_scores_counts(records, base, k, grid, metric: Metric) -> np.ndarray:
    total = np.zeros((grid.size, grid.size))
    w = grid[:, None]
    theta = grid[None, :, None]
    for r in records:
        b, a = r.predictions[base], r.predictions[k]
        if k == base:
            labels = list(b)
            combined = np.broadcast_to(np.array([b[l] for l in labels], dtype=float), (grid.size, len(labels)))
        else:
            labels = list(b.keys() | a.keys())
            bs = np.array([b.get(l, 0.0) for l in labels], dtype=float)
            as_ = np.array([a.get(l, 0.0) for l in labels], dtype=float)
            combined = w * bs + (1.0 - w) * as_
        in_truth = np.array([l in r.truth for l in labels], dtype=float)
        kept = combined[:, None, :] > theta  # (w, theta, label)
        n_pred = kept.sum(axis=2)
        inter = (kept * in_truth).sum(axis=2)
        total += metric.from_counts(inter, np.full_like(inter, len(r.truth)), n_pred)
    return total / len(records)


def grid_scores(
    records: Sequence[Record], base: int, k: int, M: int = 10, metric: SetMetric = JACCARD
) -> tuple[np.ndarray, np.ndarray]:
    """Mean metric for every (w, theta) on the ``{m/M}`` grid; returns (grid, scores[w, theta])."""
    if not records:
        raise ValueError("cannot tune on an empty training set")
    if M < 0:
        raise ValueError("M must be non-negative")
    grid = np.array([0.0]) if M == 0 else np.arange(M + 1) / M
    if isinstance(metric, Metric):
        return grid, _grid_scores_counts(records, base, k, grid, metric)
    return grid, _grid_scores_generic(records, base, k, grid, metric)


def tune_combiner(
    records: Sequence[Record], base: int, k: int, M: int = 10, metric: SetMetric = JACCARD
) -> CombinerParams:
    """Exhaustive grid search; ties go to the smaller theta, then the smaller w."""
    grid, scores = grid_scores(records, base, k, M, metric)
    best = scores.max()
    # Iterate theta-major so the first maximiser has the smallest theta, then smallest w.
    for j in range(grid.size):
        for i in range(grid.size):
            if scores[i, j] == best:
                return CombinerParams(float(grid[i]), float(grid[j]))
    raise AssertionError("unreachable")


def tune_all(
    records: Sequence[Record], base: int, n_apis: int, M: int = 10, metric: SetMetric = JACCARD
) -> list[CombinerParams]:
    return [tune_combiner(records, base, k, M, metric) for k in range(n_apis)]


def true_accuracy_vector(
    record: Record, base: int, params_per_k: Sequence[CombinerParams], metric: SetMetric = JACCARD
) -> np.ndarray:
    return np.array(
        [metric(record.truth, combine_and_predict(record, base, k, p)) for k, p in enumerate(params_per_k)]
    )


def true_accuracy_matrix(
    records: Sequence[Record], base: int, params_per_k: Sequence[CombinerParams], metric: SetMetric = JACCARD
) -> np.ndarray:
    if not records:
        return np.zeros((0, len(params_per_k)))
    return np.vstack([true_accuracy_vector(r, base, params_per_k, metric) for r in records])
