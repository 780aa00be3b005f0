"""Ensemble baselines that call every API on every input."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .combiner import SetMetric
from .core import JACCARD, CostTable, Record


@dataclass(frozen=True)
class WeightedVoteParams:
    weights: tuple[float, ...]
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w < 0 or not math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be finite and non-negative")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


def majority_vote(record: Record) -> frozenset[str]:
    """Keep a label predicted (at any score) by at least half of the APIs."""
    need = math.ceil(record.n_apis / 2)
    counts: dict[str, int] = {}
    for pred in record.predictions:
        for label in pred:
            counts[label] = counts.get(label, 0) + 1
    return frozenset(label for label, c in counts.items() if c >= need)


def vote_scores(record: Record, weights: Sequence[float]) -> dict[str, float]:
    scores: dict[str, float] = {}
    for w, pred in zip(weights, record.predictions):
        for label, s in pred.items():
            scores[label] = scores.get(label, 0.0) + w * s
    return scores


def weighted_majority_vote(record: Record, params: WeightedVoteParams) -> frozenset[str]:
    return frozenset(l for l, s in vote_scores(record, params.weights).items() if s > params.threshold)


def single_api_prediction(record: Record, k: int) -> frozenset[str]:
    return frozenset(record.predictions[k])


def api_accuracies(records: Sequence[Record], metric: SetMetric = JACCARD) -> np.ndarray:
    """Mean accuracy of each API's raw label set."""
    if not records:
        raise ValueError("empty record list")
    k = records[0].n_apis
    return np.array(
        [np.mean([metric(r.truth, single_api_prediction(r, j)) for r in records]) for j in range(k)]
    )


def tune_vote_threshold(
    records: Sequence[Record], weights: Sequence[float], M: int = 10, metric: SetMetric = JACCARD
) -> float:
    """Grid search over ``{m/M}``; ties go to the smaller threshold."""
    if not records:
        raise ValueError("cannot tune on an empty training set")
    if M < 1:
        raise ValueError("grid resolution must be at least 1")
    scored = [(r.truth, vote_scores(r, weights)) for r in records]
    best_t, best = 0.0, -np.inf
    for m in range(M + 1):
        t = m / M
        acc = float(np.mean([metric(truth, {l for l, s in sc.items() if s > t}) for truth, sc in scored]))
        if acc > best:
            best_t, best = t, acc
    return best_t


def fit_weighted_vote(records: Sequence[Record], M: int = 10, metric: SetMetric = JACCARD) -> WeightedVoteParams:
    weights = api_accuracies(records, metric)
    return WeightedVoteParams(tuple(weights), tune_vote_threshold(records, weights, M, metric))


def ensemble_cost(costs: CostTable) -> float:
    return costs.total_cost()
