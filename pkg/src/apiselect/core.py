"""Domain types, multi-label metrics and cost accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

ScoredLabelSet = Mapping[str, float]
"""An API output: label -> quality score in [0, 1]."""


def check_scored(labels: ScoredLabelSet) -> None:
    for label, score in labels.items():
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score!r} for label {label!r} outside [0, 1]")


@dataclass(frozen=True)
class Record:
    """One input: the recorded output of every API plus the true label set."""

    id: str
    predictions: tuple[ScoredLabelSet, ...]
    truth: frozenset[str]

    def __post_init__(self):
        if len(self.predictions) < 2:
            raise ValueError(f"record {self.id!r}: need at least 2 APIs, got {len(self.predictions)}")
        for labels in self.predictions:
            check_scored(labels)
        if not isinstance(self.truth, frozenset):
            object.__setattr__(self, "truth", frozenset(self.truth))

    @property
    def n_apis(self) -> int:
        return len(self.predictions)


@dataclass(frozen=True)
class CostTable:
    """Per-query price of every API and the index of the base API."""

    costs: tuple[float, ...]
    base: int
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        if any(c < 0 or not np.isfinite(c) for c in self.costs):
            raise ValueError(f"costs must be finite and non-negative: {self.costs}")
        if not 0 <= self.base < len(self.costs):
            raise ValueError(f"base index {self.base} out of range for {len(self.costs)} APIs")
        if self.names is not None and len(self.names) != len(self.costs):
            raise ValueError("names and costs differ in length")

    @property
    def n_apis(self) -> int:
        return len(self.costs)

    @property
    def base_cost(self) -> float:
        return self.costs[self.base]

    def hatted_cost(self, k: int) -> float:
        """Cost of API ``k`` on top of the unconditional base call."""
        return 0.0 if k == self.base else self.costs[k]

    def hatted_costs(self) -> np.ndarray:
        c = np.asarray(self.costs, dtype=float)
        c[self.base] = 0.0
        return c

    def hatted_budget(self, budget: float) -> float:
        return budget - self.base_cost

    def total_cost(self) -> float:
        """Price of calling every API once (the ensemble baselines' per-query cost)."""
        return _decimal_sum(self.costs)


def _decimal_sum(values: Iterable[float]) -> float:
    # Summing shortest decimal reprs keeps 0.01 + 6 + 10 + 15 == 31.01 exactly.
    return float(sum((Decimal(repr(v)) for v in values), Decimal(0)))


def check_accuracy_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError("accuracy vector must be one-dimensional")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"accuracy values outside [0, 1]: {arr}")
    return arr


# -- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class Metric:
    """A set metric that depends only on |truth|, |pred| and |truth & pred|.

    ``from_counts`` works elementwise on numpy arrays, which lets the combiner
    grid search evaluate every (w, theta) pair in one shot.
    """

    name: str
    from_counts: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, truth: Iterable[str], pred: Iterable[str]) -> float:
        truth, pred = set(truth), set(pred)
        inter = len(truth & pred)
        return float(self.from_counts(np.float64(inter), np.float64(len(truth)), np.float64(len(pred))))


def _ratio(num, den, both_empty):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, both_empty)


def _jaccard_counts(inter, n_true, n_pred):
    union = n_true + n_pred - inter
    return _ratio(inter, union, 1.0)


def _f1_counts(inter, n_true, n_pred):
    return _ratio(2.0 * inter, n_true + n_pred, 1.0)


def _precision_counts(inter, n_true, n_pred):
    # An empty prediction is perfectly precise only when nothing was there to find.
    return _ratio(inter, n_pred, np.where(np.asarray(n_true) == 0, 1.0, 0.0))


JACCARD = Metric("jaccard", _jaccard_counts)
F1 = Metric("f1", _f1_counts)
PRECISION = Metric("precision", _precision_counts)

METRICS: dict[str, Metric] = {m.name: m for m in (JACCARD, F1, PRECISION)}


def multilabel_accuracy(truth: Iterable[str], pred: Iterable[str]) -> float:
    """Jaccard overlap ``|truth & pred| / |truth | pred|``; 1.0 when both are empty."""
    truth, pred = set(truth), set(pred)
    union = len(truth | pred)
    if union == 0:
        return 1.0
    return len(truth & pred) / union


def precision_recall_per_label(
    pairs: Sequence[tuple[Iterable[str], Iterable[str]]],
) -> dict[str, tuple[float, float]]:
    """Per-label (precision, recall) over ``(truth, pred)`` pairs.

    Labels whose precision or recall denominator is zero report 0 for that entry.
    """
    if not pairs:
        raise ValueError("need at least one (truth, pred) pair")
    tp: dict[str, int] = {}
    fp: dict[str, int] = {}
    fn: dict[str, int] = {}
    for truth, pred in pairs:
        truth, pred = set(truth), set(pred)
        for label in truth & pred:
            tp[label] = tp.get(label, 0) + 1
        for label in pred - truth:
            fp[label] = fp.get(label, 0) + 1
        for label in truth - pred:
            fn[label] = fn.get(label, 0) + 1
    out = {}
    for label in sorted(set(tp) | set(fp) | set(fn)):
        t = tp.get(label, 0)
        p_den = t + fp.get(label, 0)
        r_den = t + fn.get(label, 0)
        out[label] = (t / p_den if p_den else 0.0, t / r_den if r_den else 0.0)
    return out


def strategy_cost(assignments: Sequence[int], costs: CostTable) -> float:
    """Mean per-query spend: the base call plus the average add-on price."""
    idx = np.asarray(assignments)
    if idx.size == 0:
        raise ValueError("assignments must be non-empty")
    if idx.dtype.kind not in "iu":
        raise TypeError("assignments must be integer API indices")
    if idx.min() < 0 or idx.max() >= costs.n_apis:
        raise IndexError(f"API index out of range [0, {costs.n_apis})")
    hatted = costs.hatted_costs()
    return costs.base_cost + float(hatted[idx].sum()) / idx.size


def exact_spend(assignments: Sequence[int], costs: CostTable) -> Fraction:
    """Total add-on spend as an exact rational (floats are dyadic rationals)."""
    counts = np.bincount(np.asarray(assignments, dtype=np.int64), minlength=costs.n_apis)
    return sum(
        (int(n) * Fraction(costs.hatted_cost(k)) for k, n in enumerate(counts) if n),
        Fraction(0),
    )
