"""Budget-aware API selection: offline LP rounding and the online dual-price policy.

Every selection here scores API ``k`` for one input as ``acc[k] - p * hatted_cost[k]``
where ``hatted_cost`` is zero for the base API (it is always called). A price
``p`` of zero picks the most accurate API; a large price falls back to the base.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import CostTable

logger = logging.getLogger(__name__)

EPS = 1e-9
EXACT_BREAKPOINT_LIMIT = 10**6
EXHAUSTIVE_LIMIT = 2 * 10**7
DP_CAPACITY_LIMIT = 10**5
DELTA_MIN = 1e-6
DELTA_MAX = 0.99
DELTA_ALPHAS = tuple(range(-10, 11))


class InfeasibleBudget(ValueError):
    """The budget cannot even pay for the base API."""


@dataclass(frozen=True)
class SelectionInstance:
    acc: np.ndarray
    costs: CostTable
    budget: float

    def __post_init__(self):
        acc = np.asarray(self.acc, dtype=float)
        if acc.ndim != 2 or acc.shape[0] < 1:
            raise ValueError("acc must be an N x K matrix with N >= 1")
        if acc.shape[1] != self.costs.n_apis:
            raise ValueError(f"acc has {acc.shape[1]} columns, cost table has {self.costs.n_apis} APIs")
        if np.any(acc < 0) or np.any(acc > 1) or not np.all(np.isfinite(acc)):
            raise ValueError("accuracy estimates must lie in [0, 1]")
        if self.budget < self.costs.base_cost:
            raise InfeasibleBudget(
                f"infeasible: budget below base cost ({self.budget} < {self.costs.base_cost})"
            )
        object.__setattr__(self, "acc", acc)

    @property
    def n(self) -> int:
        return self.acc.shape[0]

    @property
    def k(self) -> int:
        return self.acc.shape[1]

    @property
    def hatted_budget(self) -> float:
        return self.costs.hatted_budget(self.budget)


@dataclass
class LpSolution:
    z: np.ndarray
    objective: float
    dual_price: float
    fractional_rows: list[int] = field(default_factory=list)


@dataclass
class OnlinePolicy:
    p_hat: float
    delta: float
    base: int
    residual_budget: float = 0.0

    def __post_init__(self):
        if self.p_hat < 0:
            raise ValueError("p_hat must be non-negative")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")


# -- the price-threshold family ------------------------------------------------


def _preference_order(hatted: np.ndarray) -> np.ndarray:
    """API indices sorted by (hatted cost, index): the tie-break order."""
    return np.lexsort((np.arange(hatted.size), hatted))


def select_sp(acc_row, p: float, costs: CostTable) -> int:
    """Index maximising ``acc - p * hatted_cost``; ties go to the cheaper, then lower-index API."""
    if p < 0:
        raise ValueError("price must be non-negative")
    hatted = costs.hatted_costs()
    values = np.asarray(acc_row, dtype=float) - p * hatted
    top = values.max()
    for k in _preference_order(hatted):
        if values[k] >= top - EPS:
            return int(k)
    raise AssertionError("unreachable")


def select_sp_batch(acc: np.ndarray, p: float, hatted: np.ndarray) -> np.ndarray:
    """Row-wise ``select_sp`` for an N x K matrix."""
    order = _preference_order(hatted)
    values = acc[:, order] - p * hatted[order]
    near = values >= values.max(axis=1, keepdims=True) - EPS
    return order[np.argmax(near, axis=1)]


def _exact_total(choice: np.ndarray, hatted: np.ndarray) -> Fraction:
    counts = np.bincount(choice, minlength=hatted.size)
    return sum((int(n) * Fraction(float(c)) for n, c in zip(counts, hatted) if n and c), Fraction(0))


def spend_curve(instance: SelectionInstance, p: float) -> float:
    """Mean add-on spend of the price-``p`` strategy on ``instance``."""
    hatted = instance.costs.hatted_costs()
    choice = select_sp_batch(instance.acc, p, hatted)
    return float(_exact_total(choice, hatted) / instance.n)


def _breakpoints(acc: np.ndarray, hatted: np.ndarray) -> np.ndarray:
    """Prices where two APIs of different cost tie on some row (non-negative only)."""
    pts = [np.zeros(1)]
    for k, j in itertools.combinations(range(hatted.size), 2):
        dc = hatted[k] - hatted[j]
        if dc == 0:
            continue
        p = (acc[:, k] - acc[:, j]) / dc
        pts.append(p[p > 0])
    return np.unique(np.concatenate(pts))


def solve_dual_price(instance: SelectionInstance, effective_budget: float) -> float:
    """Smallest price ``p >= 0`` whose strategy spends at most ``effective_budget`` per query.

    The LP dual collapses to a one-dimensional piecewise-linear problem in ``p``;
    the spend is a right-continuous non-increasing step function whose jumps sit
    at pairwise tie prices, so an exact binary search over those prices finds
    the optimum. Very large instances fall back to bisection (tolerance 1e-9).
    """
    if effective_budget < 0:
        raise ValueError(f"effective budget must be non-negative, got {effective_budget}")
    acc = instance.acc
    hatted = instance.costs.hatted_costs()
    if not np.any(hatted > 0):
        return 0.0
    limit = Fraction(float(effective_budget)) * instance.n

    def feasible(p: float) -> bool:
        return _exact_total(select_sp_batch(acc, p, hatted), hatted) <= limit

    if feasible(0.0):
        return 0.0

    n, k = acc.shape
    if n * k * k <= EXACT_BREAKPOINT_LIMIT:
        cands = _breakpoints(acc, hatted)
        if not feasible(float(cands[-1])):
            cands = np.append(cands, 2.0 * cands[-1] + 1.0)
        lo, hi = 0, cands.size - 1  # cands[lo] infeasible, cands[hi] feasible
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if feasible(float(cands[mid])):
                hi = mid
            else:
                lo = mid
        return float(cands[hi])

    levels = np.unique(hatted)
    lo, hi = 0.0, (acc.max() - acc.min()) / np.diff(levels).min() + 1.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)


# -- offline -----------------------------------------------------------------


def offline_strategy(instance: SelectionInstance) -> tuple[np.ndarray, LpSolution]:
    """Solve the LP relaxation through its dual price and round it.

    Rows tied at the optimal price are upgraded to their most expensive tied
    API while budget remains; at most one row ends up split. Integral rows keep
    their LP choice and the split row (if any) falls back to the base API.
    """
    b_hat = instance.hatted_budget
    if b_hat < 0:
        raise InfeasibleBudget("infeasible: budget below base cost")
    acc, costs = instance.acc, instance.costs
    hatted = costs.hatted_costs()
    n, k = acc.shape
    p_star = solve_dual_price(instance, b_hat)
    choice = select_sp_batch(acc, p_star, hatted)
    z = np.zeros((n, k))
    z[np.arange(n), choice] = 1.0
    fractional: list[int] = []

    if p_star > 0:
        values = acc - p_star * hatted
        near = values >= values.max(axis=1, keepdims=True) - EPS
        # Most expensive tied API per row; ties on cost go to the more accurate one.
        masked_cost = np.where(near, hatted, -np.inf)
        top_cost = masked_cost.max(axis=1, keepdims=True)
        target = np.argmax(np.where(near & (masked_cost == top_cost), acc, -np.inf), axis=1)
        rows = np.flatnonzero(hatted[target] > hatted[choice])
        gain = acc[rows, target[rows]] - acc[rows, choice[rows]]
        dcost = hatted[target[rows]] - hatted[choice[rows]]
        keep = gain > 0
        rows, gain, dcost = rows[keep], gain[keep], dcost[keep]
        leftover = Fraction(float(b_hat)) * n - _exact_total(choice, hatted)
        for i in np.lexsort((rows, -gain / dcost)):
            if leftover <= 0:
                break
            r, dc = int(rows[i]), Fraction(float(dcost[i]))
            frac = min(Fraction(1), leftover / dc)
            z[r, choice[r]] = float(1 - frac)
            z[r, target[r]] = float(frac)
            leftover -= frac * dc
            if frac < 1:
                fractional.append(r)

    objective = float((z * acc).sum() / n)
    lp = LpSolution(z=z, objective=objective, dual_price=p_star, fractional_rows=fractional)
    assignments = np.argmax(z, axis=1)
    for r in fractional:
        assignments[r] = costs.base
    return assignments, lp


def objective_of(acc: np.ndarray, assignments: Sequence[int]) -> float:
    a = np.asarray(assignments)
    return float(acc[np.arange(a.size), a].mean())


# -- exact integer oracles ---------------------------------------------------


def _exhaustive(acc: np.ndarray, hatted: np.ndarray, cap: float) -> tuple[np.ndarray, float]:
    n, k = acc.shape
    m = n
    while k**m > 2**20:
        m -= 1
    head = n - m
    # Enumerate the tail rows in one vectorised block.
    tail_acc = np.zeros(1)
    tail_cost = np.zeros(1)
    for row in range(head, n):
        tail_acc = (tail_acc[:, None] + acc[row][None, :]).ravel()
        tail_cost = (tail_cost[:, None] + hatted[None, :]).ravel()
    best_val, best = -np.inf, None
    for combo in itertools.product(range(k), repeat=head):
        h_acc = sum(acc[r, c] for r, c in enumerate(combo))
        h_cost = sum(hatted[c] for c in combo)
        ok = h_cost + tail_cost <= cap + EPS
        if not ok.any():
            continue
        vals = np.where(ok, h_acc + tail_acc, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], (combo, i)
    combo, i = best
    tail = np.unravel_index(i, (k,) * m) if m else ()
    assign = np.array(list(combo) + [int(t) for t in tail], dtype=np.int64)
    return assign, float(acc[np.arange(n), assign].sum() / n)


def _decimal_scale(values: np.ndarray, max_places: int = 4) -> int | None:
    for places in range(max_places + 1):
        scaled = values * 10**places
        if np.all(np.abs(scaled - np.round(scaled)) <= 1e-6):
            return 10**places
    return None


def _knapsack_dp(acc: np.ndarray, weights: np.ndarray, capacity: int) -> tuple[np.ndarray, float]:
    """Multiple-choice knapsack: one option per row, total weight <= capacity."""
    n, k = acc.shape
    dp = np.zeros(capacity + 1)
    picks = np.zeros((n, capacity + 1), dtype=np.int8 if k < 128 else np.int32)
    for row in range(n):
        cand = np.full((k, capacity + 1), -np.inf)
        for j in range(k):
            w = int(weights[j])
            if w <= capacity:
                cand[j, w:] = dp[: capacity + 1 - w] + acc[row, j]
        picks[row] = np.argmax(cand, axis=0)
        dp = cand.max(axis=0)
    assign = np.empty(n, dtype=np.int64)
    c = capacity
    for row in range(n - 1, -1, -1):
        j = int(picks[row, c])
        assign[row] = j
        c -= int(weights[j])
    return assign, float(dp[capacity] / n)


def brute_force_ilp(instance: SelectionInstance, method: str = "auto") -> tuple[np.ndarray, float]:
    """Exact optimum of the integer selection problem.

    ``exhaustive`` enumerates all K**N assignments; ``dp`` runs a multiple-choice
    knapsack over costs scaled to integers (decimals with at most 4 places).
    """
    acc = instance.acc
    n, k = acc.shape
    hatted = instance.costs.hatted_costs()
    cap = n * instance.hatted_budget
    if method not in ("auto", "exhaustive", "dp"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "exhaustive") and k**n <= EXHAUSTIVE_LIMIT:
        return _exhaustive(acc, hatted, cap)
    if method in ("auto", "dp"):
        scale = _decimal_scale(hatted)
        if scale is not None:
            weights = np.round(hatted * scale).astype(np.int64)
            capacity = min(int(math.floor(cap * scale + 1e-6)), int(weights.max()) * n)
            if capacity <= DP_CAPACITY_LIMIT:
                return _knapsack_dp(acc, weights, capacity)
    raise ValueError(f"instance too large for the exact oracles (N={n}, K={k})")


# -- online ------------------------------------------------------------------


def estimate_p_hat(train_instance: SelectionInstance, budget: float, delta: float) -> float:
    """Dual price on the training data with the budget shrunk by the buffer ``delta``."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    effective = (1.0 - delta) * (budget - train_instance.costs.base_cost)
    if effective < 0:
        raise InfeasibleBudget("infeasible: budget below base cost")
    return solve_dual_price(train_instance, effective)


class OnlineSelector:
    """Streaming selector with a hard residual-budget guard.

    The residual starts at ``N * (budget - base cost)`` and is tracked in exact
    integer units, so the add-on spend can never exceed it.
    """

    def __init__(self, policy: OnlinePolicy, costs: CostTable, n_items: int, budget: float):
        if n_items < 1:
            raise ValueError("n_items must be positive")
        if budget < costs.base_cost:
            raise InfeasibleBudget("infeasible: budget below base cost")
        if policy.base != costs.base:
            raise ValueError("policy base differs from cost table base")
        self.policy = policy
        self.costs = costs
        self.n_items = n_items
        self.hatted = costs.hatted_costs()
        self._order = _preference_order(self.hatted)
        fr = [Fraction(float(c)) for c in self.hatted]
        total = n_items * (Fraction(float(budget)) - Fraction(costs.base_cost))
        self._scale = math.lcm(*(f.denominator for f in fr), total.denominator)
        self._units = [int(f * self._scale) for f in fr]
        self._residual = int(total * self._scale)
        self.seen = 0
        policy.residual_budget = self.residual_budget

    @property
    def residual_budget(self) -> float:
        return self._residual / self._scale

    @property
    def residual_exact(self) -> Fraction:
        return Fraction(self._residual, self._scale)

    def step(self, acc_row) -> int:
        if self.seen >= self.n_items:
            raise ValueError(f"stream longer than N={self.n_items}")
        self.seen += 1
        k = select_sp(acc_row, self.policy.p_hat, self.costs)
        c = self._units[k]
        if c:
            if self._residual - c >= 0:
                self._residual -= c
            else:
                k = self.costs.base
        self.policy.residual_budget = self.residual_budget
        return k

    def run_batch(self, acc: np.ndarray) -> np.ndarray:
        """Same decisions as calling ``step`` on each row, vectorising the price step."""
        acc = np.asarray(acc, dtype=float)
        if self.seen + acc.shape[0] > self.n_items:
            raise ValueError(f"stream longer than N={self.n_items}")
        cand = select_sp_batch(acc, self.policy.p_hat, self.hatted).tolist()
        units, base, r = self._units, self.costs.base, self._residual
        for i, k in enumerate(cand):
            c = units[k]
            if c:
                if r - c >= 0:
                    r -= c
                else:
                    cand[i] = base
        self._residual = r
        self.seen += len(cand)
        self.policy.residual_budget = self.residual_budget
        return np.asarray(cand, dtype=np.int64)


def run_online(
    stream: np.ndarray | Iterable,
    policy: OnlinePolicy,
    n_items: int,
    budget: float,
    costs: CostTable,
) -> np.ndarray:
    """Select an API for each of exactly ``n_items`` accuracy vectors, in order.

    ``stream`` is an N x K array (fast path) or any iterable of accuracy vectors
    or ``(record_id, vector)`` pairs.
    """
    sel = OnlineSelector(policy, costs, n_items, budget)
    if isinstance(stream, np.ndarray) and stream.ndim == 2:
        if stream.shape[0] != n_items:
            raise ValueError(f"stream has {stream.shape[0]} items, expected {n_items}")
        return sel.run_batch(stream)
    out = []
    for item in stream:
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], str):
            item = item[1]
        out.append(sel.step(item))
    if sel.seen != n_items:
        raise ValueError(f"stream has {sel.seen} items, expected {n_items}")
    return np.asarray(out, dtype=np.int64)


def delta_candidates(n: int, alphas: Sequence[int] = DELTA_ALPHAS) -> list[float]:
    return [min(max(a * math.log(n) / n, DELTA_MIN), DELTA_MAX) for a in alphas]


def tune_delta(
    train_instance: SelectionInstance,
    val_instance: SelectionInstance,
    budget: float,
    alphas: Sequence[int] = DELTA_ALPHAS,
    val_true: np.ndarray | None = None,
) -> float:
    """Pick the buffer that maximises replayed validation accuracy.

    Accuracy is scored against ``val_true`` when given (realised accuracies),
    otherwise against the validation estimates. Ties go to the larger buffer.
    """
    n_val = val_instance.n
    if n_val < 2:
        raise ValueError("validation set needs at least 2 items")
    truth = val_instance.acc if val_true is None else np.asarray(val_true, dtype=float)
    costs = val_instance.costs
    limit = n_val * (Fraction(float(budget)) - Fraction(costs.base_cost))
    best: tuple[float, float] | None = None
    for delta in delta_candidates(n_val, alphas):
        p_hat = estimate_p_hat(train_instance, budget, delta)
        assign = run_online(val_instance.acc, OnlinePolicy(p_hat, delta, costs.base), n_val, budget, costs)
        if _exact_total(assign, costs.hatted_costs()) > limit:
            continue
        score = objective_of(truth, assign)
        logger.debug("delta=%.3g p_hat=%.4g val_acc=%.4f", delta, p_hat, score)
        if best is None or (score, delta) >= best:
            best = (score, delta)
    if best is None:
        raise AssertionError("online replay overspent for every buffer")
    return best[1]
