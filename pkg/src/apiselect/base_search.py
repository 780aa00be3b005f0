"""Choose the base API by training a full strategy per candidate and validating it."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import JACCARD, CostTable, Metric, Record
from .pipeline import Strategy, evaluate_assignments, fit_components, with_base
from .predictor import Featurizer, ForestParams

logger = logging.getLogger(__name__)


class NoFeasibleBase(ValueError):
    pass


@dataclass
class CandidateResult:
    base: int
    name: str
    val_accuracy: float
    val_cost: float
    p_hat: float
    delta: float
    strategy: Strategy = field(repr=False, compare=False)


@dataclass
class BaseSearchReport:
    candidates: list[CandidateResult]
    winner: int  # API index
    budget: float

    @property
    def best(self) -> CandidateResult:
        return next(c for c in self.candidates if c.base == self.winner)

    def to_json(self, strategy_ref: str | None = None) -> dict:
        return {
            "budget": self.budget,
            "winner": self.best.name,
            "strategy": strategy_ref,
            "candidates": [
                {
                    "base": c.name,
                    "val_accuracy": c.val_accuracy,
                    "val_cost": c.val_cost,
                    "p_hat": c.p_hat,
                    "delta": c.delta,
                }
                for c in self.candidates
            ],
        }

    def save(self, path: str | Path, strategy_ref: str | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(strategy_ref), indent=2) + "\n", encoding="utf-8")


def search_base(
    train: Sequence[Record],
    val: Sequence[Record],
    costs: CostTable,
    budget: float,
    featurizer: Featurizer,
    candidates: Sequence[int] | None = None,
    metric: Metric = JACCARD,
    M: int = 10,
    forest_params: ForestParams | None = None,
    seed: int = 0,
) -> BaseSearchReport:
    """Train and validate one strategy per affordable candidate base.

    The winner has the highest validation accuracy; ties go to the cheaper
    base, then the lower index.
    """
    pool = range(costs.n_apis) if candidates is None else candidates
    feasible = [b for b in pool if costs.costs[b] <= budget]
    if not feasible:
        raise NoFeasibleBase(f"infeasible: no candidate base costs at most the budget {budget}")
    names = costs.names or tuple(str(i) for i in range(costs.n_apis))
    results = []
    for b in feasible:
        cb = with_base(costs, b)
        comp = fit_components(train, val, cb, featurizer, metric, M, "forest", forest_params, seed)
        strat = comp.strategy_for(budget)
        assign, pred = strat.select(val)
        ev = evaluate_assignments(strat, val, assign, pred)
        res = CandidateResult(b, names[b], ev.mean_accuracy, ev.mean_cost(cb), strat.p_hat, strat.delta, strat)
        logger.info("base %s: val acc %.4f cost %.4f", res.name, res.val_accuracy, res.val_cost)
        results.append(res)
    winner = max(results, key=lambda r: (r.val_accuracy, -costs.costs[r.base], -r.base))
    return BaseSearchReport(results, winner.base, budget)
