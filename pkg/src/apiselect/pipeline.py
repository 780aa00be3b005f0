"""End-to-end training of a selection strategy and its JSON file format."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from . import combiner
from .combiner import CombinerParams
from .core import METRICS, CostTable, Metric, Record
from .ingestion import EmbeddingTable, load_embeddings
from .predictor import AccuracyModel, Featurizer, ForestParams, fit_dummy, fit_forest
from .selector import (
    InfeasibleBudget,
    OnlinePolicy,
    OnlineSelector,
    SelectionInstance,
    estimate_p_hat,
    offline_strategy,
    tune_delta,
)

logger = logging.getLogger(__name__)

STRATEGY_FORMAT = 1


def with_base(costs: CostTable, base: int) -> CostTable:
    return CostTable(costs.costs, base, costs.names)


@dataclass
class Components:
    """Budget-independent parts: tuned combiner, accuracy model and cached matrices."""

    costs: CostTable
    metric: Metric
    featurizer: Featurizer
    combiner_params: list[CombinerParams]
    model: AccuracyModel
    train_pred: np.ndarray
    val_pred: np.ndarray
    val_true: np.ndarray

    @property
    def base(self) -> int:
        return self.costs.base

    def predict(self, records: Sequence[Record]) -> np.ndarray:
        X = self.featurizer.matrix([r.predictions[self.base] for r in records])
        return self.model.predict(X)

    def true_accuracy(self, records: Sequence[Record]) -> np.ndarray:
        return combiner.true_accuracy_matrix(records, self.base, self.combiner_params, self.metric)

    def strategy_for(self, budget: float, delta: float | None = None) -> "Strategy":
        """Pick the buffer on validation (unless given) and estimate the dual price."""
        if budget < self.costs.base_cost:
            raise InfeasibleBudget(f"infeasible: budget {budget} below base cost {self.costs.base_cost}")
        train_inst = SelectionInstance(self.train_pred, self.costs, budget)
        if delta is None:
            val_inst = SelectionInstance(self.val_pred, self.costs, budget)
            delta = tune_delta(train_inst, val_inst, budget, val_true=self.val_true)
        p_hat = estimate_p_hat(train_inst, budget, delta)
        return Strategy(
            costs=self.costs,
            budget=budget,
            p_hat=p_hat,
            delta=delta,
            combiner_params=list(self.combiner_params),
            metric=self.metric.name,
            featurizer=self.featurizer,
            model=self.model,
        )


def fit_components(
    train: Sequence[Record],
    val: Sequence[Record],
    costs: CostTable,
    featurizer: Featurizer,
    metric: Metric = METRICS["jaccard"],
    M: int = 10,
    predictor: str = "forest",
    forest_params: ForestParams | None = None,
    seed: int = 0,
    combiner_params: list[CombinerParams] | None = None,
) -> Components:
    if not train or not val:
        raise ValueError("train and validation sets must be non-empty")
    base = costs.base
    if combiner_params is None:
        combiner_params = combiner.tune_all(train, base, costs.n_apis, M, metric)
    train_true = combiner.true_accuracy_matrix(train, base, combiner_params, metric)
    X_train = featurizer.matrix([r.predictions[base] for r in train])
    if predictor == "forest":
        model = fit_forest(X_train, train_true, forest_params, seed)
    elif predictor == "dummy":
        model = fit_dummy(train_true, X_train.shape[1])
    else:
        raise ValueError(f"unknown predictor {predictor!r}")
    comp = Components(
        costs=costs,
        metric=metric,
        featurizer=featurizer,
        combiner_params=list(combiner_params),
        model=model,
        train_pred=model.predict(X_train),
        val_pred=np.zeros((0, costs.n_apis)),
        val_true=np.zeros((0, costs.n_apis)),
    )
    comp.val_pred = comp.predict(val)
    comp.val_true = comp.true_accuracy(val)
    return comp


@dataclass
class Strategy:
    costs: CostTable
    budget: float
    p_hat: float
    delta: float
    combiner_params: list[CombinerParams]
    metric: str
    featurizer: Featurizer
    model: AccuracyModel
    embeddings_path: str | None = None
    model_path: str | None = field(default=None, compare=False)

    @property
    def base(self) -> int:
        return self.costs.base

    @property
    def api_names(self) -> tuple[str, ...]:
        return self.costs.names

    def predict(self, records: Sequence[Record]) -> np.ndarray:
        X = self.featurizer.matrix([r.predictions[self.base] for r in records])
        return self.model.predict(X)

    def select(self, records: Sequence[Record]) -> tuple[np.ndarray, np.ndarray]:
        """Online selection over ``records`` in order; returns (assignments, predicted accuracy)."""
        pred = self.predict(records)
        policy = OnlinePolicy(self.p_hat, self.delta, self.base)
        sel = OnlineSelector(policy, self.costs, len(records), self.budget)
        return sel.run_batch(pred), pred

    def offline(self, records: Sequence[Record]) -> np.ndarray:
        assign, _ = offline_strategy(SelectionInstance(self.predict(records), self.costs, self.budget))
        return assign

    def labels(self, record: Record, k: int) -> frozenset[str]:
        return combiner.combine_and_predict(record, self.base, k, self.combiner_params[k])

    def to_json(self, model_ref: str) -> dict:
        feat = (
            {"scheme": "one_hot_bounded", "vocabulary": list(self.featurizer.vocabulary)}
            if self.featurizer.vocabulary is not None
            else {"scheme": "embedding_weighted", "embeddings": self.embeddings_path}
        )
        return {
            "format": STRATEGY_FORMAT,
            "base": self.api_names[self.base],
            "p_hat": self.p_hat,
            "delta": self.delta,
            "budget": self.budget,
            "costs": {
                "apis": dict(zip(self.api_names, self.costs.costs)),
                "base": self.api_names[self.base],
                "price_unit": "per_query",
            },
            "api_order": list(self.api_names),
            "combiner": {
                name: {"w": p.w, "theta": p.theta} for name, p in zip(self.api_names, self.combiner_params)
            },
            "metric": self.metric,
            "featurizer": feat,
            "predictor_model": model_ref,
        }

    def save(self, path: str | Path) -> Path:
        """Write the strategy JSON and its model file (``<stem>.model.json``) beside it."""
        path = Path(path)
        model_path = path.with_name(path.stem + ".model.json")
        self.model.save(model_path)
        path.write_text(json.dumps(self.to_json(model_path.name), indent=2) + "\n", encoding="utf-8")
        self.model_path = str(model_path)
        return model_path

    @classmethod
    def load(cls, path: str | Path) -> "Strategy":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != STRATEGY_FORMAT:
            raise ValueError(f"unsupported strategy format {doc.get('format')!r}")
        names = tuple(doc["api_order"])
        costs = CostTable(tuple(doc["costs"]["apis"][n] for n in names), names.index(doc["base"]), names)
        feat_doc = doc["featurizer"]
        emb_path = None
        if feat_doc["scheme"] == "one_hot_bounded":
            featurizer = Featurizer(vocabulary=tuple(feat_doc["vocabulary"]))
        else:
            emb_path = feat_doc["embeddings"]
            resolved = Path(emb_path) if Path(emb_path).is_absolute() else path.parent / emb_path
            featurizer = Featurizer(embeddings=load_embeddings(resolved if resolved.exists() else emb_path))
        model_path = path.parent / doc["predictor_model"]
        return cls(
            costs=costs,
            budget=float(doc["budget"]),
            p_hat=float(doc["p_hat"]),
            delta=float(doc["delta"]),
            combiner_params=[CombinerParams(**doc["combiner"][n]) for n in names],
            metric=doc["metric"],
            featurizer=featurizer,
            model=AccuracyModel.load(model_path),
            embeddings_path=emb_path,
            model_path=str(model_path),
        )


@dataclass
class Evaluation:
    assignments: np.ndarray
    accuracy: np.ndarray  # realised metric per record
    predicted: np.ndarray  # predicted accuracy of the chosen API per record
    addon_cost: np.ndarray

    @property
    def mean_accuracy(self) -> float:
        return float(self.accuracy.mean())

    def mean_cost(self, costs: CostTable) -> float:
        total = sum((Fraction(float(c)) for c in self.addon_cost), Fraction(0))
        return float(Fraction(costs.base_cost) + total / len(self.addon_cost))


def evaluate_assignments(
    strategy: Strategy, records: Sequence[Record], assignments: np.ndarray, predicted: np.ndarray | None = None
) -> Evaluation:
    metric = METRICS[strategy.metric]
    acc = np.array([metric(r.truth, strategy.labels(r, int(k))) for r, k in zip(records, assignments)])
    hatted = strategy.costs.hatted_costs()
    if predicted is None:
        predicted = strategy.predict(records)
    chosen_pred = predicted[np.arange(len(records)), assignments]
    return Evaluation(np.asarray(assignments), acc, chosen_pred, hatted[assignments])


def resolve_featurizer(vocabulary, embeddings: EmbeddingTable | None) -> Featurizer:
    if embeddings is not None:
        return Featurizer(embeddings=embeddings)
    if not vocabulary:
        raise ValueError("bounded featurisation needs a label vocabulary")
    return Featurizer(vocabulary=tuple(vocabulary))
