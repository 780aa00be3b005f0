"""Accuracy predictor: featurize the base API output, regress per-API accuracy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ScoredLabelSet
from .ingestion import EmbeddingTable

FORMAT_VERSION = 1


def featurize_bounded(base_set: ScoredLabelSet, vocabulary: Sequence[str]) -> np.ndarray:
    """Score-valued one-hot vector over ``vocabulary``; unknown labels are dropped."""
    if not vocabulary:
        raise ValueError("vocabulary must be non-empty")
    index = {label: i for i, label in enumerate(vocabulary)}
    vec = np.zeros(len(vocabulary))
    for label, score in base_set.items():
        i = index.get(label)
        if i is not None:
            vec[i] = score
    return vec


def featurize_unbounded(base_set: ScoredLabelSet, embeddings: EmbeddingTable) -> np.ndarray:
    """Quality-weighted sum of label embeddings; labels without an embedding are skipped."""
    if not embeddings.vectors:
        raise ValueError("embedding table is empty")
    vec = np.zeros(embeddings.dimension)
    for label, score in base_set.items():
        e = embeddings.vectors.get(label)
        if e is not None:
            vec += score * e
    return vec


@dataclass
class Featurizer:
    """Either a fixed vocabulary (one-hot scheme) or an embedding table."""

    vocabulary: tuple[str, ...] | None = None
    embeddings: EmbeddingTable | None = None

    def __post_init__(self):
        if (self.vocabulary is None) == (self.embeddings is None):
            raise ValueError("give exactly one of vocabulary or embeddings")
        if self.vocabulary is not None:
            if not self.vocabulary:
                raise ValueError("vocabulary must be non-empty")
            self.vocabulary = tuple(self.vocabulary)
            self._index = {label: i for i, label in enumerate(self.vocabulary)}

    @property
    def scheme(self) -> str:
        return "one_hot_bounded" if self.vocabulary is not None else "embedding_weighted"

    def __call__(self, base_set: ScoredLabelSet) -> np.ndarray:
        if self.vocabulary is not None:
            vec = np.zeros(len(self.vocabulary))
            for label, score in base_set.items():
                i = self._index.get(label)
                if i is not None:
                    vec[i] = score
            return vec
        return featurize_unbounded(base_set, self.embeddings)

    def matrix(self, base_sets: Sequence[ScoredLabelSet]) -> np.ndarray:
        return np.vstack([self(s) for s in base_sets]) if base_sets else np.zeros((0, self.dimension))

    @property
    def dimension(self) -> int:
        return len(self.vocabulary) if self.vocabulary is not None else self.embeddings.dimension


# -- regression forest -----------------------------------------------------


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 5
    max_features: int | None = None  # None -> ceil(sqrt(d))
    bootstrap: bool = True


@dataclass
class Tree:
    """Flat CART tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                return self.value[node]
            go_left = X[rows[active], feat[active]] <= self.threshold[node[active]]
            node[active] = np.where(go_left, self.left[node[active]], self.right[node[active]])

    def to_json(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"value": self.value[i].tolist()}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_json(int(self.left[i])),
            "right": self.to_json(int(self.right[i])),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Tree":
        feature, threshold, left, right, value = [], [], [], [], []

        def walk(node) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(None)
            if "value" in node:
                value[i] = node["value"]
                return i
            feature[i] = node["feature"]
            threshold[i] = node["threshold"]
            left[i] = walk(node["left"])
            right[i] = walk(node["right"])
            return i

        walk(obj)
        n_out = next(len(v) for v in value if v is not None)
        values = np.array([v if v is not None else [0.0] * n_out for v in value], dtype=float)
        return cls(
            np.array(feature, dtype=np.int64),
            np.array(threshold, dtype=float),
            np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64),
            values,
        )


def _best_split(X, Y, features, min_leaf):
    """Variance-reduction split over ``features``; returns (feature, threshold) or None."""
    n = X.shape[0]
    best_gain, best = 0.0, None
    total_sum = Y.sum(axis=0)
    parent_sse_part = (total_sum**2).sum() / n
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        csum = np.cumsum(Y[order], axis=0)[:-1]  # left sums for split after position i
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        right = total_sum - csum
        # SSE = sum(y^2) - sum^2/n per side; sum(y^2) cancels in the gain.
        score = (csum**2).sum(axis=1) / n_left + (right**2).sum(axis=1) / (n - n_left)
        score = np.where(valid, score, -np.inf)
        i = int(np.argmax(score))
        gain = score[i] - parent_sse_part
        if gain > best_gain + 1e-12:
            best_gain = gain
            t = 0.5 * (xs[i] + xs[i + 1])
            if not xs[i] <= t < xs[i + 1]:  # midpoint rounded onto the upper neighbour
                t = xs[i]
            best = (int(f), t)
    return best


def _grow_tree(X, Y, params: ForestParams, n_features_split: int, rng) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    d = X.shape[1]

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if idx.size < 2 * params.min_samples_leaf:
            continue
        if params.max_depth is not None and depth >= params.max_depth:
            continue
        Yn = Y[idx]
        if np.all(Yn == Yn[0]):
            continue
        feats = rng.choice(d, size=min(n_features_split, d), replace=False)
        split = _best_split(X[idx], Yn, feats, params.min_samples_leaf)
        if split is None:
            continue
        f, t = split
        mask = X[idx, f] <= t
        feature[node], threshold[node] = f, t
        li, ri = idx[mask], idx[~mask]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((left[node], li, depth + 1))
        stack.append((right[node], ri, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.vstack(value),
    )


@dataclass
class AccuracyModel:
    """Maps a feature vector to a per-API accuracy estimate in [0, 1]^K."""

    kind: str  # "forest" | "dummy"
    n_features: int | None
    n_outputs: int
    trees: list[Tree] = field(default_factory=list)
    constant: np.ndarray | None = None
    params: ForestParams | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if self.n_features is not None and X2.shape[1] != self.n_features:
            raise ValueError(f"feature dimension {X2.shape[1]} != trained dimension {self.n_features}")
        if self.kind == "dummy":
            out = np.broadcast_to(self.constant, (X2.shape[0], self.n_outputs)).copy()
        else:
            out = np.zeros((X2.shape[0], self.n_outputs))
            for tree in self.trees:
                out += tree.predict(X2)
            out /= len(self.trees)
        np.clip(out, 0.0, 1.0, out=out)
        return out[0] if single else out

    def to_json(self) -> dict:
        doc = {"format": FORMAT_VERSION, "kind": self.kind, "n_features": self.n_features, "n_outputs": self.n_outputs}
        if self.kind == "dummy":
            doc["constant"] = self.constant.tolist()
        else:
            doc["hyperparams"] = vars(self.params).copy()
            doc["trees"] = [t.to_json() for t in self.trees]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AccuracyModel":
        if doc.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {doc.get('format')!r}")
        if doc["kind"] == "dummy":
            return cls("dummy", doc.get("n_features"), doc["n_outputs"], constant=np.array(doc["constant"], dtype=float))
        if doc["kind"] != "forest":
            raise ValueError(f"unknown model kind {doc['kind']!r}")
        return cls(
            "forest",
            doc["n_features"],
            doc["n_outputs"],
            trees=[Tree.from_json(t) for t in doc["trees"]],
            params=ForestParams(**doc["hyperparams"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AccuracyModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _check_xy(features, targets):
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or Y.ndim != 2:
        raise ValueError("features and targets must be 2-D")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows vs {Y.shape[0]} target rows")
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    return X, Y


def fit_forest(features, targets, params: ForestParams | None = None, seed: int = 0) -> AccuracyModel:
    """Bootstrap-aggregated CART regression trees with multi-output leaves."""
    params = params or ForestParams()
    X, Y = _check_xy(features, targets)
    d = X.shape[1]
    mtry = params.max_features or max(1, math.ceil(math.sqrt(d)))
    seeds = np.random.SeedSequence(seed).spawn(params.n_trees)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        if params.bootstrap:
            idx = rng.integers(0, X.shape[0], size=X.shape[0])
            trees.append(_grow_tree(X[idx], Y[idx], params, mtry, rng))
        else:
            trees.append(_grow_tree(X, Y, params, mtry, rng))
    return AccuracyModel("forest", d, Y.shape[1], trees=trees, params=params)


def fit_dummy(targets, n_features: int | None = None) -> AccuracyModel:
    """Constant model: the per-API mean training accuracy."""
    Y = np.asarray(targets, dtype=float)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ValueError("need a non-empty 2-D target array")
    return AccuracyModel("dummy", n_features, Y.shape[1], constant=Y.mean(axis=0))


def predict(model: AccuracyModel, feature) -> np.ndarray:
    return model.predict(feature)


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either side has zero variance."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if den == 0.0:
        return 0.0
    return float((da * db).sum() / den)


def evaluate_predictor(model: AccuracyModel, features, true_acc) -> tuple[float, float]:
    """(RMSE, PCC) over every (record, API) pair."""
    X = np.asarray(features, dtype=float)
    A = np.asarray(true_acc, dtype=float)
    if A.size == 0:
        raise ValueError("empty evaluation set")
    return rmse_pcc(model.predict(X), A)


def rmse_pcc(pred, truth) -> tuple[float, float]:
    """RMSE over all (record, API) pairs and the pooled within-API correlation.

    Both sides are centred per API column before correlating the flattened
    pairs, so a predictor that is constant for each API scores exactly 0.
    """
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if truth.size == 0:
        raise ValueError("empty evaluation set")
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    rmse = float(np.sqrt(np.mean((pred - truth) ** 2)))
    if pred.ndim == 2:
        pred = _center_columns(pred)
        truth = _center_columns(truth)
    return rmse, pearson(pred, truth)


def _center_columns(a: np.ndarray) -> np.ndarray:
    # Constant columns become exact zeros (a float mean need not reproduce the constant).
    return np.where(np.ptp(a, axis=0) == 0, 0.0, a - a.mean(axis=0))
