"""Loading recorded API logs, cost tables and label embeddings."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import CostTable, Record

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or inconsistent input file."""


@dataclass(frozen=True)
class Dataset:
    records: tuple[Record, ...]
    api_names: tuple[str, ...]
    label_vocabulary: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "api_names", tuple(self.api_names))
        k = len(self.api_names)
        for r in self.records:
            if r.n_apis != k:
                raise DataError(f"record {r.id!r} has {r.n_apis} predictions, expected {k}")
        if self.label_vocabulary is not None:
            vocab = set(self.label_vocabulary)
            missing = {lab for r in self.records for lab in r.truth} - vocab
            if missing:
                raise DataError(f"truth labels missing from vocabulary: {sorted(missing)[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_apis(self) -> int:
        return len(self.api_names)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.records[i] for i in indices), self.api_names, self.label_vocabulary)


@dataclass(frozen=True)
class EmbeddingTable:
    dimension: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if self.dimension < 1:
            raise DataError("embedding dimension must be positive")
        for label, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise DataError(f"embedding for {label!r} has shape {vec.shape}, expected ({self.dimension},)")


def build_vocabulary(records: Iterable[Record]) -> tuple[str, ...]:
    labels: set[str] = set()
    for r in records:
        labels |= r.truth
        for pred in r.predictions:
            labels |= set(pred)
    return tuple(sorted(labels))


def _parse_predictions(raw, lineno: int) -> dict[str, float]:
    out: dict[str, float] = {}
    for item in raw:
        try:
            label, score = item
            score = float(score)
        except (TypeError, ValueError) as exc:
            raise DataError(f"line {lineno}: bad prediction entry {item!r}") from exc
        if not isinstance(label, str):
            raise DataError(f"line {lineno}: label must be a string, got {label!r}")
        if np.isnan(score):
            raise DataError(f"line {lineno}: NaN score for {label!r}")
        score = min(1.0, max(0.0, score))
        out[label] = max(score, out.get(label, 0.0))
    return out


def load_records(path: str | Path, bounded: bool = True) -> Dataset:
    """Read a JSON-Lines prediction log.

    API order follows the key order of the first record. Scores are clamped into
    [0, 1]; a label repeated within one API's output keeps its highest score.
    With ``bounded`` the vocabulary is every label seen in truths or predictions.
    """
    records: list[Record] = []
    api_names: tuple[str, ...] | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or not {"id", "truth", "predictions"} <= obj.keys():
                raise DataError(f"line {lineno}: expected keys id, truth, predictions")
            preds = obj["predictions"]
            if not isinstance(preds, dict):
                raise DataError(f"line {lineno}: predictions must be an object keyed by API name")
            if api_names is None:
                api_names = tuple(preds)
            elif set(preds) != set(api_names):
                raise DataError(
                    f"line {lineno}: inconsistent API set {sorted(preds)} vs {sorted(api_names)}"
                )
            try:
                record = Record(
                    id=str(obj["id"]),
                    predictions=tuple(_parse_predictions(preds[name], lineno) for name in api_names),
                    truth=frozenset(obj["truth"]),
                )
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            records.append(record)
    if api_names is None:
        raise DataError(f"{path}: no records")
    vocab = build_vocabulary(records) if bounded else None
    logger.info("loaded %d records over %d APIs from %s", len(records), len(api_names), path)
    return Dataset(tuple(records), api_names, vocab)


def dump_records(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset.records:
            obj = {
                "id": r.id,
                "truth": sorted(r.truth),
                "predictions": {
                    name: [[label, score] for label, score in pred.items()]
                    for name, pred in zip(dataset.api_names, r.predictions)
                },
            }
            fh.write(json.dumps(obj) + "\n")


def load_cost_table(path: str | Path, api_names: Sequence[str]) -> CostTable:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        apis, base = obj["apis"], obj["base"]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: cost table needs 'apis' and 'base'") from exc
    unit = obj.get("price_unit", "per_query")
    if unit != "per_query":
        raise DataError(f"{path}: unsupported price_unit {unit!r}")
    missing = [n for n in api_names if n not in apis]
    if missing:
        raise DataError(f"{path}: no cost for APIs {missing}")
    if base not in api_names:
        raise DataError(f"{path}: base {base!r} is not one of {list(api_names)}")
    costs = []
    for name in api_names:
        c = float(apis[name])
        if c < 0 or not np.isfinite(c):
            raise DataError(f"{path}: cost for {name!r} must be non-negative, got {c}")
        costs.append(c)
    return CostTable(tuple(costs), list(api_names).index(base), tuple(api_names))


def dump_cost_table(costs: CostTable, path: str | Path) -> None:
    if costs.names is None:
        raise ValueError("cost table has no API names")
    obj = {
        "apis": dict(zip(costs.names, costs.costs)),
        "base": costs.names[costs.base],
        "price_unit": "per_query",
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                label, vec = obj["label"], np.asarray(obj["vector"], dtype=float)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"line {lineno}: bad embedding entry") from exc
            if dim is None:
                dim = vec.size
            if vec.shape != (dim,):
                raise DataError(f"line {lineno}: vector length {vec.size}, expected {dim}")
            vectors[label] = vec
    if dim is None:
        raise DataError(f"{path}: no embeddings")
    return EmbeddingTable(dim, vectors)


def split(
    dataset: Dataset, train_fraction: float = 0.5, seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle and cut into train / validation / test.

    Train gets ``floor(N * train_fraction)``; the rest is halved, with an odd
    record going to test.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(dataset)
    if n < 3:
        raise DataError(f"need at least 3 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(n * train_fraction))
    n_val = (n - n_train) // 2
    return (
        dataset.subset(order[:n_train]),
        dataset.subset(order[n_train : n_train + n_val]),
        dataset.subset(order[n_train + n_val :]),
    )
