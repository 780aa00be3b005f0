"""Seeded synthetic API logs for demos, tests and the CLI fixture.

Inputs fall into a few latent scene types. Each type draws its true labels from
its own label pool, and every simulated API has a per-type detection rate, so
the base API's output carries information about which add-on will do well.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import CostTable, Record
from .ingestion import Dataset, EmbeddingTable, build_vocabulary, dump_cost_table, dump_records

API_NAMES = ("open_model", "vendor_a", "vendor_b", "vendor_c")
API_COSTS = (0.0, 2.0, 4.0, 10.0)
# Detection rate per (API, scene type).
DETECTION = np.array(
    [
        [0.55, 0.50, 0.45, 0.40],
        [0.90, 0.85, 0.35, 0.30],
        [0.35, 0.40, 0.90, 0.85],
        [0.80, 0.80, 0.80, 0.80],
    ]
)
FALSE_POSITIVE = np.array([0.35, 0.15, 0.15, 0.08])


def make_records(
    n: int,
    seed: int = 0,
    detection: np.ndarray = DETECTION,
    false_positive: np.ndarray = FALSE_POSITIVE,
    api_names: tuple[str, ...] = API_NAMES,
    labels_per_type: int = 4,
) -> Dataset:
    rng = np.random.default_rng(seed)
    k, n_types = detection.shape
    pools = [[f"t{t}_l{j}" for j in range(labels_per_type)] for t in range(n_types)]
    all_labels = [lab for pool in pools for lab in pool]
    records = []
    for i in range(n):
        t = int(rng.integers(n_types))
        size = int(rng.integers(1, 4))
        truth = set(rng.choice(pools[t], size=min(size, labels_per_type), replace=False).tolist())
        preds = []
        for j in range(k):
            out: dict[str, float] = {}
            for lab in sorted(truth):
                if rng.random() < detection[j, t]:
                    out[lab] = round(float(rng.uniform(0.45, 1.0)), 4)
            if rng.random() < false_positive[j]:
                lab = all_labels[int(rng.integers(len(all_labels)))]
                if lab not in out:
                    out[lab] = round(float(rng.uniform(0.05, 0.6)), 4)
            preds.append(out)
        records.append(Record(id=f"x{i:06d}", predictions=tuple(preds), truth=frozenset(truth)))
    return Dataset(tuple(records), api_names, build_vocabulary(records))


def make_cost_table(api_names=API_NAMES, costs=API_COSTS, base: int = 0) -> CostTable:
    return CostTable(tuple(costs), base, tuple(api_names))


def make_embeddings(vocabulary, dimension: int = 8, seed: int = 0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable(dimension, {lab: rng.normal(size=dimension) for lab in vocabulary})


def make_accuracy_matrix(n: int, seed: int = 0, k: int = 4) -> np.ndarray:
    """Continuous accuracy estimates in (0, 1); pricier columns are better on average."""
    rng = np.random.default_rng(seed)
    base = rng.beta(2.0, 3.0, size=(n, 1))
    lift = rng.beta(2.0, 2.0, size=(n, k - 1)) * np.linspace(0.2, 0.5, k - 1)
    noise = rng.uniform(-0.05, 0.05, size=(n, k - 1))
    addon = np.clip(base + lift + noise, 1e-6, 1 - 1e-6)
    return np.hstack([base, addon])


def write_fixture(out_dir: str | Path, n: int = 1000, seed: int = 0, embedding_dim: int = 8) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_records(n, seed)
    paths = {"records": out / "records.jsonl", "costs": out / "costs.json", "embeddings": out / "embeddings.jsonl"}
    dump_records(ds, paths["records"])
    dump_cost_table(make_cost_table(), paths["costs"])
    emb = make_embeddings(ds.label_vocabulary, embedding_dim, seed)
    with open(paths["embeddings"], "w", encoding="utf-8") as fh:
        for lab, vec in emb.vectors.items():
            fh.write(json.dumps({"label": lab, "vector": [round(float(v), 6) for v in vec]}) + "\n")
    return paths
