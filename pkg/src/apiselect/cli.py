"""Command-line front end.

    apiselect synth  --out data/
    apiselect train  --records data/records.jsonl --costs data/costs.json --budget 3 --out s.json
    apiselect sweep  --records ... --costs ... --budgets 0 1 2 4 8 --out sweep.csv
    apiselect replay --strategy s.json --records test.jsonl --out log.csv
    apiselect report --records ... --costs ...
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import baselines
from .base_search import NoFeasibleBase, search_base
from .core import METRICS, CostTable, precision_recall_per_label
from .ingestion import Dataset, dump_records, load_cost_table, load_embeddings, load_records, split
from .pipeline import Strategy, evaluate_assignments, fit_components, resolve_featurizer, with_base
from .predictor import ForestParams, rmse_pcc
from .selector import InfeasibleBudget, SelectionInstance, offline_strategy
from .synthetic import write_fixture

logger = logging.getLogger("apiselect")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

SWEEP_FIELDS = ("strategy_kind", "budget", "realized_cost", "accuracy")


def _default_seed() -> int:
    return int(os.environ.get("FRUGAL_SEED", "0"))


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--records", required=True, help="JSON-Lines prediction log")
    p.add_argument("--costs", required=True, help="cost table JSON")
    p.add_argument("--embeddings", help="label embeddings (JSON-Lines); switches to embedding features")
    p.add_argument("--base", help="base API name (default: the cost table's base)")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--metric", choices=sorted(METRICS), default="jaccard")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--grid", type=int, default=10, help="combiner grid resolution M")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--min-leaf", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apiselect", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a strategy for one budget")
    _add_data_args(p)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--base-search", action="store_true", help="pick the base API on validation data")
    p.add_argument("--candidates", help="comma-separated candidate bases for --base-search")
    p.add_argument("--delta", type=float, help="fixed buffer instead of validation tuning")
    p.add_argument("--write-splits", help="directory to write train/validation/test JSON-Lines")
    p.add_argument("--out", required=True, help="strategy JSON path")

    p = sub.add_parser("sweep", help="accuracy/cost table over several budgets")
    _add_data_args(p)
    p.add_argument("--budgets", type=float, nargs="*", required=True)
    p.add_argument("--with-dap", action="store_true", help="add the dummy-predictor ablation")
    p.add_argument("--with-baselines", action="store_true", help="add majority and weighted majority vote")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("replay", help="replay a stream through a trained strategy")
    p.add_argument("--strategy", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="assignment log CSV")
    p.add_argument("--summary", help="summary JSON path (default: stdout)")

    p = sub.add_parser("report", help="predictor and baseline diagnostics on the test split")
    _add_data_args(p)
    p.add_argument("--out", help="JSON path (default: stdout)")

    p = sub.add_parser("synth", help="write the seeded synthetic fixture")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=_default_seed())
    return parser


def _load(args) -> tuple[Dataset, CostTable, object]:
    embeddings = load_embeddings(args.embeddings) if args.embeddings else None
    ds = load_records(args.records, bounded=embeddings is None)
    costs = load_cost_table(args.costs, ds.api_names)
    if args.base:
        if args.base not in ds.api_names:
            raise ValueError(f"unknown base API {args.base!r}")
        costs = with_base(costs, ds.api_names.index(args.base))
    featurizer = resolve_featurizer(ds.label_vocabulary, embeddings)
    return ds, costs, featurizer


def _forest(args) -> ForestParams:
    return ForestParams(n_trees=args.trees, min_samples_leaf=args.min_leaf)


def cmd_train(args) -> int:
    ds, costs, featurizer = _load(args)
    if args.budget < costs.base_cost and not args.base_search:
        raise InfeasibleBudget(f"infeasible: budget {args.budget} below base cost {costs.base_cost}")
    train, val, test = split(ds, args.train_fraction, args.seed)
    if args.write_splits:
        d = Path(args.write_splits)
        d.mkdir(parents=True, exist_ok=True)
        for name, part in (("train", train), ("validation", val), ("test", test)):
            dump_records(part, d / f"{name}.jsonl")
    metric = METRICS[args.metric]
    out = Path(args.out)
    if args.base_search:
        cands = None
        if args.candidates:
            cands = [ds.api_names.index(n.strip()) for n in args.candidates.split(",")]
        report = search_base(
            train.records, val.records, costs, args.budget, featurizer, cands, metric, args.grid, _forest(args), args.seed
        )
        strategy = report.best.strategy
        strategy.embeddings_path = args.embeddings
        strategy.save(out)
        report.save(out.with_name(out.stem + ".base_search.json"), out.name)
    else:
        comp = fit_components(
            train.records, val.records, costs, featurizer, metric, args.grid, "forest", _forest(args), args.seed
        )
        strategy = comp.strategy_for(args.budget, args.delta)
        strategy.embeddings_path = args.embeddings
        strategy.save(out)
    print(
        f"base={strategy.api_names[strategy.base]} p_hat={strategy.p_hat:.6g} "
        f"delta={strategy.delta:.6g} -> {out}"
    )
    return EXIT_OK


def _row(kind, budget, cost, acc) -> dict:
    return {"strategy_kind": kind, "budget": budget, "realized_cost": cost, "accuracy": acc}


def cmd_sweep(args) -> int:
    if not args.budgets:
        raise ValueError("empty budget list")
    ds, costs, featurizer = _load(args)
    low = [b for b in args.budgets if b < costs.base_cost]
    if low:
        raise InfeasibleBudget(f"infeasible: budgets {low} below base cost {costs.base_cost}")
    train, val, test = split(ds, args.train_fraction, args.seed)
    metric = METRICS[args.metric]
    comp = fit_components(
        train.records, val.records, costs, featurizer, metric, args.grid, "forest", _forest(args), args.seed
    )
    variants = [("online", comp)]
    if args.with_dap:
        dap = fit_components(
            train.records, val.records, costs, featurizer, metric, args.grid, "dummy",
            combiner_params=comp.combiner_params,
        )
        variants.append(("dap_online", dap))
    test_records = test.records
    test_true = comp.true_accuracy(test_records)
    rows = []
    for budget in args.budgets:
        for kind, c in variants:
            strat = c.strategy_for(budget)
            assign, pred = strat.select(test_records)
            ev = evaluate_assignments(strat, test_records, assign, pred)
            rows.append(_row(kind, budget, ev.mean_cost(costs), ev.mean_accuracy))
        assign, _ = offline_strategy(SelectionInstance(comp.predict(test_records), costs, budget))
        spend = sum((Fraction(float(costs.hatted_cost(int(k)))) for k in assign), Fraction(0))
        cost = float(Fraction(costs.base_cost) + spend / len(assign))
        rows.append(_row("offline", budget, cost, float(test_true[np.arange(len(assign)), assign].mean())))
    single = baselines.api_accuracies(test_records, metric)
    for k, name in enumerate(ds.api_names):
        rows.append(_row(f"single_api:{name}", costs.costs[k], costs.costs[k], float(single[k])))
    if args.with_baselines:
        total = baselines.ensemble_cost(costs)
        maj = np.mean([metric(r.truth, baselines.majority_vote(r)) for r in test_records])
        params = baselines.fit_weighted_vote(train.records, args.grid, metric)
        wmaj = np.mean([metric(r.truth, baselines.weighted_majority_vote(r, params)) for r in test_records])
        rows.append(_row("majority", total, total, float(maj)))
        rows.append(_row("weighted_majority", total, total, float(wmaj)))
    rows.sort(key=lambda r: (r["strategy_kind"], r["budget"]))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    strategy = Strategy.load(args.strategy)
    embeddings_mode = strategy.featurizer.vocabulary is None
    ds = load_records(args.records, bounded=not embeddings_mode)
    if set(ds.api_names) != set(strategy.api_names):
        raise ValueError(f"records APIs {list(ds.api_names)} do not match strategy APIs {list(strategy.api_names)}")
    order = [ds.api_names.index(n) for n in strategy.api_names]
    records = [
        type(r)(r.id, tuple(r.predictions[i] for i in order), r.truth) for r in ds.records
    ]
    assign, pred = strategy.select(records)
    ev = evaluate_assignments(strategy, records, assign, pred)
    names = strategy.api_names
    cumulative = Fraction(0)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "chosen_api", "addon_cost", "cumulative_spend", "predicted_accuracy"])
        for r, k, c, p in zip(records, assign, ev.addon_cost, ev.predicted):
            cumulative += Fraction(float(c))
            w.writerow([r.id, names[int(k)], repr(float(c)), repr(float(cumulative)), repr(float(p))])
    counts = np.bincount(assign, minlength=len(names))
    summary = {
        "n": len(records),
        "budget": strategy.budget,
        "call_fractions": {n: float(c) / len(records) for n, c in zip(names, counts)},
        "mean_accuracy": ev.mean_accuracy,
        "mean_cost": ev.mean_cost(strategy.costs),
    }
    text = json.dumps(summary, indent=2) + "\n"
    if args.summary:
        Path(args.summary).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    ds, costs, featurizer = _load(args)
    train, val, test = split(ds, args.train_fraction, args.seed)
    metric = METRICS[args.metric]
    comp = fit_components(
        train.records, val.records, costs, featurizer, metric, args.grid, "forest", _forest(args), args.seed
    )
    dap = fit_components(
        train.records, val.records, costs, featurizer, metric, args.grid, "dummy", combiner_params=comp.combiner_params
    )
    test_true = comp.true_accuracy(test.records)
    f_rmse, f_pcc = rmse_pcc(comp.predict(test.records), test_true)
    d_rmse, d_pcc = rmse_pcc(dap.predict(test.records), test_true)
    single = baselines.api_accuracies(test.records, metric)
    params = baselines.fit_weighted_vote(train.records, args.grid, metric)
    per_api_pr = {
        name: precision_recall_per_label([(r.truth, baselines.single_api_prediction(r, k)) for r in test.records])
        for k, name in enumerate(ds.api_names)
    }
    report = {
        "predictor": {"forest": {"rmse": f_rmse, "pcc": f_pcc}, "dummy": {"rmse": d_rmse, "pcc": d_pcc}},
        "combiner": {n: {"w": p.w, "theta": p.theta} for n, p in zip(ds.api_names, comp.combiner_params)},
        "single_api_accuracy": dict(zip(ds.api_names, map(float, single))),
        "majority_vote": float(np.mean([metric(r.truth, baselines.majority_vote(r)) for r in test.records])),
        "weighted_majority_vote": float(
            np.mean([metric(r.truth, baselines.weighted_majority_vote(r, params)) for r in test.records])
        ),
        "ensemble_cost": baselines.ensemble_cost(costs),
        "per_label_precision_recall": {n: {l: list(v) for l, v in pr.items()} for n, pr in per_api_pr.items()},
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    paths = write_fixture(args.out, args.n, args.seed)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "replay": cmd_replay, "report": cmd_report, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InfeasibleBudget, NoFeasibleBase) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
