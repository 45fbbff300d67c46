"""Command-line front end.

Columns are 1-based on the command line. Every subcommand takes ``--seed``
and ``--threads``. Usage errors exit with status 2, runtime failures with 1,
and a study exits with 1 when any of its cells failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .data import (
    MECHANISMS,
    DataFormatError,
    MechanismSpec,
    apply_mechanism,
    gen_friedman1,
    load_csv,
    load_mechanism_config,
    save_csv,
)
from .forest import ForestParams, default_jobs, load_forest, predict_dataset, save_forest, train_forest
from .imputation import DEFAULT_ITERATIONS, DEFAULT_K_NEIGHBORS, METHODS as IMPUTE_METHODS, impute, save_trace


def _rate(text: str) -> float:
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"rate must lie in [0, 1), got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _rates(text: str) -> tuple[float, ...]:
    return tuple(_rate(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(_positive(t) for t in text.split(",") if t.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(t.strip().upper() for t in text.split(",") if t.strip())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    g.add_argument("--threads", type=_positive, default=None,
                   help="worker threads (default: number of CPUs)")
    g.add_argument("--verbose", action="store_true", help="log one line per experiment cell")
    return p


def _forest_flags(p: argparse.ArgumentParser, rule: bool = True) -> None:
    g = p.add_argument_group("forest")
    g.add_argument("--trees", type=_positive, default=100, help="number of trees (default 100)")
    g.add_argument("--mtry", type=_positive, default=None, help="features tried per node (default floor(p/3))")
    g.add_argument("--subsample", type=_positive, default=None, help="rows per tree (default ceil(0.632 n))")
    g.add_argument("--nodesize", type=_positive, default=5, help="largest final cell (default 5)")
    g.add_argument("--replacement", action="store_true", help="bootstrap instead of subsampling")
    g.add_argument("--search", choices=["exhaustive", "dichotomy"], default="exhaustive",
                   help="assignation search (default exhaustive)")
    if rule:
        g.add_argument("--rule", choices=["assignation", "mia", "classic"], default="assignation",
                       help="split rule (default assignation)")


def _params_dict(args) -> dict:
    return dict(n_trees=args.trees, mtry=args.mtry, subsample=args.subsample, nodesize=args.nodesize,
                replacement=args.replacement, search_mode=args.search,
                split_rule=getattr(args, "rule", "assignation"), seed=args.seed)


def _study_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config; flags below override it")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for CSV and SVG outputs")
    p.add_argument("--replicates", type=_positive, help="number of replicates (desk default 20)")
    p.add_argument("--full", action="store_true", help="run the full 100-replicate study")
    p.add_argument("--n-train", type=_positive, help="training rows per replicate (default 200)")
    p.add_argument("--n-test", type=_positive, help="test rows (default 2000)")
    p.add_argument("--mechanisms", type=_names, help="comma list, e.g. MCAR,DEPY (default all seven)")
    p.add_argument("--trees", type=_positive, help="trees per forest (default 100)")
    p.add_argument("--search", choices=["exhaustive", "dichotomy"], help="assignation search for OURS")
    p.add_argument("--timing", action="store_true", help="also write results_timing.csv (not reproducible)")
    p.add_argument("--no-figures", action="store_true", help="skip the SVG charts")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="rfassign", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", parents=[common], help="draw a friedman1 dataset")
    p.add_argument("--n", type=_positive, required=True, help="number of rows")
    p.add_argument("--noise-sd", type=float, default=1.0, help="standard deviation of the noise on y (default 1)")
    p.add_argument("--out", type=Path, required=True, help="output CSV")

    p = sub.add_parser("corrupt", parents=[common], help="mask cells with a missing-data mechanism")
    p.add_argument("--in", dest="input", type=Path, required=True, help="input CSV")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.add_argument("--config", type=Path, help="YAML mechanism config (replaces the flags below)")
    p.add_argument("--mechanism", type=str.upper, choices=MECHANISMS,
                   help="mechanism name")
    p.add_argument("--col", type=_positive, action="append", default=[], help="target column (repeatable)")
    p.add_argument("--rate", type=_rate, action="append", default=[], help="missing fraction per --col")
    p.add_argument("--determining", type=_positive, action="append", default=[],
                   help="determining column per --col (MAR mechanisms)")
    p.set_defaults(subparser=p)

    p = sub.add_parser("train", parents=[common], help="fit a forest and save it")
    p.add_argument("--in", dest="input", type=Path, required=True, help="training CSV")
    p.add_argument("--out", type=Path, required=True, help="forest file (JSON)")
    _forest_flags(p)

    p = sub.add_parser("predict", parents=[common], help="predict a CSV with a saved forest")
    p.add_argument("--forest", type=Path, required=True, help="forest file written by train")
    p.add_argument("--in", dest="input", type=Path, required=True, help="query CSV (NA = missing)")
    p.add_argument("--out", type=Path, help="prediction CSV (default: <in>.predictions.csv)")

    p = sub.add_parser("impute", parents=[common], help="complete a CSV with an imputation method")
    p.add_argument("--in", dest="input", type=Path, required=True, help="incomplete CSV")
    p.add_argument("--out", type=Path, required=True, help="completed CSV")
    p.add_argument("--method", choices=IMPUTE_METHODS, required=True, help="imputation method")
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS, help="refinement rounds (default 10)")
    p.add_argument("--k-neighbors", type=_positive, default=DEFAULT_K_NEIGHBORS,
                   help="neighbours for ishioka (default 10)")
    p.add_argument("--trace", type=Path, help="CSV of imputed cells per iteration")
    p.add_argument("--without-response", action="store_true",
                   help="missforest: predict each column from the other features only")
    _forest_flags(p, rule=False)

    p = sub.add_parser("study-mechanisms", parents=[common], help="every method under every mechanism")
    _study_flags(p)
    p.add_argument("--methods", type=_names, help="comma list of methods (default all)")

    p = sub.add_parser("study-rates", parents=[common], help="sweep the missing rate of one column")
    _study_flags(p)
    p.add_argument("--methods", type=_names, help="comma list of methods (LISTWISE is skipped)")
    p.add_argument("--sweep", type=_rates, help="comma list of rates (default 0.05,...,0.95)")
    p.add_argument("--sweep-column", type=_positive, help="1-based column to sweep (default 4)")

    p = sub.add_parser("study-test-missing", parents=[common], help="predict test sets with missing entries")
    _study_flags(p)
    p.add_argument("--test-sweep", type=_rates, help="comma list of test rates (default 0,0.05,...,0.95)")

    p = sub.add_parser("probe-complexity", parents=[common], help="count criterion evaluations per search mode")
    p.add_argument("--n-grid", type=_ints, default=(100, 200, 400, 800), help="comma list of sizes")
    p.add_argument("--missing", type=_rate, default=0.4, help="MCAR fraction on every column (default 0.4)")
    p.add_argument("--nodesize", type=_positive, default=5, help="largest final cell (default 5)")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for complexity.csv and the chart")
    p.add_argument("--no-figures", action="store_true", help="skip the SVG chart")
    return parser


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    save_csv(gen_friedman1(args.n, args.noise_sd, args.seed), args.out)
    return 0


def cmd_corrupt(args, parser) -> int:
    data = load_csv(args.input)
    if args.config:
        spec, seed = load_mechanism_config(args.config, data.column_names)
        if args.seed:
            seed = args.seed
    else:
        if args.mechanism is None:
            parser.error("corrupt needs --mechanism or --config")
        if len(args.rate) != len(args.col):
            parser.error("give one --rate per --col")
        if args.determining and len(args.determining) != len(args.col):
            parser.error("give one --determining per --col")
        targets = tuple((c - 1, r) for c, r in zip(args.col, args.rate))
        det = {c - 1: d - 1 for c, d in zip(args.col, args.determining)}
        for c, _ in targets:
            if c >= data.n_features:
                parser.error(f"--col {c + 1} exceeds the {data.n_features} feature columns")
        spec = MechanismSpec(args.mechanism, targets, det)
        seed = args.seed
    save_csv(apply_mechanism(data, spec, seed), args.out)
    return 0


def cmd_train(args) -> int:
    data = load_csv(args.input)
    forest = train_forest(data, ForestParams(**_params_dict(args)), n_jobs=args.threads)
    save_forest(forest, args.out)
    return 0


def cmd_predict(args) -> int:
    forest = load_forest(args.forest)
    data = load_csv(args.input)
    if data.n_features != forest.n_features:
        raise ValueError(f"query has {data.n_features} features, forest expects {forest.n_features}")
    pred = predict_dataset(forest, data, args.seed)
    out = args.out or args.input.with_suffix(".predictions.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "prediction"])
        for i, v in enumerate(pred, start=1):
            w.writerow([i, repr(float(v))])
    return 0


def cmd_impute(args) -> int:
    data = load_csv(args.input)
    d = _params_dict(args)
    d["split_rule"] = "CLASSIC"
    result = impute(args.method, data, ForestParams(**d), args.iterations, args.k_neighbors, n_jobs=args.threads,
                    include_response=not args.without_response)
    save_csv(result.completed(), args.out)
    if args.trace:
        save_trace(result, args.trace)
    return 0


def _study_config(args) -> bench.ExperimentConfig:
    cfg = bench.load_experiment_config(args.config) if args.config else bench.ExperimentConfig()
    over = {"master_seed": args.seed}
    if args.full:
        over["replicates"] = bench.FULL_REPLICATES
    for flag, key in (("replicates", "replicates"), ("n_train", "n_train"), ("n_test", "n_test"),
                      ("mechanisms", "mechanisms"), ("methods", "methods"), ("sweep", "rate_sweep"),
                      ("test_sweep", "test_rate_sweep")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "sweep_column", None) is not None:
        over["sweep_column"] = args.sweep_column - 1
    forest = cfg.forest
    if args.trees is not None:
        forest = replace(forest, n_trees=args.trees)
    if args.search is not None:
        forest = replace(forest, search_mode=args.search)
    over["forest"] = forest
    return replace(cfg, **over)


def cmd_study(args, runner) -> int:
    cfg = _study_config(args)
    results = runner(cfg, n_jobs=args.threads)
    bench.emit_results(results, args.out_dir, timing=args.timing, figures=not args.no_figures)
    failed = [r for r in results if r.failed]
    for r in failed:
        print(f"cell failed: {r.method} {r.mechanism} rate={r.rate_point} rep={r.replicate}: {r.status}",
              file=sys.stderr)
    return 1 if failed else 0


def cmd_probe(args) -> int:
    rows = bench.complexity_probe(list(args.n_grid), args.missing, args.seed, args.nodesize)
    bench.emit_probe(rows, args.out_dir, figures=not args.no_figures)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.threads is None:
        args.threads = default_jobs()
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "corrupt":
            return cmd_corrupt(args, args.subparser)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "impute":
            return cmd_impute(args)
        if args.command == "study-mechanisms":
            return cmd_study(args, bench.run_mechanism_study)
        if args.command == "study-rates":
            return cmd_study(args, bench.run_rate_sweep)
        if args.command == "study-test-missing":
            return cmd_study(args, bench.run_test_missing_sweep)
        if args.command == "probe-complexity":
            return cmd_probe(args)
    except (DataFormatError, ValueError, KeyError, IndexError, OSError) as exc:
        print(f"rfassign {args.command}: error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
