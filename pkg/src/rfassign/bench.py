"""Simulation study harness: methods x mechanisms x rates x replicates.

Every record is reproducible on its own. The training sample of replicate r
comes from ``derive_seed(master, "train", r)``, its corruption from
``derive_seed(master, "corrupt", r, mechanism)`` and the forests of a method
from ``derive_seed(master, "method", r, mechanism, method)``. None of these
depend on the missing rate or on which other cells are run.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import yaml

from ._seeding import derive_seed
from .data import Dataset, MechanismSpec, apply_mechanism, eval_friedman1, gen_friedman1
from .forest import Forest, ForestParams, predict_complete, predict_with_missing, train_forest, variable_importance
from .imputation import breiman_impute, impute_median, ishioka_impute, listwise_delete, missforest_impute

log = logging.getLogger(__name__)

METHODS = ("OURS", "MIA", "MEDIAN", "BREIMAN", "ISHIOKA", "MISSFOREST", "LISTWISE", "COMP")
STUDY_MECHANISMS = ("MCAR", "MAR1", "MAR2", "MAR3", "MAR4", "DEPY", "LOG")
DEFAULT_RATES = ((0, 0.2), (2, 0.1), (3, 0.2))
DEFAULT_RATE_SWEEP = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95)
DEFAULT_TEST_RATE_SWEEP = (0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95)
TEST_SWEEP_TRAIN_RATES = ((0, 0.2), (2, 0.1), (3, 0.6))
DESK_REPLICATES = 20
FULL_REPLICATES = 100

LONG_COLUMNS = ("study", "method", "mechanism", "rate_point", "replicate", "status", "mse", "bias", "cart_evaluations")
SUMMARY_COLUMNS = ("study", "method", "mechanism", "rate_point", "n", "failures",
                   "mse_mean", "mse_se", "bias_mean", "bias_se")


def _ascending(seq) -> bool:
    return all(a < b for a, b in zip(seq[:-1], seq[1:]))


@dataclass(frozen=True)
class ExperimentConfig:
    """Study settings. Columns are 0-based here; the YAML loader takes 1-based."""

    n_train: int = 200
    n_test: int = 2000
    replicates: int = DESK_REPLICATES
    mechanisms: tuple[str, ...] = STUDY_MECHANISMS
    methods: tuple[str, ...] = METHODS
    rates: tuple[tuple[int, float], ...] = DEFAULT_RATES
    sweep_column: int = 3
    rate_sweep: tuple[float, ...] = DEFAULT_RATE_SWEEP
    test_rate_sweep: tuple[float, ...] = DEFAULT_TEST_RATE_SWEEP
    test_train_rates: tuple[tuple[int, float], ...] = TEST_SWEEP_TRAIN_RATES
    noise_sd: float = 1.0
    forest: ForestParams = field(default_factory=ForestParams)
    iterations: int = 10
    k_neighbors: int = 10
    master_seed: int = 0

    def __post_init__(self):
        mechs = tuple(m.upper() for m in self.mechanisms)
        bad = [m for m in mechs if m not in STUDY_MECHANISMS]
        if bad:
            raise ValueError(f"unknown mechanisms {bad}; expected a subset of {STUDY_MECHANISMS}")
        methods = tuple(m.upper() for m in self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        for name in ("rates", "test_train_rates"):
            rates = tuple((int(c), float(f)) for c, f in getattr(self, name))
            for c, f in rates:
                if not 0.0 <= f < 1.0:
                    raise ValueError(f"{name}: rate {f} for column {c} outside [0, 1)")
            object.__setattr__(self, name, rates)
        for name in ("rate_sweep", "test_rate_sweep"):
            sweep = tuple(float(r) for r in getattr(self, name))
            if any(not 0.0 <= r < 1.0 for r in sweep):
                raise ValueError(f"{name}: every rate must lie in [0, 1)")
            if not _ascending(sweep):
                raise ValueError(f"{name} must be sorted ascending without repeats")
            object.__setattr__(self, name, sweep)
        object.__setattr__(self, "mechanisms", mechs)
        object.__setattr__(self, "methods", methods)

    def rate_of(self, column: int) -> float:
        return dict(self.rates).get(column, 0.0)

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "ExperimentConfig":
        """Build from parsed YAML; rate maps use 1-based column keys."""
        known = {f.name for f in fields(cls)}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(cfg)
        for key in ("rates", "test_train_rates"):
            if key in kw:
                kw[key] = tuple(sorted((int(c) - 1, float(f)) for c, f in kw[key].items()))
        if "sweep_column" in kw:
            kw["sweep_column"] = int(kw["sweep_column"]) - 1
        for key in ("mechanisms", "methods", "rate_sweep", "test_rate_sweep"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "forest" in kw:
            kw["forest"] = ForestParams(**(kw["forest"] or {}))
        return cls(**kw)


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, Mapping):
        raise ValueError(f"{path}: expected a key-value mapping at top level")
    return ExperimentConfig.from_mapping(cfg)


@dataclass(frozen=True)
class ExperimentResult:
    """One cell of the experiment matrix. ``status`` is "ok" or "failed: ..."."""

    study: str
    method: str
    mechanism: str
    rate_point: float
    replicate: int
    mse: float
    bias: float
    wall_time: float = field(default=0.0, compare=False)
    cart_evaluations: int = 0
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status != "ok"


# ---------------------------------------------------------------------------
# metrics


def mse_and_bias(predictor, test_set: Dataset, truth=None) -> tuple[float, float]:
    """Mean squared and mean signed error of predictions against m(X).

    ``predictor`` is a Forest or a callable mapping an (n, p) matrix to
    predictions. ``truth`` defaults to the noiseless friedman1 value.
    """
    if test_set.n_rows == 0:
        raise ValueError("empty test set")
    if not test_set.is_complete():
        raise ValueError("the test set must be complete")
    X = test_set.features
    pred = predict_complete(predictor, X) if isinstance(predictor, Forest) else np.asarray(predictor(X), dtype=float)
    m = eval_friedman1(X) if truth is None else np.asarray(truth, dtype=float)
    err = pred - m
    return float(np.mean(err ** 2)), float(np.mean(err))


# ---------------------------------------------------------------------------
# data plumbing


def make_training_set(config: ExperimentConfig, replicate: int) -> Dataset:
    return gen_friedman1(config.n_train, config.noise_sd, derive_seed(config.master_seed, "train", replicate))


def make_test_set(config: ExperimentConfig) -> Dataset:
    """Shared noiseless test sample, so its response is m(X) itself."""
    return gen_friedman1(config.n_test, 0.0, derive_seed(config.master_seed, "test"))


def corrupt(config: ExperimentConfig, data: Dataset, replicate: int, mechanism: str,
            rates: Sequence[tuple[int, float]], stream: str = "corrupt") -> Dataset:
    spec = MechanismSpec.default(mechanism, dict(rates))
    return apply_mechanism(data, spec, derive_seed(config.master_seed, stream, replicate, mechanism))


def method_seed(config: ExperimentConfig, replicate: int, mechanism: str, method: str) -> int:
    return derive_seed(config.master_seed, "method", replicate, mechanism, method)


def fit_method(method: str, config: ExperimentConfig, clean: Dataset, corrupted: Dataset, seed: int) -> Forest:
    """Train the forest a method ends up predicting with."""
    base = replace(config.forest, seed=seed)
    classic = replace(base, split_rule="CLASSIC")
    imp_params = replace(config.forest, seed=derive_seed(seed, "impute"))
    if method == "OURS":
        return train_forest(corrupted, replace(base, split_rule="ASSIGNATION"))
    if method == "MIA":
        return train_forest(corrupted, replace(base, split_rule="MIA"))
    if method == "COMP":
        return train_forest(clean, classic)
    if method == "LISTWISE":
        kept = listwise_delete(corrupted)
        if kept.n_rows == 0:
            raise ValueError("listwise deletion left no rows")
        return train_forest(kept, classic)
    if method == "MEDIAN":
        imputed = impute_median(corrupted)
    elif method == "BREIMAN":
        imputed = breiman_impute(corrupted, imp_params, config.iterations)
    elif method == "ISHIOKA":
        imputed = ishioka_impute(corrupted, imp_params, config.iterations, config.k_neighbors)
    elif method == "MISSFOREST":
        imputed = missforest_impute(corrupted, imp_params, config.iterations)
    else:
        raise ValueError(f"unknown method {method!r}")
    return train_forest(imputed.completed(), classic)


def _evaluate(study, config, replicate, mechanism, method, rate_point, clean, corrupted, test) -> ExperimentResult:
    t0 = time.perf_counter()
    try:
        forest = fit_method(method, config, clean, corrupted, method_seed(config, replicate, mechanism, method))
        mse, bias = mse_and_bias(forest, test)
        rec = ExperimentResult(study, method, mechanism, rate_point, replicate, mse, bias,
                               time.perf_counter() - t0, forest.cart_evaluations)
    except ValueError as exc:
        rec = ExperimentResult(study, method, mechanism, rate_point, replicate, math.nan, math.nan,
                               time.perf_counter() - t0, 0, f"failed: {exc}")
    log.info("%s %s %s rate=%g rep=%d mse=%.4f %s", study, method, mechanism, rate_point,
             replicate, rec.mse, rec.status)
    return rec


def run_cell(config: ExperimentConfig, replicate: int, mechanism: str, method: str,
             rates: Sequence[tuple[int, float]] | None = None, study: str = "mechanisms") -> ExperimentResult:
    """One record, computed without running the rest of the matrix."""
    rates = config.rates if rates is None else tuple(rates)
    clean = make_training_set(config, replicate)
    corrupted = corrupt(config, clean, replicate, mechanism.upper(), rates)
    point = dict(rates).get(config.sweep_column, 0.0)
    return _evaluate(study, config, replicate, mechanism.upper(), method.upper(), point, clean, corrupted,
                     make_test_set(config))


def _run_group(study, config, replicate, mechanism, rate_point, rates, methods, test) -> list[ExperimentResult]:
    clean = make_training_set(config, replicate)
    corrupted = corrupt(config, clean, replicate, mechanism, rates)
    return [_evaluate(study, config, replicate, mechanism, method, rate_point, clean, corrupted, test)
            for method in methods]


def _map(fn: Callable, jobs: list, n_jobs: int | None) -> list:
    n_jobs = (os.cpu_count() or 1) if n_jobs is None else max(1, n_jobs)
    if n_jobs == 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def _flatten(groups) -> list[ExperimentResult]:
    return [r for g in groups for r in g]


def run_mechanism_study(config: ExperimentConfig, n_jobs: int | None = 1) -> list[ExperimentResult]:
    """Every method on every mechanism at the configured rates.

    ``rate_point`` is the rate of the sweep column. Within a replicate and
    mechanism all methods see the same corrupted training set.
    """
    test = make_test_set(config)
    point = config.rate_of(config.sweep_column)
    jobs = [("mechanisms", config, r, mech, point, config.rates, config.methods, test)
            for r in range(config.replicates) for mech in config.mechanisms]
    return _flatten(_map(_run_group, jobs, n_jobs))


def run_rate_sweep(config: ExperimentConfig, n_jobs: int | None = 1) -> list[ExperimentResult]:
    """Vary the sweep column's rate, other columns fixed; listwise deletion is skipped."""
    if not config.rate_sweep:
        raise ValueError("rate_sweep is empty")
    methods = tuple(m for m in config.methods if m != "LISTWISE")
    test = make_test_set(config)
    jobs = []
    for rate in config.rate_sweep:
        rates = dict(config.rates)
        rates[config.sweep_column] = rate
        rates = tuple(sorted(rates.items()))
        jobs += [("rates", config, r, mech, rate, rates, methods, test)
                 for r in range(config.replicates) for mech in config.mechanisms]
    return _flatten(_map(_run_group, jobs, n_jobs))


def _test_sweep_group(config, replicate, mechanism, test) -> list[ExperimentResult]:
    clean = make_training_set(config, replicate)
    corrupted = corrupt(config, clean, replicate, mechanism, config.test_train_rates)
    t0 = time.perf_counter()
    forest = fit_method("OURS", config, clean, corrupted, method_seed(config, replicate, mechanism, "OURS"))
    fit_time = time.perf_counter() - t0
    truth = eval_friedman1(test.features)
    out = []
    for rate in config.test_rate_sweep:
        t0 = time.perf_counter()
        if rate == 0.0:
            # the zero point is a fully observed test set
            pred = predict_complete(forest, test.features)
        else:
            rates = dict(config.rates)
            rates[config.sweep_column] = rate
            q = corrupt(config, test, replicate, mechanism, tuple(sorted(rates.items())), "test-corrupt")
            pred = predict_with_missing(forest, q.features, q.mask,
                                        derive_seed(config.master_seed, "predict", replicate, mechanism))
        err = pred - truth
        out.append(ExperimentResult("test-missing", "OURS", mechanism, rate, replicate,
                                    float(np.mean(err ** 2)), float(np.mean(err)),
                                    fit_time + time.perf_counter() - t0, forest.cart_evaluations))
        log.info("test-missing OURS %s rate=%g rep=%d mse=%.4f", mechanism, rate, replicate, out[-1].mse)
    return out


def run_test_missing_sweep(config: ExperimentConfig, n_jobs: int | None = 1) -> list[ExperimentResult]:
    """Train on incomplete data, then predict test sets with growing missingness."""
    test = make_test_set(config)
    jobs = [(config, r, mech, test) for r in range(config.replicates) for mech in config.mechanisms]
    return _flatten(_map(_test_sweep_group, jobs, n_jobs))


# ---------------------------------------------------------------------------
# complexity and importance


@dataclass(frozen=True)
class ProbeRow:
    n: int
    mode: str
    cart_evaluations: int
    n_nodes: int


def complexity_probe(n_grid: Sequence[int], missing_fraction: float, seed: int = 0,
                     nodesize: int = 5) -> list[ProbeRow]:
    """Total criterion evaluations of one tree per (n, search mode).

    Each tree uses every row (no subsampling) and every feature as a split
    candidate; all five columns are masked MCAR at ``missing_fraction``.
    """
    if not _ascending(list(n_grid)):
        raise ValueError("n_grid must be ascending")
    rows = []
    for n in n_grid:
        data = gen_friedman1(n, 1.0, derive_seed(seed, "probe", n))
        spec = MechanismSpec("MCAR", tuple((c, missing_fraction) for c in range(data.n_features)))
        data = apply_mechanism(data, spec, derive_seed(seed, "probe-mask", n))
        for mode in ("EXHAUSTIVE", "DICHOTOMY"):
            params = ForestParams(n_trees=1, mtry=data.n_features, subsample=n, nodesize=nodesize,
                                  search_mode=mode, seed=seed)
            forest = train_forest(data, params)
            rows.append(ProbeRow(n, mode, forest.cart_evaluations, forest.trees[0].n_nodes))
    return rows


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) on log(ns)."""
    return float(np.polyfit(np.log(ns), np.log(values), 1)[0])


def probe_slopes(rows: Sequence[ProbeRow]) -> dict[str, float]:
    out = {}
    for mode in ("EXHAUSTIVE", "DICHOTOMY"):
        sel = [r for r in rows if r.mode == mode]
        out[mode] = loglog_slope([r.n for r in sel], [r.cart_evaluations for r in sel])
    return out


@dataclass(frozen=True)
class ImportanceRecord:
    replicate: int
    feature: str
    pct_inc_mse: float
    inc_node_purity: float


def run_importance_study(config: ExperimentConfig, n_jobs: int | None = 1) -> list[ImportanceRecord]:
    """Both importance measures on each replicate's complete training set."""

    def one(r):
        data = make_training_set(config, r)
        params = replace(config.forest, split_rule="CLASSIC", seed=method_seed(config, r, "COMP", "importance"))
        imp = variable_importance(train_forest(data, params), data)
        return [ImportanceRecord(r, name, float(a), float(b))
                for name, a, b in zip(data.column_names, imp.pct_inc_mse, imp.inc_node_purity)]

    return _flatten(_map(one, [(r,) for r in range(config.replicates)], n_jobs))


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def summarize(results: Sequence[ExperimentResult]) -> list[dict]:
    """Mean and standard error per (study, method, mechanism, rate point)."""
    groups: dict[tuple, list[ExperimentResult]] = {}
    for r in results:
        groups.setdefault((r.study, r.method, r.mechanism, r.rate_point), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], _method_rank(k[1]), _mech_rank(k[2]), k[3])):
        recs = groups[key]
        ok = [r for r in recs if not r.failed]
        row = dict(zip(("study", "method", "mechanism", "rate_point"), key))
        row["n"] = len(ok)
        row["failures"] = len(recs) - len(ok)
        for metric in ("mse", "bias"):
            vals = np.array([getattr(r, metric) for r in ok])
            row[f"{metric}_mean"] = float(vals.mean()) if vals.size else math.nan
            row[f"{metric}_se"] = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
        out.append(row)
    return out


def _method_rank(m):
    return METHODS.index(m) if m in METHODS else len(METHODS)


def _mech_rank(m):
    return STUDY_MECHANISMS.index(m) if m in STUDY_MECHANISMS else len(STUDY_MECHANISMS)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def emit_results(results: Sequence[ExperimentResult], out_dir, timing: bool = False,
                 figures: bool = True) -> list[Path]:
    """Write results_long.csv, results_summary.csv and fig_*.svg to ``out_dir``.

    Wall times vary between runs, so they go to results_timing.csv only when
    ``timing`` is set; everything else is byte-identical for a fixed seed.
    """
    if not results:
        raise ValueError("no results to write")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "results_long.csv", out / "results_summary.csv"]
    _write_csv(written[0], LONG_COLUMNS, [asdict(r) for r in results])
    summary = summarize(results)
    _write_csv(written[1], SUMMARY_COLUMNS, summary)
    if timing:
        path = out / "results_timing.csv"
        _write_csv(path, ("study", "method", "mechanism", "rate_point", "replicate", "wall_time"),
                   [asdict(r) for r in results])
        written.append(path)
    if figures:
        from . import plots

        written += plots.study_figures(results, summary, out)
    return written


def emit_probe(rows: Sequence[ProbeRow], out_dir, figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "complexity.csv"
    _write_csv(path, ("n", "mode", "cart_evaluations", "n_nodes"), [asdict(r) for r in rows])
    written = [path]
    if figures:
        from . import plots

        written.append(plots.complexity_figure(rows, out))
    return written


def emit_importance(records: Sequence[ImportanceRecord], out_dir, figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "importance.csv"
    _write_csv(path, ("replicate", "feature", "pct_inc_mse", "inc_node_purity"), [asdict(r) for r in records])
    written = [path]
    if figures:
        from . import plots

        written.append(plots.importance_figure(records, out))
    return written
