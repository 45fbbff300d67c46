"""Synthetic friedman1 data, missing-data mechanisms and CSV I/O.

A :class:`Dataset` keeps the feature values and the missingness mask side by
side. Masked cells still hold a number (whatever was there before masking, or
0.0 after a CSV load) but nothing downstream is allowed to read it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

MECHANISMS = ("MCAR", "MAR1", "MAR2", "MAR3", "MAR4", "DEPY", "LOG", "COMP")
WEIGHTED_MECHANISMS = ("MCAR", "MAR1", "MAR2", "DEPY", "LOG")
MAR_MECHANISMS = ("MAR1", "MAR2", "MAR3", "MAR4")

RESPONSE_NAME = "y"
NA_TOKEN = "NA"

# 0-based column -> 0-based determining column (x1 <- x2, x3 <- x5, x4 <- x5)
DEFAULT_DETERMINING = {0: 1, 2: 4, 3: 4}
# 20% on x1, 10% on x3, 20% on x4
DEFAULT_RATES = {0: 0.2, 2: 0.1, 3: 0.2}

DEPY_THRESHOLD = 13.0
DEPY_LOW, DEPY_HIGH = 0.4, 0.1
LOG_INTERCEPT = -0.5


class DataFormatError(ValueError):
    """Raised when a CSV or config file cannot be parsed into a dataset."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, missingness mask (True = missing) and response vector."""

    features: np.ndarray
    mask: np.ndarray
    response: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        mask = np.asarray(self.mask, dtype=bool)
        y = np.asarray(self.response, dtype=np.float64)
        if mask.shape != X.shape:
            raise ValueError(f"mask shape {mask.shape} != features shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"response length {y.shape} != row count {X.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ValueError("response must be fully observed and finite")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("column_names length must equal the number of features")
        if RESPONSE_NAME in names:
            raise ValueError(f"'{RESPONSE_NAME}' is reserved for the response column")
        # placeholders under the mask are zeroed only if they are not finite
        X = np.where(mask & ~np.isfinite(X), 0.0, X)
        if not np.all(np.isfinite(X[~mask])):
            raise ValueError("observed feature cells must be finite")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "response", _readonly(y))
        object.__setattr__(self, "column_names", names)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def is_complete(self) -> bool:
        return not self.mask.any()

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.mask[rows], self.response[rows], self.column_names)

    def with_mask(self, mask) -> "Dataset":
        return Dataset(self.features, mask, self.response, self.column_names)

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.mask, self.response, self.column_names)

    def with_response(self, response) -> "Dataset":
        return Dataset(self.features, self.mask, response, self.column_names)

    def masked_array(self) -> np.ndarray:
        """Features with NaN in every masked cell (a copy)."""
        return np.where(self.mask, np.nan, self.features)

    def column_index(self, key: int | str) -> int:
        """Resolve a 0-based index or a column name."""
        if isinstance(key, str):
            try:
                return self.column_names.index(key)
            except ValueError:
                raise KeyError(f"unknown column {key!r}") from None
        if not 0 <= key < self.n_features:
            raise IndexError(f"column {key} out of range for {self.n_features} features")
        return int(key)


# ---------------------------------------------------------------------------
# friedman1


def eval_friedman1(x) -> float | np.ndarray:
    """Noiseless friedman1 regression function.

    Accepts a length-5 vector or an (n, 5) matrix; returns a float or a
    length-n array respectively.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 5 or x.ndim not in (1, 2):
        raise ValueError(f"friedman1 takes 5 coordinates, got shape {x.shape}")
    x1, x2, x3, x4, x5 = np.moveaxis(x, -1, 0)
    m = 10.0 * np.sin(np.pi * x1 * x2) + 20.0 * (x3 - 0.5) ** 2 + 10.0 * x4 + 5.0 * x5
    return float(m) if x.ndim == 1 else m


def gen_friedman1(n: int, noise_sd: float = 1.0, seed: int = 0) -> Dataset:
    """Draw ``n`` rows uniformly on [0, 1]^5 with y = m(x) + N(0, noise_sd^2)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    X = rng.random((n, 5))
    y = eval_friedman1(X) + noise_sd * rng.standard_normal(n)
    return Dataset(X, np.zeros_like(X, dtype=bool), y)


# ---------------------------------------------------------------------------
# mechanisms


@dataclass(frozen=True)
class MechanismSpec:
    """Which mechanism masks which columns at what rate.

    ``targets`` holds (0-based column, fraction) pairs, ``determining`` maps a
    target column to the fully observed column driving MAR masking.
    """

    mechanism: str
    targets: tuple[tuple[int, float], ...] = ()
    determining: Mapping[int, int] = field(default_factory=dict)

    def __post_init__(self):
        mech = self.mechanism.upper()
        if mech not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        targets = tuple((int(c), float(f)) for c, f in self.targets)
        if mech == "COMP" and targets:
            raise ValueError("COMP takes no target columns")
        cols = [c for c, _ in targets]
        if len(set(cols)) != len(cols):
            raise ValueError("a column may appear only once among the targets")
        for c, f in targets:
            if not 0.0 <= f < 1.0:
                raise ValueError(f"missing fraction for column {c} must lie in [0, 1), got {f}")
        det = {int(k): int(v) for k, v in dict(self.determining).items()}
        if mech in MAR_MECHANISMS:
            for c in cols:
                if c not in det:
                    raise ValueError(f"{mech} needs a determining column for target {c}")
        for c, d in det.items():
            if c == d:
                raise ValueError(f"column {c} cannot determine itself")
            if d in cols:
                raise ValueError(f"determining column {d} is itself a target")
        object.__setattr__(self, "mechanism", mech)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "determining", det)

    @classmethod
    def default(cls, mechanism: str, rates: Mapping[int, float] | None = None) -> "MechanismSpec":
        """Spec using the friedman1 study layout (x1 <- x2, x3 and x4 <- x5)."""
        mechanism = mechanism.upper()
        if mechanism == "COMP":
            return cls("COMP")
        rates = DEFAULT_RATES if rates is None else rates
        targets = tuple(sorted(rates.items()))
        det = {c: DEFAULT_DETERMINING[c] for c, _ in targets if c in DEFAULT_DETERMINING}
        return cls(mechanism, targets, det)

    @classmethod
    def from_mapping(cls, cfg: Mapping, column_names: Sequence[str] | None = None) -> "MechanismSpec":
        """Build from a parsed config; columns are 1-based integers or names."""

        def col(key) -> int:
            if isinstance(key, str) and not key.isdigit():
                if column_names is None or key not in column_names:
                    raise DataFormatError(f"unknown column name {key!r}")
                return list(column_names).index(key)
            k = int(key)
            if k < 1:
                raise DataFormatError(f"columns are 1-based, got {k}")
            return k - 1

        if "mechanism" not in cfg:
            raise DataFormatError("mechanism config needs a 'mechanism' key")
        unknown = set(cfg) - {"mechanism", "targets", "determining", "seed"}
        if unknown:
            raise DataFormatError(f"unknown mechanism config keys: {sorted(unknown)}")
        raw_targets = cfg.get("targets", {}) or {}
        if isinstance(raw_targets, Mapping):
            targets = [(col(k), float(v)) for k, v in raw_targets.items()]
        else:
            targets = [(col(t["column"]), float(t["rate"])) for t in raw_targets]
        det = {col(k): col(v) for k, v in (cfg.get("determining", {}) or {}).items()}
        return cls(str(cfg["mechanism"]), tuple(targets), det)


def load_mechanism_config(path, column_names: Sequence[str] | None = None) -> tuple[MechanismSpec, int]:
    """Read a YAML mechanism config; returns the spec and its seed (default 0)."""
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, Mapping):
        raise DataFormatError(f"{path}: expected a key-value mapping at top level")
    return MechanismSpec.from_mapping(cfg, column_names), int(cfg.get("seed", 0))


def missing_count(fraction: float, n: int) -> int:
    """ceil(fraction * n), robust to products like 0.1 * 30 = 3.0000000000000004."""
    return int(math.ceil(round(fraction * n, 9)))


def _ordinal_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def _observed_column(dataset: Dataset, col: int, role: str) -> np.ndarray:
    if dataset.mask[:, col].any():
        raise ValueError(f"{role} column {col} contains missing values")
    return dataset.features[:, col]


def mechanism_weights(
    mechanism: str,
    target_col: int,
    dataset: Dataset,
    determining_col: int | None = None,
) -> np.ndarray:
    """Per-row selection weights for the weighted mechanisms.

    MCAR and MAR1/MAR2 weights sum to one; DEPY and LOG are unnormalised
    probabilities (sampling renormalises).
    """
    mechanism = mechanism.upper()
    n = dataset.n_rows
    if mechanism == "MCAR":
        return np.full(n, 1.0 / n)
    if mechanism in ("MAR1", "MAR2"):
        if determining_col is None:
            raise ValueError(f"{mechanism} needs a determining column")
        if determining_col == target_col:
            raise ValueError("determining column must differ from the target")
        d = _observed_column(dataset, determining_col, "determining")
        if mechanism == "MAR1":
            return _ordinal_ranks(d) / (n * (n + 1) / 2.0)
        group1 = d >= np.median(d)
        w = np.where(group1, 0.9 / max(group1.sum(), 1), 0.1 / max((~group1).sum(), 1))
        return w
    if mechanism == "DEPY":
        return np.where(dataset.response >= DEPY_THRESHOLD, DEPY_HIGH, DEPY_LOW)
    if mechanism == "LOG":
        others = [k for k in range(dataset.n_features) if k != target_col]
        if dataset.mask[:, others].any():
            raise ValueError("LOG weights need every other column observed")
        eta = LOG_INTERCEPT + dataset.features[:, others].sum(axis=1)
        return 1.0 / (1.0 + np.exp(-eta))
    raise ValueError(f"{mechanism} has no selection weights")


def _truncation_rows(d: np.ndarray, k: int, symmetric: bool) -> np.ndarray:
    # descending by value, ties by row index
    desc = np.lexsort((np.arange(len(d)), -d))
    if not symmetric:
        return desc[:k]
    n_high = (k + 1) // 2
    high = desc[:n_high]
    asc = np.lexsort((np.arange(len(d)), d))
    low = asc[~np.isin(asc, high)][: k - n_high]
    return np.concatenate([high, low])


def apply_mechanism(dataset: Dataset, spec: MechanismSpec, seed: int = 0) -> Dataset:
    """Mask exactly ceil(fraction * n) cells in each target column.

    All selection weights are computed on the input before any masking, so a
    later target never sees an earlier target's mask.
    """
    if spec.mechanism == "COMP" or not spec.targets:
        return dataset
    n = dataset.n_rows
    for c, _ in spec.targets:
        if dataset.mask[:, c].any():
            raise ValueError(f"target column {c} already has missing values")
    plans = []
    for c, frac in spec.targets:
        k = missing_count(frac, n)
        det = spec.determining.get(c)
        if spec.mechanism in ("MAR3", "MAR4"):
            d = _observed_column(dataset, det, "determining")
            plans.append((c, k, _truncation_rows(d, k, spec.mechanism == "MAR4")))
        else:
            plans.append((c, k, mechanism_weights(spec.mechanism, c, dataset, det)))

    rng = np.random.default_rng(seed)
    mask = dataset.mask.copy()
    for c, k, plan in plans:
        if k == 0:
            continue
        if spec.mechanism in ("MAR3", "MAR4"):
            rows = plan
        else:
            rows = rng.choice(n, size=k, replace=False, p=plan / plan.sum())
        mask[rows, c] = True
    return dataset.with_mask(mask)


# ---------------------------------------------------------------------------
# CSV


def save_csv(dataset: Dataset, path) -> None:
    """Write features and response; masked cells become ``NA``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.column_names, RESPONSE_NAME])
        for i in range(dataset.n_rows):
            row = [NA_TOKEN if dataset.mask[i, j] else repr(float(dataset.features[i, j]))
                   for j in range(dataset.n_features)]
            row.append(repr(float(dataset.response[i])))
            w.writerow(row)


def load_csv(path) -> Dataset:
    """Read a CSV written by :func:`save_csv` (header row, ``NA`` for missing)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if RESPONSE_NAME not in header:
        raise DataFormatError(f"{path}: header has no '{RESPONSE_NAME}' column")
    y_col = header.index(RESPONSE_NAME)
    feat_cols = [j for j in range(len(header)) if j != y_col]
    X, M, y = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        cells = [c.strip() for c in row]
        if cells[y_col] == NA_TOKEN:
            raise DataFormatError(f"{path}:{lineno}: response is NA in row {lineno - 1}")
        xs, ms = [], []
        for j in feat_cols:
            if cells[j] == NA_TOKEN:
                xs.append(0.0)
                ms.append(True)
            else:
                xs.append(_parse_float(cells[j], path, lineno, header[j]))
                ms.append(False)
        X.append(xs)
        M.append(ms)
        y.append(_parse_float(cells[y_col], path, lineno, RESPONSE_NAME))
    p = len(feat_cols)
    return Dataset(
        np.asarray(X, dtype=np.float64).reshape(-1, p),
        np.asarray(M, dtype=bool).reshape(-1, p),
        np.asarray(y, dtype=np.float64),
        tuple(header[j] for j in feat_cols),
    )


def _parse_float(text: str, path, lineno: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: non-numeric value {text!r} in column '{column}'") from None
    if not math.isfinite(v):
        raise DataFormatError(f"{path}:{lineno}: non-finite value {text!r} in column '{column}'")
    return v

