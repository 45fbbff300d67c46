"""Completing a dataset before training: median, listwise deletion and the
forest-driven iterative imputers (proximity-weighted, k-nearest-proximity and
missForest-style regression).

Every iterative method starts from the median imputation. The observed cells
are never written; only the masked ones change between iterations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from ._seeding import derive_seed
from .data import Dataset
from .forest import ForestParams, predict_complete, proximity_matrix, train_forest

DEFAULT_ITERATIONS = 10
DEFAULT_K_NEIGHBORS = 10
METHODS = ("median", "breiman", "ishioka", "missforest")


@dataclass(frozen=True, eq=False)
class ImputedDataset:
    """Completed values for ``dataset`` plus the per-iteration trace.

    Attributes
    ----------
    dataset : Dataset
        The incomplete input; its mask records which cells were imputed.
    values : ndarray
        n x p matrix equal to ``dataset.features`` on every observed cell.
    iteration : int
        1 for the median start, plus one per refinement round.
    history : tuple of ndarray
        Imputed cell values (row-major order over the mask) after the start
        and after each refinement.
    forests_trained : int
        Number of forests fitted along the way.
    forest_targets : tuple of int
        Target column of each forest, for the regression imputer.
    """

    dataset: Dataset
    values: np.ndarray
    iteration: int = 1
    history: tuple[np.ndarray, ...] = ()
    forests_trained: int = 0
    forest_targets: tuple[int, ...] = ()

    def completed(self) -> Dataset:
        """The imputed data as a complete Dataset (empty mask)."""
        return Dataset(self.values, np.zeros(self.values.shape, dtype=bool),
                       self.dataset.response, self.dataset.column_names)

    def imputed_cells(self) -> np.ndarray:
        """(k, 2) array of (row, column) for the masked cells, row-major."""
        return np.argwhere(self.dataset.mask)


def _cells(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return values[mask].copy()


def _require_observed(dataset: Dataset, minimum: int = 1) -> None:
    observed = (~dataset.mask).sum(axis=0)
    for h in np.flatnonzero(dataset.mask.any(axis=0)):
        if observed[h] < minimum:
            name = dataset.column_names[h]
            raise ValueError(f"column {name!r} has {observed[h]} observed values, needs at least {minimum}")


def impute_median(dataset: Dataset) -> ImputedDataset:
    """Fill each masked cell with the median of its column's observed values."""
    _require_observed(dataset)
    values = np.array(dataset.features, copy=True)
    for h in np.flatnonzero(dataset.mask.any(axis=0)):
        miss = dataset.mask[:, h]
        values[miss, h] = np.median(dataset.features[~miss, h])
    return ImputedDataset(dataset, values, 1, (_cells(values, dataset.mask),))


def listwise_delete(dataset: Dataset) -> Dataset:
    """Keep the rows without any masked cell, in their original order.

    The result may have zero rows; training on it then raises ValueError.
    """
    return dataset.subset(np.flatnonzero(~dataset.mask.any(axis=1)))


# ---------------------------------------------------------------------------
# proximity updates


def breiman_update(K: np.ndarray, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """One proximity-weighted update of every masked cell.

    A masked cell (j, h) becomes the mean of the observed values of column h
    weighted by K[j, i]. With zero total weight it keeps its current value.
    """
    out = np.array(values, copy=True)
    for h in np.flatnonzero(mask.any(axis=0)):
        miss = np.flatnonzero(mask[:, h])
        obs = np.flatnonzero(~mask[:, h])
        W = K[np.ix_(miss, obs)]
        total = W.sum(axis=1)
        num = W @ values[obs, h]
        ok = total > 0
        out[miss[ok], h] = num[ok] / total[ok]
    return out


def nearest_by_proximity(k_row: np.ndarray, j: int, k: int) -> np.ndarray:
    """Indices of the ``k`` rows i != j closest to j (ties to the smaller index)."""
    idx = np.delete(np.arange(k_row.shape[0]), j)
    order = np.lexsort((idx, -k_row[idx]))
    return idx[order[:k]]


def ishioka_update(K: np.ndarray, values: np.ndarray, mask: np.ndarray, k_neighbors: int) -> np.ndarray:
    """Like :func:`breiman_update` but over the k nearest rows, imputed ones included."""
    out = np.array(values, copy=True)
    for j, h in np.argwhere(mask):
        nb = nearest_by_proximity(K[j], j, k_neighbors)
        w = K[j, nb]
        total = w.sum()
        if total > 0:
            out[j, h] = w @ values[nb, h] / total
    return out


def _proximity_impute(dataset, params, iterations, update, tag, n_jobs) -> ImputedDataset:
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    start = impute_median(dataset)
    if dataset.is_complete():
        return start
    mask = dataset.mask
    values = start.values
    history = list(start.history)
    base = replace(params, split_rule="CLASSIC")
    for ell in range(iterations):
        completed = Dataset(values, np.zeros(mask.shape, dtype=bool), dataset.response, dataset.column_names)
        forest = train_forest(completed, replace(base, seed=derive_seed(params.seed, tag, ell)), n_jobs)
        K = proximity_matrix(forest, completed)
        values = update(K, values, mask)
        history.append(_cells(values, mask))
    return ImputedDataset(dataset, values, 1 + iterations, tuple(history), iterations)


def breiman_impute(dataset: Dataset, params: ForestParams = ForestParams(),
                   iterations: int = DEFAULT_ITERATIONS, n_jobs: int | None = 1) -> ImputedDataset:
    """Iterative imputation from the training proximities of a forest on y.

    Each round fits a forest on the current completed data and replaces every
    masked cell by the proximity-weighted mean of its column's observed values.
    """
    return _proximity_impute(dataset, params, iterations, breiman_update, "breiman", n_jobs)


def ishioka_impute(dataset: Dataset, params: ForestParams = ForestParams(),
                   iterations: int = DEFAULT_ITERATIONS, k_neighbors: int = DEFAULT_K_NEIGHBORS,
                   n_jobs: int | None = 1) -> ImputedDataset:
    """Proximity imputation restricted to the ``k_neighbors`` nearest rows.

    Neighbours are drawn from all rows, so current imputations feed back into
    the weighted mean.
    """
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be at least 1")

    def update(K, values, mask):
        return ishioka_update(K, values, mask, k_neighbors)

    return _proximity_impute(dataset, params, iterations, update, "ishioka", n_jobs)


def missforest_impute(dataset: Dataset, params: ForestParams = ForestParams(),
                      iterations: int = DEFAULT_ITERATIONS, include_response: bool = True,
                      n_jobs: int | None = 1) -> ImputedDataset:
    """Regression imputation, one forest per incomplete column per sweep.

    Columns are visited by ascending missing count (ties by index). The
    forest for column h learns it from the other columns, y included, on the
    rows where h is observed and overwrites its masked cells in place, so
    later columns in the same sweep see the fresh values. With independent
    features the response carries most of the signal; ``include_response=False``
    restricts the predictors to the other feature columns.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    _require_observed(dataset, max(1, params.nodesize))
    start = impute_median(dataset)
    if dataset.is_complete():
        return start
    mask = dataset.mask
    counts = mask.sum(axis=0)
    columns = sorted(np.flatnonzero(counts > 0), key=lambda h: (counts[h], h))
    values = np.array(start.values, copy=True)
    history = list(start.history)
    targets = []
    base = replace(params, split_rule="CLASSIC")
    for it in range(iterations):
        for h in columns:
            others = [k for k in range(dataset.n_features) if k != h]
            pred = values[:, others]
            names = tuple(dataset.column_names[k] for k in others)
            if include_response:
                pred = np.column_stack([pred, dataset.response])
                names = names + ("response",)
            obs = ~mask[:, h]
            train = Dataset(pred[obs], np.zeros((obs.sum(), pred.shape[1]), dtype=bool), values[obs, h], names)
            forest = train_forest(train, replace(base, seed=derive_seed(params.seed, "missforest", it, int(h))), n_jobs)
            values[mask[:, h], h] = predict_complete(forest, pred[mask[:, h]])
            targets.append(int(h))
        history.append(_cells(values, mask))
    return ImputedDataset(dataset, values, 1 + iterations, tuple(history), len(targets), tuple(targets))


def impute(method: str, dataset: Dataset, params: ForestParams = ForestParams(),
           iterations: int = DEFAULT_ITERATIONS, k_neighbors: int = DEFAULT_K_NEIGHBORS,
           n_jobs: int | None = 1, include_response: bool = True) -> ImputedDataset:
    """Dispatch by method name (see ``METHODS``); ``include_response`` is for missforest."""
    method = method.lower()
    if method == "median":
        return impute_median(dataset)
    if method == "breiman":
        return breiman_impute(dataset, params, iterations, n_jobs)
    if method == "ishioka":
        return ishioka_impute(dataset, params, iterations, k_neighbors, n_jobs)
    if method == "missforest":
        return missforest_impute(dataset, params, iterations, include_response, n_jobs)
    raise ValueError(f"unknown imputation method {method!r}; expected one of {METHODS}")


def save_trace(imputed: ImputedDataset, path) -> None:
    """Write one line per (iteration, imputed cell); rows and columns 1-based."""
    cells = imputed.imputed_cells()
    names = imputed.dataset.column_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "row", "column", "value"])
        for ell, vals in enumerate(imputed.history, start=1):
            for (i, h), v in zip(cells, vals):
                w.writerow([ell, int(i) + 1, names[h], repr(float(v))])
