"""Random forests whose trees assign missing entries while they grow.

Trees are stored sklearn-style as parallel node arrays. Every internal node
keeps the number of training rows missing on its cut feature that went to
each child, which is what prediction with incomplete queries needs.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Union

import numba as nb
import numpy as np

from ._seeding import derive_seed, hash_uniform, rand_below, tree_seed
from .data import Dataset
from .split import (
    MEMO_SIZE,
    Assignation,
    Cut,
    SearchMode,
    Side,
    SplitRule,
    best_split_kernel,
    mode_code,
    node_floor,
    rule_code,
)

FORMAT_NAME = "rfassign-forest"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    """Forest hyper-parameters; ``None`` fields resolve to the study defaults.

    mtry -> floor(p / 3) (at least 1), subsample -> ceil(0.632 n) without
    replacement or n with replacement.
    """

    n_trees: int = 100
    mtry: int | None = None
    subsample: int | None = None
    nodesize: int = 5
    replacement: bool = False
    search_mode: str = "EXHAUSTIVE"
    split_rule: str = "ASSIGNATION"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "search_mode", SearchMode(str(self.search_mode).upper()).value)
        object.__setattr__(self, "split_rule", SplitRule(str(self.split_rule).upper()).value)

    def resolve(self, n: int, p: int) -> "ForestParams":
        mtry = max(1, p // 3) if self.mtry is None else self.mtry
        if self.subsample is None:
            subsample = n if self.replacement else math.ceil(round(0.632 * n, 9))
        else:
            subsample = self.subsample
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must lie in 1..{p}, got {mtry}")
        if subsample > n:
            raise ValueError(f"subsample {subsample} exceeds the {n} available rows")
        if subsample < 1:
            raise ValueError("subsample must be at least 1")
        if not 1 <= self.nodesize <= subsample:
            raise ValueError(f"nodesize must lie in 1..{subsample}, got {self.nodesize}")
        return replace(self, mtry=mtry, subsample=subsample)


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, nogil=True)
def _grow_tree(X, M, y, n_bag, with_replacement, mtry, nodesize, rule, mode, seed):
    n, p = X.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    bag = np.empty(n_bag, dtype=np.int64)
    if with_replacement:
        for i in range(n_bag):
            bag[i] = rand_below(state, n)
    else:
        perm = np.arange(n)
        for i in range(n_bag):
            j = i + rand_below(state, n - i)
            t = perm[i]
            perm[i] = perm[j]
            perm[j] = t
            bag[i] = perm[i]
    bag = np.sort(bag)

    cap = 2 * n_bag + 1
    feature = np.full(cap, -1, dtype=np.int64)
    position = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    miss_left = np.zeros(cap, dtype=np.int64)
    miss_right = np.zeros(cap, dtype=np.int64)
    n_samples = np.zeros(cap, dtype=np.int64)
    value = np.zeros(cap)
    gain = np.zeros(cap)
    threshold = np.zeros(cap, dtype=np.int64)
    low_left = np.ones(cap, dtype=np.bool_)
    leaf_of = np.empty(n_bag, dtype=np.int64)

    rows = bag.copy()
    idx = np.arange(n_bag)
    tmp_rows = np.empty(n_bag, dtype=np.int64)
    tmp_idx = np.empty(n_bag, dtype=np.int64)
    goes_left = np.empty(n_bag, dtype=np.bool_)
    mpos = np.empty(n_bag, dtype=np.int64)
    xo = np.empty(n_bag)
    yo = np.empty(n_bag)
    ym = np.empty(n_bag)
    memo_k = np.empty(MEMO_SIZE, dtype=np.int64)
    memo_v = np.empty(MEMO_SIZE)
    hobs = np.empty(p, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    sp = 1
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_bag
    n_nodes = 1
    total_evals = 0

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        N = e - s
        acc = 0.0
        for i in range(s, e):
            acc += y[rows[i]]
        value[node] = acc / N
        n_samples[node] = N

        found = False
        if N > nodesize:
            m = 0
            for h in range(p):
                cnt = 0
                for i in range(s, e):
                    if not M[rows[i], h]:
                        cnt += 1
                if cnt > 1:
                    hobs[m] = h
                    m += 1
            if m > 0:
                if m <= mtry:
                    feats = hobs[:m].copy()
                else:
                    pool = hobs[:m].copy()
                    for i in range(mtry):
                        j = i + rand_below(state, m - i)
                        t = pool[i]
                        pool[i] = pool[j]
                        pool[j] = t
                    feats = np.sort(pool[:mtry])
                floor = node_floor(y, rows, s, e)
                bf, bpos, bw, bll, g, ev, ok = best_split_kernel(
                    X, M, y, rows, s, e, feats, rule, mode, floor, xo, yo, ym, memo_k, memo_v
                )
                total_evals += ev
                found = ok and g > 0.0

        if not found:
            for i in range(s, e):
                leaf_of[idx[i]] = node
            continue

        nm = 0
        for i in range(s, e):
            r = rows[i]
            if M[r, bf]:
                mpos[nm] = i
                nm += 1
            else:
                goes_left[i - s] = X[r, bf] < bpos
        keys = np.empty(nm)
        for k in range(nm):
            keys[k] = y[rows[mpos[k]]]
        morder = np.argsort(keys, kind="mergesort")
        ml = 0
        for rank in range(nm):
            i = mpos[morder[rank]]
            to_left = (rank < bw) == bll
            goes_left[i - s] = to_left
            if to_left:
                ml += 1

        k = 0
        for i in range(s, e):
            if goes_left[i - s]:
                tmp_rows[k] = rows[i]
                tmp_idx[k] = idx[i]
                k += 1
        mid = s + k
        for i in range(s, e):
            if not goes_left[i - s]:
                tmp_rows[k] = rows[i]
                tmp_idx[k] = idx[i]
                k += 1
        for i in range(N):
            rows[s + i] = tmp_rows[i]
            idx[s + i] = tmp_idx[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = bf
        position[node] = bpos
        left[node] = lc
        right[node] = rc
        miss_left[node] = ml
        miss_right[node] = nm - ml
        gain[node] = g
        threshold[node] = bw
        low_left[node] = bll
        # right pushed first so the left subtree is grown first
        st_node[sp] = rc
        st_start[sp] = mid
        st_end[sp] = e
        sp += 1
        st_node[sp] = lc
        st_start[sp] = s
        st_end[sp] = mid
        sp += 1

    k = n_nodes
    return (
        feature[:k].copy(), position[:k].copy(), left[:k].copy(), right[:k].copy(),
        miss_left[:k].copy(), miss_right[:k].copy(), n_samples[:k].copy(), value[:k].copy(),
        gain[:k].copy(), threshold[:k].copy(), low_left[:k].copy(), bag, leaf_of, total_evals,
    )


@nb.njit(cache=True, nogil=True)
def _descend(feature, position, left, right, miss_left, miss_right, X, M, seed, tree_index, offset):
    """Node reached by each query; a masked cut with no training missing rows stops the descent."""
    nq = X.shape[0]
    out = np.empty(nq, dtype=np.int64)
    for q in range(nq):
        node = 0
        depth = 0
        while feature[node] >= 0:
            h = feature[node]
            if not M[q, h]:
                if X[q, h] < position[node]:
                    node = left[node]
                else:
                    node = right[node]
            else:
                n_miss = miss_left[node] + miss_right[node]
                if n_miss == 0:
                    break
                u = hash_uniform(seed, tree_index, q + offset, depth)
                if u * n_miss < miss_left[node]:
                    node = left[node]
                else:
                    node = right[node]
            depth += 1
        out[q] = node
    return out


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class Leaf:
    mean_response: float
    row_indices: tuple[int, ...]


@dataclass(frozen=True)
class Internal:
    cut: Cut
    assignation: Assignation
    left: "TreeNode"
    right: "TreeNode"
    missing_left_count: int
    missing_right_count: int


TreeNode = Union[Leaf, Internal]

_NODE_FIELDS = (
    "feature", "position", "left", "right", "miss_left", "miss_right",
    "n_samples", "value", "gain", "threshold", "low_left",
)


@dataclass(frozen=True, eq=False)
class Tree:
    """One fitted tree as node arrays (``feature == -1`` marks a leaf)."""

    feature: np.ndarray
    position: np.ndarray
    left: np.ndarray
    right: np.ndarray
    miss_left: np.ndarray
    miss_right: np.ndarray
    n_samples: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    threshold: np.ndarray
    low_left: np.ndarray
    bag: np.ndarray
    leaf_of_bag: np.ndarray
    cart_evaluations: int = 0

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def leaf_rows(self, node: int) -> np.ndarray:
        """Training rows (with bag multiplicity) that ended in ``node``."""
        return self.bag[self.leaf_of_bag == node]

    def to_node(self, node: int = 0) -> TreeNode:
        if self.is_leaf(node):
            return Leaf(float(self.value[node]), tuple(int(r) for r in self.leaf_rows(node)))
        return Internal(
            Cut(int(self.feature[node]), float(self.position[node])),
            Assignation(int(self.threshold[node]), Side.LEFT if self.low_left[node] else Side.RIGHT),
            self.to_node(int(self.left[node])),
            self.to_node(int(self.right[node])),
            int(self.miss_left[node]),
            int(self.miss_right[node]),
        )

    def descend(self, X, M, seed: int = 0, tree_index: int = 0, offset: int = 0) -> np.ndarray:
        return _descend(
            self.feature, self.position, self.left, self.right, self.miss_left, self.miss_right,
            X, M, np.uint64(seed), tree_index, offset,
        )

    def same_structure(self, other: "Tree") -> bool:
        """Node-for-node equality (cuts, counts, values, bag and leaf membership)."""
        arrays = _NODE_FIELDS + ("bag", "leaf_of_bag")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[Tree, ...]
    params: ForestParams
    n_features: int
    column_names: tuple[str, ...] = ()
    n_train: int = 0

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def cart_evaluations(self) -> int:
        return sum(t.cart_evaluations for t in self.trees)

    @property
    def bags(self) -> list[np.ndarray]:
        return [t.bag for t in self.trees]

    def same_structure(self, other: "Forest") -> bool:
        return self.n_trees == other.n_trees and all(
            a.same_structure(b) for a, b in zip(self.trees, other.trees)
        )


# ---------------------------------------------------------------------------
# training


def _check_trainable(dataset: Dataset, params: ForestParams) -> None:
    if dataset.n_rows == 0:
        raise ValueError("cannot train on an empty dataset")
    if params.split_rule == SplitRule.CLASSIC.value and dataset.mask.any():
        raise ValueError("the CLASSIC split rule needs complete data; use ASSIGNATION or MIA")


def build_tree(dataset: Dataset, params: ForestParams, tree_seed_value: int) -> Tree:
    """Grow one tree on a subsample drawn with ``tree_seed_value``."""
    params = params.resolve(dataset.n_rows, dataset.n_features)
    _check_trainable(dataset, params)
    return _build(dataset.features, dataset.mask, dataset.response, params, tree_seed_value)


def _build(X, M, y, params: ForestParams, seed: int) -> Tree:
    out = _grow_tree(
        X, M, y, params.subsample, params.replacement, params.mtry, params.nodesize,
        rule_code(params.split_rule), mode_code(params.search_mode), np.uint64(seed),
    )
    arrays = dict(zip(_NODE_FIELDS + ("bag", "leaf_of_bag"), out[:-1]))
    return Tree(**arrays, cart_evaluations=int(out[-1]))


def default_jobs() -> int:
    return os.cpu_count() or 1


def train_forest(dataset: Dataset, params: ForestParams, n_jobs: int | None = 1) -> Forest:
    """Fit ``params.n_trees`` trees, tree k seeded by ``seed XOR hash(k)``.

    Trees are independent, so ``n_jobs > 1`` builds them on a thread pool
    (the kernels release the GIL); the result does not depend on ``n_jobs``.
    """
    params = params.resolve(dataset.n_rows, dataset.n_features)
    _check_trainable(dataset, params)
    X = np.ascontiguousarray(dataset.features)
    M = np.ascontiguousarray(dataset.mask)
    y = np.ascontiguousarray(dataset.response)
    seeds = [tree_seed(params.seed, k) for k in range(params.n_trees)]
    n_jobs = default_jobs() if n_jobs is None else max(1, n_jobs)
    if n_jobs == 1 or params.n_trees == 1:
        trees = [_build(X, M, y, params, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(lambda s: _build(X, M, y, params, s), seeds))
    return Forest(tuple(trees), params, dataset.n_features, dataset.column_names, dataset.n_rows)


# ---------------------------------------------------------------------------
# prediction


def _as_queries(forest: Forest, x, mask=None):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    if mask is None:
        M = np.zeros(X.shape, dtype=bool)
    else:
        M = np.atleast_2d(np.asarray(mask, dtype=bool))
        if M.shape != X.shape:
            raise ValueError("mask shape must match the query shape")
    X = np.where(M, 0.0, X)
    if not np.all(np.isfinite(X)):
        raise ValueError("observed query values must be finite; mask missing entries instead")
    return np.ascontiguousarray(X), np.ascontiguousarray(M), single


def _aggregate(forest: Forest, X, M, seed: int):
    out = np.zeros(X.shape[0])
    for k, tree in enumerate(forest.trees):
        out += tree.value[tree.descend(X, M, seed, k)]
    return out / forest.n_trees


def predict_complete(forest: Forest, x):
    """Average leaf mean over trees; ``x`` is one query or an (n, p) matrix."""
    X, M, single = _as_queries(forest, x)
    out = _aggregate(forest, X, M, 0)
    return float(out[0]) if single else out


def predict_with_missing(forest: Forest, x, mask=None, seed: int = 0):
    """Predict queries whose masked coordinates are routed stochastically.

    On a cut over a masked feature the query goes left with probability
    N_L / N, the share of training rows missing on that feature that were
    assigned left. With N = 0 the descent stops and the cell mean is used.
    ``x`` may also carry NaN for missing entries when ``mask`` is omitted.
    """
    xa = np.asarray(x, dtype=np.float64)
    if mask is None:
        mask = np.isnan(xa)
    X, M, single = _as_queries(forest, np.nan_to_num(xa), mask)
    out = _aggregate(forest, X, M, seed)
    return float(out[0]) if single else out


def predict_dataset(forest: Forest, dataset: Dataset, seed: int = 0) -> np.ndarray:
    if dataset.is_complete():
        return predict_complete(forest, dataset.features)
    return predict_with_missing(forest, dataset.features, dataset.mask, seed)


def leaf_membership(forest: Forest, dataset: Dataset, in_bag: bool = True, seed: int = 0) -> np.ndarray:
    """(n_trees, n) node ids reached by every row of ``dataset``.

    With ``in_bag`` the dataset is taken to be the training set and each
    in-bag row keeps the leaf it was assigned to while the tree grew.
    """
    if in_bag and dataset.n_rows != forest.n_train:
        raise ValueError("in_bag membership needs the training dataset")
    X = np.ascontiguousarray(dataset.features)
    M = np.ascontiguousarray(dataset.mask)
    out = np.empty((forest.n_trees, dataset.n_rows), dtype=np.int64)
    for k, tree in enumerate(forest.trees):
        out[k] = tree.descend(X, M, seed, k)
        if in_bag:
            # reversed so the first bag occurrence of a duplicated row wins
            out[k, tree.bag[::-1]] = tree.leaf_of_bag[::-1]
    return out


def proximity_matrix(forest: Forest, dataset: Dataset, in_bag: bool = True, seed: int = 0) -> np.ndarray:
    """Fraction of trees in which rows i and j end in the same cell."""
    leaves = leaf_membership(forest, dataset, in_bag, seed)
    n = dataset.n_rows
    K = np.zeros((n, n))
    for ids in leaves:
        K += ids[:, None] == ids[None, :]
    return K / forest.n_trees


@dataclass(frozen=True)
class Importance:
    pct_inc_mse: np.ndarray
    inc_node_purity: np.ndarray


def variable_importance(forest: Forest, dataset: Dataset, seed: int | None = None) -> Importance:
    """Permutation importance on out-of-bag rows and total weighted CART gain.

    ``pct_inc_mse`` is the mean over trees of the OOB MSE increase after
    permuting a feature, divided by its standard error across trees (the
    scaled convention of R's randomForest). ``inc_node_purity`` sums
    N(A) * gain over the cuts on each feature and divides by the tree count.
    """
    if not dataset.is_complete():
        raise ValueError("variable importance is computed on complete data")
    p = forest.n_features
    seed = forest.params.seed if seed is None else seed
    rng = np.random.default_rng(derive_seed(seed, "importance"))
    X = np.ascontiguousarray(dataset.features)
    M = np.zeros(X.shape, dtype=bool)
    y = dataset.response
    diffs = [[] for _ in range(p)]
    purity = np.zeros(p)
    for k, tree in enumerate(forest.trees):
        internal = tree.feature >= 0
        np.add.at(purity, tree.feature[internal], tree.gain[internal] * tree.n_samples[internal])
        oob = np.setdiff1d(np.arange(dataset.n_rows), tree.bag)
        if oob.size == 0:
            continue
        Xo = X[oob]
        Mo = M[oob]
        base = np.mean((y[oob] - tree.value[tree.descend(Xo, Mo, 0, k)]) ** 2)
        for h in range(p):
            Xp = Xo.copy()
            Xp[:, h] = Xp[rng.permutation(oob.size), h]
            perm = np.mean((y[oob] - tree.value[tree.descend(Xp, Mo, 0, k)]) ** 2)
            diffs[h].append(perm - base)
    pct = np.zeros(p)
    for h in range(p):
        d = np.asarray(diffs[h])
        if d.size == 0:
            continue
        se = d.std(ddof=1) / math.sqrt(d.size) if d.size > 1 else 0.0
        pct[h] = d.mean() / se if se > 0 else d.mean()
    return Importance(pct, purity / forest.n_trees)


# ---------------------------------------------------------------------------
# persistence


def forest_to_dict(forest: Forest) -> dict:
    trees = []
    for t in forest.trees:
        nodes = {}
        for name in _NODE_FIELDS:
            arr = getattr(t, name)
            if arr.dtype == np.float64:
                nodes[name] = [float(v) for v in arr]
            elif arr.dtype == np.bool_:
                nodes[name] = [bool(v) for v in arr]
            else:
                nodes[name] = [int(v) for v in arr]
        trees.append({
            "bag": [int(v) for v in t.bag],
            "leaf_of_bag": [int(v) for v in t.leaf_of_bag],
            "cart_evaluations": t.cart_evaluations,
            "nodes": nodes,
        })
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "params": asdict(forest.params),
        "n_features": forest.n_features,
        "n_train": forest.n_train,
        "column_names": list(forest.column_names),
        "trees": trees,
    }


_DTYPES = {"feature": np.int64, "left": np.int64, "right": np.int64, "miss_left": np.int64,
           "miss_right": np.int64, "n_samples": np.int64, "threshold": np.int64,
           "position": np.float64, "value": np.float64, "gain": np.float64, "low_left": np.bool_}


def forest_from_dict(d: dict) -> Forest:
    if d.get("format") != FORMAT_NAME:
        raise ValueError("not a serialized rfassign forest")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported forest format version {d.get('version')}")
    trees = []
    for t in d["trees"]:
        arrays = {k: np.asarray(t["nodes"][k], dtype=_DTYPES[k]) for k in _NODE_FIELDS}
        trees.append(Tree(
            **arrays,
            bag=np.asarray(t["bag"], dtype=np.int64),
            leaf_of_bag=np.asarray(t["leaf_of_bag"], dtype=np.int64),
            cart_evaluations=int(t["cart_evaluations"]),
        ))
    return Forest(tuple(trees), ForestParams(**d["params"]), int(d["n_features"]),
                  tuple(d["column_names"]), int(d["n_train"]))


def save_forest(forest: Forest, path) -> None:
    with open(path, "w") as fh:
        json.dump(forest_to_dict(forest), fh, separators=(",", ":"))
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path) as fh:
        return forest_from_dict(json.load(fh))
