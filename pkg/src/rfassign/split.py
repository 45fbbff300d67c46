"""CART split search with missing-value assignation.

For a cut ``(h, z)`` the rows observed on ``h`` go left when ``x[h] < z``.
Rows missing on ``h`` are sorted by response; an assignation sends the
``threshold_w`` lowest of them to ``low_side`` and the rest to the other
child. Searching both orientations of that threshold is exactly as good as
trying all ``2**N_miss`` labelings: at any optimum the child with the lower
final mean holds the lower-response missing rows (swapping an inverted pair
always raises the criterion).

The numba kernels below are shared by the tree builder in
:mod:`rfassign.forest` and by the Python-level API in this module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numba as nb
import numpy as np

# Gains at or below GAIN_FLOOR * mean(y^2) of the node are rounding noise
# (a constant-response node would otherwise split on ~1e-30 gains).
GAIN_FLOOR = 1e-20
MEMO_SIZE = 256

RULE_CLASSIC, RULE_ASSIGNATION, RULE_MIA = 0, 1, 2
MODE_EXHAUSTIVE, MODE_DICHOTOMY = 0, 1


class Side(enum.Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"


class SearchMode(str, enum.Enum):
    EXHAUSTIVE = "EXHAUSTIVE"
    DICHOTOMY = "DICHOTOMY"


class SplitRule(str, enum.Enum):
    ASSIGNATION = "ASSIGNATION"
    MIA = "MIA"
    CLASSIC = "CLASSIC"


_RULE_CODES = {SplitRule.CLASSIC: RULE_CLASSIC, SplitRule.ASSIGNATION: RULE_ASSIGNATION, SplitRule.MIA: RULE_MIA}
_MODE_CODES = {SearchMode.EXHAUSTIVE: MODE_EXHAUSTIVE, SearchMode.DICHOTOMY: MODE_DICHOTOMY}


def rule_code(rule) -> int:
    return _RULE_CODES[SplitRule(str(rule).upper())]


def mode_code(mode) -> int:
    return _MODE_CODES[SearchMode(str(mode).upper())]


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True, nogil=True)
def _gain(sl, nl, sr, nr):
    # N_L N_R / N^2 (mean_L - mean_R)^2, zero when a child is empty
    if nl == 0 or nr == 0:
        return 0.0
    n = nl + nr
    d = sl / nl - sr / nr
    return (nl * nr) / (n * n) * d * d


@nb.njit(cache=True, nogil=True)
def _threshold_gain(w, low_left, sl, nl, sr, nr, P, N):
    low = P[w]
    high = P[N] - P[w]
    if low_left:
        return _gain(sl + low, nl + w, sr + high, nr + N - w)
    return _gain(sl + high, nl + N - w, sr + low, nr + w)


@nb.njit(cache=True, nogil=True)
def _clamp(g, floor):
    return 0.0 if g <= floor else g


@nb.njit(cache=True, nogil=True)
def _observed_low_left(sl, nl, sr, nr):
    if nl == 0:
        return True
    if nr == 0:
        return True
    return sl / nl <= sr / nr


@nb.njit(cache=True, nogil=True)
def scan_exhaustive(sl, nl, sr, nr, P, N, floor):
    """Best threshold over both orientations; returns (w, low_left, gain, evals).

    The orientation suggested by the observed child means is scanned first
    (w = 0..N), then the reverse one on its interior thresholds (its two
    endpoints repeat labelings already seen): 2*N evaluations, 1 if N == 0.
    """
    if N == 0:
        # vacuous assignation, reported as LEFT like the classic rule
        return 0, True, _clamp(_gain(sl, nl, sr, nr), floor), 1
    ll = _observed_low_left(sl, nl, sr, nr)
    best = -1.0
    bw = 0
    bll = ll
    evals = 0
    for w in range(N + 1):
        g = _clamp(_threshold_gain(w, ll, sl, nl, sr, nr, P, N), floor)
        evals += 1
        if g > best:
            best = g
            bw = w
            bll = ll
    for w in range(1, N):
        g = _clamp(_threshold_gain(w, not ll, sl, nl, sr, nr, P, N), floor)
        evals += 1
        if g > best:
            best = g
            bw = w
            bll = not ll
    return bw, bll, best, evals


@nb.njit(cache=True, nogil=True)
def _memo_gain(k, ll, sl, nl, sr, nr, P, N, memo_k, memo_v, count):
    for i in range(count[0]):
        if memo_k[i] == k:
            return memo_v[i]
    g = _threshold_gain(k, ll, sl, nl, sr, nr, P, N)
    memo_k[count[0]] = k
    memo_v[count[0]] = g
    count[0] += 1
    return g


@nb.njit(cache=True, nogil=True)
def scan_dichotomy(sl, nl, sr, nr, P, N, floor, memo_k, memo_v, count):
    """Binary search on the threshold driven by CART(k+1) - CART(k).

    Works in the orientation given by the observed child means, starts at
    k = N // 2, stops on a two-point interval and compares it with both
    endpoints k = 0 and k = N. Each distinct k is evaluated once.
    """
    if N == 0:
        return 0, True, _clamp(_gain(sl, nl, sr, nr), floor), 1
    ll = _observed_low_left(sl, nl, sr, nr)
    count[0] = 0
    lo = 0
    hi = N
    while hi - lo > 1:
        mid = (lo + hi) // 2
        g0 = _memo_gain(mid, ll, sl, nl, sr, nr, P, N, memo_k, memo_v, count)
        g1 = _memo_gain(mid + 1, ll, sl, nl, sr, nr, P, N, memo_k, memo_v, count)
        if g1 - g0 > 0.0:
            lo = mid + 1
        else:
            hi = mid
    best = -1.0
    bw = 0
    # ascending k so ties keep the smallest threshold
    cands = (0, lo, hi, N)
    for i in range(4):
        k = cands[i]
        g = _clamp(_memo_gain(k, ll, sl, nl, sr, nr, P, N, memo_k, memo_v, count), floor)
        if g > best:
            best = g
            bw = k
    return bw, ll, best, count[0]


@nb.njit(cache=True, nogil=True)
def _midpoint(a, b):
    z = a + (b - a) * 0.5
    if z <= a:
        z = b
    return z


@nb.njit(cache=True, nogil=True)
def node_floor(y, rows, start, end):
    s = 0.0
    for i in range(start, end):
        v = y[rows[i]]
        s += v * v
    n = end - start
    if n == 0:
        return 0.0
    return GAIN_FLOOR * (s / n)


@nb.njit(cache=True, nogil=True)
def best_split_kernel(X, M, y, rows, start, end, feats, rule, mode, floor, xo, yo, ym, memo_k, memo_v):
    """Best (feature, position, w, low_left) over ``feats`` for rows[start:end].

    Returns (feature, position, w, low_left, gain, evals, found). Ties go to
    the smallest feature, then the smallest position, then the first
    candidate in scan order.
    """
    best = -1.0
    bf = -1
    bpos = 0.0
    bw = 0
    bll = True
    evals = 0
    count = np.zeros(1, dtype=np.int64)
    for fi in range(feats.shape[0]):
        h = feats[fi]
        no = 0
        nm = 0
        for i in range(start, end):
            r = rows[i]
            if M[r, h]:
                ym[nm] = y[r]
                nm += 1
            else:
                xo[no] = X[r, h]
                yo[no] = y[r]
                no += 1
        if no < 2:
            continue
        order = np.argsort(xo[:no], kind="mergesort")
        xs = xo[:no][order]
        ys = yo[:no][order]
        cs = np.cumsum(ys)
        tot = cs[no - 1]
        msorted = np.sort(ym[:nm])
        P = np.zeros(nm + 1)
        acc = 0.0
        for i in range(nm):
            acc += msorted[i]
            P[i + 1] = acc
        SM = P[nm]
        for c in range(1, no):
            if xs[c] == xs[c - 1]:
                continue
            sl = cs[c - 1]
            nl = c
            sr = tot - sl
            nr = no - c
            if rule == RULE_CLASSIC:
                g = _clamp(_gain(sl, nl, sr, nr), floor)
                evals += 1
                if g > best:
                    best = g
                    bf = h
                    bpos = _midpoint(xs[c - 1], xs[c])
                    bw = 0
                    bll = True
            elif rule == RULE_ASSIGNATION:
                if mode == MODE_EXHAUSTIVE:
                    w, ll, g, ev = scan_exhaustive(sl, nl, sr, nr, P, nm, floor)
                else:
                    w, ll, g, ev = scan_dichotomy(sl, nl, sr, nr, P, nm, floor, memo_k, memo_v, count)
                evals += ev
                if g > best:
                    best = g
                    bf = h
                    bpos = _midpoint(xs[c - 1], xs[c])
                    bw = w
                    bll = ll
            else:
                # MIA: missing block with the right child, then with the left
                g = _clamp(_threshold_gain(0, True, sl, nl, sr, nr, P, nm), floor)
                evals += 1
                if g > best:
                    best = g
                    bf = h
                    bpos = _midpoint(xs[c - 1], xs[c])
                    bw = 0
                    bll = True
                if nm > 0:
                    g = _clamp(_gain(sl + SM, nl + nm, sr, nr), floor)
                    evals += 1
                    if g > best:
                        best = g
                        bf = h
                        bpos = _midpoint(xs[c - 1], xs[c])
                        bw = nm
                        bll = True
        if rule == RULE_MIA and nm > 0:
            # observed vs missing: position +inf sends every observed row left
            g = _clamp(_gain(tot, no, SM, nm), floor)
            evals += 1
            if g > best:
                best = g
                bf = h
                bpos = np.inf
                bw = 0
                bll = True
    return bf, bpos, bw, bll, best, evals, bf >= 0


# ---------------------------------------------------------------------------
# Python API


@dataclass(frozen=True)
class Cut:
    feature: int
    position: float


@dataclass(frozen=True)
class Assignation:
    """``threshold_w`` lowest-response missing rows go to ``low_side``."""

    threshold_w: int = 0
    low_side: Side = Side.LEFT


@dataclass(frozen=True)
class SplitResult:
    cut: Cut
    assignation: Assignation
    gain: float
    cart_evaluations: int


@dataclass(frozen=True, eq=False)
class NodeView:
    """Rows of one cell: features, mask and responses restricted to the cell."""

    features: np.ndarray
    mask: np.ndarray
    responses: np.ndarray
    row_indices: np.ndarray

    @classmethod
    def from_arrays(cls, features, mask, responses, row_indices=None) -> "NodeView":
        X = np.ascontiguousarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        M = np.ascontiguousarray(np.asarray(mask, dtype=bool).reshape(X.shape))
        y = np.ascontiguousarray(responses, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValueError("responses must have one entry per row")
        rows = np.arange(X.shape[0]) if row_indices is None else np.asarray(row_indices, dtype=np.int64)
        return cls(X, M, y, rows)

    @classmethod
    def from_dataset(cls, dataset, rows=None) -> "NodeView":
        rows = np.arange(dataset.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
        return cls.from_arrays(dataset.features[rows], dataset.mask[rows], dataset.response[rows], rows)

    @property
    def size(self) -> int:
        return self.responses.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def n_obs(self, h: int) -> int:
        return int((~self.mask[:, h]).sum())

    def n_miss(self, h: int) -> int:
        return int(self.mask[:, h].sum())

    def observed(self, h: int) -> np.ndarray:
        """Positions observed on ``h``, ascending by feature value."""
        pos = np.flatnonzero(~self.mask[:, h])
        return pos[np.argsort(self.features[pos, h], kind="stable")]

    def missing(self, h: int) -> np.ndarray:
        """Positions missing on ``h``, ascending by response (ties by position)."""
        pos = np.flatnonzero(self.mask[:, h])
        return pos[np.argsort(self.responses[pos], kind="stable")]

    def floor(self) -> float:
        return GAIN_FLOOR * float(np.mean(self.responses ** 2)) if self.size else 0.0


def child_labels(node: NodeView, cut: Cut, assignation: Assignation) -> np.ndarray:
    """Boolean vector, True for rows sent to the left child."""
    h = cut.feature
    miss = node.missing(h)
    if assignation.threshold_w > len(miss) or assignation.threshold_w < 0:
        raise ValueError(
            f"threshold {assignation.threshold_w} outside 0..{len(miss)} missing rows on feature {h}"
        )
    left = np.zeros(node.size, dtype=bool)
    obs = ~node.mask[:, h]
    left[obs] = node.features[obs, h] < cut.position
    low, high = miss[: assignation.threshold_w], miss[assignation.threshold_w:]
    if assignation.low_side is Side.LEFT:
        left[low] = True
    else:
        left[high] = True
    return left


def criterion_for_labels(responses: np.ndarray, left: np.ndarray) -> float:
    """Within-cell variance minus the size-weighted child variances (0/0 = 0)."""
    y = np.asarray(responses, dtype=np.float64)
    n = y.shape[0]
    if n == 0:
        return 0.0
    total = np.sum((y - y.mean()) ** 2) / n
    resid = 0.0
    for part in (y[left], y[~left]):
        if part.size:
            resid += np.sum((part - part.mean()) ** 2)
    return max(total - resid / n, 0.0)


def cart_criterion(node: NodeView, cut: Cut, assignation: Assignation) -> float:
    """CART criterion of a cut with missing rows placed by ``assignation``."""
    return criterion_for_labels(node.responses, child_labels(node, cut, assignation))


def enumerate_cut_positions(node: NodeView, feature: int) -> np.ndarray:
    """Midpoints between consecutive distinct observed values of ``feature``."""
    vals = np.unique(node.features[~node.mask[:, feature], feature])
    if vals.size < 2:
        return np.empty(0)
    return np.array([_midpoint(a, b) for a, b in zip(vals[:-1], vals[1:])])


def _cut_sums(node: NodeView, cut: Cut):
    h = cut.feature
    obs = ~node.mask[:, h]
    x = node.features[obs, h]
    # same summation order as the kernel: cumulative sums along sorted x
    cs = np.cumsum(node.responses[obs][np.argsort(x, kind="mergesort")])
    nl = int((x < cut.position).sum())
    nr = int(x.size - nl)
    sl = float(cs[nl - 1]) if nl else 0.0
    sr = (float(cs[-1]) if cs.size else 0.0) - sl
    ym = np.sort(node.responses[node.mask[:, h]])
    P = np.concatenate([[0.0], np.cumsum(ym)])
    return sl, nl, sr, nr, P, ym.size


def _to_assignation(w, low_left) -> Assignation:
    return Assignation(int(w), Side.LEFT if low_left else Side.RIGHT)


def best_assignation_exhaustive(node: NodeView, cut: Cut) -> tuple[Assignation, float, int]:
    """Scan every threshold in both orientations (2*N_miss criterion calls)."""
    sl, nl, sr, nr, P, N = _cut_sums(node, cut)
    w, ll, g, ev = scan_exhaustive(sl, nl, sr, nr, P, N, node.floor())
    return _to_assignation(w, ll), float(g), int(ev)


def best_assignation_dichotomy(node: NodeView, cut: Cut) -> tuple[Assignation, float, int]:
    """Logarithmic threshold search (exact only when CART(k) is unimodal)."""
    sl, nl, sr, nr, P, N = _cut_sums(node, cut)
    memo_k = np.empty(MEMO_SIZE, dtype=np.int64)
    memo_v = np.empty(MEMO_SIZE)
    count = np.zeros(1, dtype=np.int64)
    w, ll, g, ev = scan_dichotomy(sl, nl, sr, nr, P, N, node.floor(), memo_k, memo_v, count)
    return _to_assignation(w, ll), float(g), int(ev)


def _run_kernel(node: NodeView, candidate_features: Iterable[int], rule: int, mode: int) -> SplitResult | None:
    feats = np.array(sorted(set(int(h) for h in candidate_features)), dtype=np.int64)
    if feats.size == 0 or node.size == 0:
        return None
    n = node.size
    rows = np.arange(n, dtype=np.int64)
    bf, pos, w, ll, g, ev, found = best_split_kernel(
        node.features, node.mask, node.responses, rows, 0, n, feats, rule, mode, node.floor(),
        np.empty(n), np.empty(n), np.empty(n), np.empty(MEMO_SIZE, dtype=np.int64), np.empty(MEMO_SIZE),
    )
    if not found:
        return None
    return SplitResult(Cut(int(bf), float(pos)), _to_assignation(w, ll), float(g), int(ev))


def best_cut_and_assignation(node: NodeView, candidate_features, search_mode="EXHAUSTIVE") -> SplitResult | None:
    """Maximise the criterion jointly over feature, cut position and assignation."""
    return _run_kernel(node, candidate_features, RULE_ASSIGNATION, mode_code(search_mode))


def classic_best_cut(node: NodeView, candidate_features) -> SplitResult | None:
    """Plain CART on the observed rows only."""
    return _run_kernel(node, candidate_features, RULE_CLASSIC, MODE_EXHAUSTIVE)


def mia_best_cut(node: NodeView, candidate_features) -> SplitResult | None:
    """Missing Incorporated in Attributes: the missing rows move as one block.

    The observed-versus-missing rule is returned as a cut at position +inf
    with every missing row assigned right.
    """
    return _run_kernel(node, candidate_features, RULE_MIA, MODE_EXHAUSTIVE)
