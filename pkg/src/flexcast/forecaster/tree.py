"""Least-squares regression trees grown level by level.

Two split searches are available.  The exact search scans presorted feature
columns, one pass per column per level.  The histogram search first maps
every column onto at most 255 ordered bins; it is exact for columns with at
most 255 distinct values (binary signal flags, counts, calendar features)
and quantile-binned otherwise.  All tree state lives in flat arrays so that
ensembles can be evaluated inside numba kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    min_samples_leaf: int = 20
    min_gain: float = 1e-12

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class RegressionTree:
    """Flat binary tree; ``feature[i] == LEAF`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float32)
        return _predict_tree(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
        )


MAX_BINS = 255


class BinnedColumns:
    """Column-major ``uint8`` bin codes of a design matrix.

    ``edges[f, b]`` is the split threshold between bins ``b`` and ``b + 1``
    of feature ``f`` (midpoint between neighbouring distinct values, or
    between neighbouring quantile cut values when a column has more than
    ``max_bins`` distinct values).  A row with value ``x`` lands in bin
    ``b`` iff ``edges[f, b-1] < x <= edges[f, b]``.
    """

    def __init__(self, X: np.ndarray, max_bins: int = MAX_BINS):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        if not 2 <= max_bins <= MAX_BINS:
            raise ValueError(f"max_bins must lie in [2, {MAX_BINS}]")
        self.n_rows, self.n_features = X.shape
        self.max_bins = max_bins
        self.edges = np.full((self.n_features, max_bins), np.inf, dtype=np.float64)
        self.n_bins = np.zeros(self.n_features, dtype=np.int32)
        self.codes = np.empty((self.n_features, self.n_rows), dtype=np.uint8)
        for f in range(self.n_features):
            col = X[:, f]
            uniq = np.unique(col).astype(np.float64)
            if len(uniq) > max_bins:
                # cut points at quantiles of the distinct values keep heavy ties intact
                cuts = np.unique(np.quantile(col.astype(np.float64), np.linspace(0, 1, max_bins + 1)[1:-1],
                                             method="lower"))
                nxt = uniq[np.searchsorted(uniq, cuts, side="right")]
                thr = cuts + 0.5 * (nxt - cuts)
            else:
                thr = uniq[:-1] + 0.5 * np.diff(uniq)
            thr = thr.astype(np.float32).astype(np.float64)
            thr = np.unique(thr)
            self.n_bins[f] = len(thr) + 1
            self.edges[f, : len(thr)] = thr
            self.codes[f] = np.searchsorted(thr, col.astype(np.float64), side="left")


class SortedColumns:
    """Column-major float32 copy of a design matrix plus per-column sort order.

    Built once per training set and shared by every tree grown on it.
    """

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2:
            raise ValueError("X must be 2-D")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        self.n_rows, self.n_features = X.shape
        self.columns = np.ascontiguousarray(X.T)
        self.order = np.argsort(self.columns, axis=1, kind="stable").astype(np.int32)
        self.sorted_values = np.take_along_axis(self.columns, self.order, axis=1)

    def subset(self, rows: np.ndarray) -> "SortedColumns":
        return SortedColumns(self.columns[:, rows].T)


def fit_tree(data: SortedColumns, target: np.ndarray, params: TreeParams = TreeParams()) -> RegressionTree:
    """Fit one least-squares tree to ``target`` (typically boosting residuals)."""
    target = np.asarray(target, dtype=np.float64)
    if data.n_rows == 0:
        raise ValueError("cannot fit a tree on empty data")
    if target.shape != (data.n_rows,):
        raise ValueError("target length does not match data")
    if data.n_rows < params.min_samples_leaf:
        raise ValueError("fewer rows than min_samples_leaf")
    feature, threshold, left, right, value = _grow(
        data.columns,
        data.order,
        data.sorted_values,
        target,
        params.max_depth,
        params.min_samples_leaf,
        params.min_gain,
    )
    return RegressionTree(feature, threshold, left, right, value)


def fit_tree_hist(data: BinnedColumns, target: np.ndarray, params: TreeParams = TreeParams(),
                  rows: np.ndarray | None = None, features: np.ndarray | None = None) -> RegressionTree:
    """Fit one least-squares tree on binned columns.

    ``rows`` restricts training to a row subset and ``features`` to a column
    subset; both default to everything.
    """
    target = np.asarray(target, dtype=np.float64)
    if data.n_rows == 0:
        raise ValueError("cannot fit a tree on empty data")
    if target.shape != (data.n_rows,):
        raise ValueError("target length does not match data")
    rows = np.arange(data.n_rows, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    features = (np.arange(data.n_features, dtype=np.int64) if features is None
                else np.asarray(features, dtype=np.int64))
    if len(rows) < params.min_samples_leaf:
        raise ValueError("fewer rows than min_samples_leaf")
    out = _grow_hist(data.codes, data.edges, data.n_bins, target, rows, features,
                     params.max_depth, params.min_samples_leaf, params.min_gain)
    return RegressionTree(*out)


@numba.njit(cache=True)
def _grow_hist(codes, edges, n_bins, target, rows, features, max_depth, min_leaf, min_gain):
    n = len(rows)
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    split_bin = np.zeros(max_nodes, dtype=np.int32)
    node_sum = np.zeros(max_nodes, dtype=np.float64)
    node_cnt = np.zeros(max_nodes, dtype=np.int64)
    g = np.empty(n, dtype=np.float64)
    node_of = np.zeros(n, dtype=np.int32)
    for j in range(n):
        g[j] = target[rows[j]]
        node_sum[0] += g[j]
    node_cnt[0] = n
    n_nodes = 1
    slot_of = np.full(max_nodes, -1, dtype=np.int32)
    open_nodes = np.zeros(max_nodes, dtype=np.int32)
    n_open = 1
    slot_of[0] = 0
    # per-row slot, refreshed every level (-1 for rows in finished leaves)
    slot = np.zeros(n, dtype=np.int32)
    hs = np.zeros((max_nodes, 256), dtype=np.float64)
    hc = np.zeros((max_nodes, 256), dtype=np.int64)

    for _depth in range(max_depth):
        best_gain = np.full(n_open, min_gain, dtype=np.float64)
        best_feat = np.full(n_open, -1, dtype=np.int32)
        best_bin = np.zeros(n_open, dtype=np.int32)
        for j in range(n):
            slot[j] = slot_of[node_of[j]]
        for f in features:
            nb = n_bins[f]
            if nb < 2:
                continue
            for s in range(n_open):
                for b in range(nb):
                    hs[s, b] = 0.0
                    hc[s, b] = 0
            col = codes[f]
            for j in range(n):
                s = slot[j]
                if s < 0:
                    continue
                b = col[rows[j]]
                hs[s, b] += g[j]
                hc[s, b] += 1
            for s in range(n_open):
                k = open_nodes[s]
                tot_s = node_sum[k]
                tot_c = node_cnt[k]
                parent = tot_s * tot_s / tot_c
                sl = 0.0
                cl = 0
                for b in range(nb - 1):
                    sl += hs[s, b]
                    cl += hc[s, b]
                    if cl < min_leaf:
                        continue
                    cr = tot_c - cl
                    if cr < min_leaf:
                        break
                    if hc[s, b] == 0:
                        continue
                    sr = tot_s - sl
                    gain = sl * sl / cl + sr * sr / cr - parent
                    if gain > best_gain[s]:
                        best_gain[s] = gain
                        best_feat[s] = f
                        best_bin[s] = b

        any_split = False
        n_new = 0
        new_open = np.zeros(max_nodes, dtype=np.int32)
        for s in range(n_open):
            k = open_nodes[s]
            slot_of[k] = -1
            if best_feat[s] >= 0:
                any_split = True
                feature[k] = best_feat[s]
                split_bin[k] = best_bin[s]
                threshold[k] = edges[best_feat[s], best_bin[s]]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                new_open[n_new] = n_nodes
                new_open[n_new + 1] = n_nodes + 1
                n_new += 2
                n_nodes += 2
        if not any_split:
            break
        first_new = n_nodes - n_new
        for j in range(n):
            k = node_of[j]
            if feature[k] == LEAF or left[k] < first_new:
                continue
            if codes[feature[k], rows[j]] <= split_bin[k]:
                k2 = left[k]
            else:
                k2 = right[k]
            node_of[j] = k2
            node_sum[k2] += g[j]
            node_cnt[k2] += 1
        for j in range(n_new):
            open_nodes[j] = new_open[j]
            slot_of[new_open[j]] = j
        n_open = n_new

    value = np.zeros(n_nodes, dtype=np.float64)
    for k in range(n_nodes):
        if node_cnt[k] > 0:
            value[k] = node_sum[k] / node_cnt[k]
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value,
    )


@numba.njit(cache=True)
def _grow(columns, order, sorted_values, target, max_depth, min_leaf, min_gain):
    n_features, n = columns.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    node_sum = np.zeros(max_nodes, dtype=np.float64)
    node_cnt = np.zeros(max_nodes, dtype=np.int64)

    node_of = np.zeros(n, dtype=np.int32)
    for i in range(n):
        node_sum[0] += target[i]
    node_cnt[0] = n
    n_nodes = 1

    # open nodes of the current level, mapped to compact slots
    slot_of = np.full(max_nodes, -1, dtype=np.int32)
    open_nodes = np.zeros(max_nodes, dtype=np.int32)
    n_open = 1
    open_nodes[0] = 0
    slot_of[0] = 0

    for _depth in range(max_depth):
        best_gain = np.full(n_open, min_gain, dtype=np.float64)
        best_feat = np.full(n_open, -1, dtype=np.int32)
        best_thr = np.zeros(n_open, dtype=np.float64)
        sum_l = np.zeros(n_open, dtype=np.float64)
        cnt_l = np.zeros(n_open, dtype=np.int64)
        last = np.zeros(n_open, dtype=np.float64)
        tot_sum = np.zeros(n_open, dtype=np.float64)
        tot_cnt = np.zeros(n_open, dtype=np.int64)
        parent_score = np.zeros(n_open, dtype=np.float64)
        for s in range(n_open):
            k = open_nodes[s]
            tot_sum[s] = node_sum[k]
            tot_cnt[s] = node_cnt[k]
            parent_score[s] = node_sum[k] * node_sum[k] / node_cnt[k]

        for f in range(n_features):
            for s in range(n_open):
                sum_l[s] = 0.0
                cnt_l[s] = 0
            for i in range(n):
                row = order[f, i]
                s = slot_of[node_of[row]]
                if s < 0:
                    continue
                x = sorted_values[f, i]
                c = cnt_l[s]
                if c >= min_leaf and tot_cnt[s] - c >= min_leaf and x > last[s]:
                    sl = sum_l[s]
                    sr = tot_sum[s] - sl
                    gain = sl * sl / c + sr * sr / (tot_cnt[s] - c) - parent_score[s]
                    if gain > best_gain[s]:
                        best_gain[s] = gain
                        best_feat[s] = f
                        thr = last[s] + 0.5 * (x - last[s])
                        if not thr < x:
                            thr = last[s]
                        best_thr[s] = thr
                sum_l[s] += target[row]
                cnt_l[s] = c + 1
                last[s] = x

        any_split = False
        new_open = np.zeros(max_nodes, dtype=np.int32)
        n_new = 0
        for s in range(n_open):
            k = open_nodes[s]
            slot_of[k] = -1
            if best_feat[s] >= 0:
                any_split = True
                feature[k] = best_feat[s]
                threshold[k] = best_thr[s]
                left[k] = n_nodes
                right[k] = n_nodes + 1
                new_open[n_new] = n_nodes
                new_open[n_new + 1] = n_nodes + 1
                n_new += 2
                n_nodes += 2
        if not any_split:
            break
        for i in range(n):
            k = node_of[i]
            f = feature[k]
            if f == LEAF or left[k] < 0:
                continue
            if slot_of[k] >= 0:
                continue
            if columns[f, i] <= threshold[k]:
                k2 = left[k]
            else:
                k2 = right[k]
            # only rows of nodes split at this level move
            if k2 >= n_nodes - n_new:
                node_of[i] = k2
                node_sum[k2] += target[i]
                node_cnt[k2] += 1
        for j in range(n_new):
            open_nodes[j] = new_open[j]
            slot_of[new_open[j]] = j
        n_open = n_new

    value = np.zeros(n_nodes, dtype=np.float64)
    for k in range(n_nodes):
        if node_cnt[k] > 0:
            value[k] = node_sum[k] / node_cnt[k]
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value,
    )


@numba.njit(cache=True)
def _predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        k = 0
        while feature[k] != LEAF:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out
