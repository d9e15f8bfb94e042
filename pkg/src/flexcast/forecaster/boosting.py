"""Least-squares gradient boosting over regression trees."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from .tree import LEAF, BinnedColumns, RegressionTree, SortedColumns, TreeParams, fit_tree, fit_tree_hist

SPLIT_SEARCHES = ("hist", "exact")


@dataclass(frozen=True)
class BoostParams:
    """Boosting hyper-parameters.

    ``subsample`` and ``colsample`` are the row and column fractions drawn
    (without replacement) for each tree; both default to 1, which keeps the
    training loss monotone.
    """

    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 20
    subsample: float = 1.0
    colsample: float = 1.0
    split_search: str = "hist"
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.subsample <= 1 and 0 < self.colsample <= 1):
            raise ValueError("subsample and colsample must lie in (0, 1]")
        if self.split_search not in SPLIT_SEARCHES:
            raise ValueError(f"split_search must be one of {SPLIT_SEARCHES}")
        TreeParams(self.max_depth, self.min_samples_leaf)

    @property
    def tree_params(self) -> TreeParams:
        return TreeParams(self.max_depth, self.min_samples_leaf)

    def to_dict(self) -> dict:
        return asdict(self)


def prepare(X: np.ndarray, params: BoostParams):
    """Column structure shared by every ensemble fitted on ``X``."""
    if params.split_search == "hist":
        return BinnedColumns(X, params.max_bins)
    return SortedColumns(X)


@dataclass
class Ensemble:
    """Boosted trees packed into padded ``(n_trees, max_nodes)`` arrays."""

    base_score: float
    learning_rate: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    @classmethod
    def from_trees(cls, base_score: float, learning_rate: float, trees: list, max_nodes: int) -> "Ensemble":
        T = len(trees)
        feature = np.full((T, max_nodes), LEAF, dtype=np.int32)
        threshold = np.zeros((T, max_nodes), dtype=np.float64)
        left = np.full((T, max_nodes), -1, dtype=np.int32)
        right = np.full((T, max_nodes), -1, dtype=np.int32)
        value = np.zeros((T, max_nodes), dtype=np.float64)
        for t, tree in enumerate(trees):
            m = tree.n_nodes
            feature[t, :m] = tree.feature
            threshold[t, :m] = tree.threshold
            left[t, :m] = tree.left
            right[t, :m] = tree.right
            value[t, :m] = tree.value
        return cls(float(base_score), float(learning_rate), feature, threshold, left, right, value)

    def tree(self, t: int) -> RegressionTree:
        return RegressionTree(self.feature[t], self.threshold[t], self.left[t], self.right[t], self.value[t])

    def predict(self, X: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float32)
        T = self.n_trees if n_trees is None else min(n_trees, self.n_trees)
        return _predict_ensemble(self.feature, self.threshold, self.left, self.right, self.value,
                                 self.base_score, self.learning_rate, T, X)

    def staged_predict(self, X: np.ndarray) -> np.ndarray:
        """Predictions after 0, 1, ..., n_trees rounds, shape ``(n_trees + 1, n_rows)``."""
        X = np.ascontiguousarray(X, dtype=np.float32)
        out = np.empty((self.n_trees + 1, len(X)))
        out[0] = self.base_score
        for t in range(self.n_trees):
            out[t + 1] = out[t] + self.learning_rate * self.tree(t).predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature": self.feature.tolist(),
            # repr of a Python float round-trips exactly through JSON
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        def arr(key, dtype):
            a = np.asarray(d[key], dtype=dtype)
            return a.reshape(len(d[key]), -1) if a.ndim == 1 else a

        return cls(
            float(d["base_score"]), float(d["learning_rate"]),
            arr("feature", np.int32), arr("threshold", np.float64), arr("left", np.int32),
            arr("right", np.int32), arr("value", np.float64),
        )


def fit_ensemble(data, y: np.ndarray, params: BoostParams = BoostParams()) -> Ensemble:
    """Least-squares boosting: ``F_0 = mean(y)``, ``F_m = F_{m-1} + lr * tree(y - F_{m-1})``.

    ``data`` is the output of :func:`prepare` (or a raw matrix).
    """
    if not isinstance(data, (BinnedColumns, SortedColumns)):
        data = prepare(data, params)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (data.n_rows,):
        raise ValueError("target length does not match data")
    if data.n_rows == 0:
        raise ValueError("cannot fit on empty data")
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    hist = isinstance(data, BinnedColumns)
    if not hist and (params.subsample < 1 or params.colsample < 1):
        raise ValueError("row/column subsampling requires the histogram split search")
    rng = np.random.default_rng(params.seed)
    base = float(y.mean())
    F = np.full(data.n_rows, base)
    max_nodes = 2 ** (params.max_depth + 1) - 1
    trees = []
    n_rows_sub = max(params.min_samples_leaf, int(round(params.subsample * data.n_rows)))
    n_cols_sub = max(1, int(round(params.colsample * data.n_features)))
    if params.learning_rate > 0:
        for _ in range(params.n_estimators):
            resid = y - F
            if hist:
                rows = None if params.subsample >= 1 else np.sort(rng.choice(data.n_rows, n_rows_sub, replace=False))
                cols = None if params.colsample >= 1 else np.sort(rng.choice(data.n_features, n_cols_sub, replace=False))
                tree = fit_tree_hist(data, resid, params.tree_params, rows, cols)
                F += params.learning_rate * _tree_predict_binned(tree, data)
            else:
                tree = fit_tree(data, resid, params.tree_params)
                F += params.learning_rate * tree.predict(data.columns.T)
            trees.append(tree)
    return Ensemble.from_trees(base, params.learning_rate, trees, max_nodes)


def _tree_predict_binned(tree: RegressionTree, data: BinnedColumns) -> np.ndarray:
    # thresholds are bin edges, so comparing codes is equivalent to comparing values
    split_bin = np.zeros(tree.n_nodes, dtype=np.int32)
    for k in range(tree.n_nodes):
        f = tree.feature[k]
        if f != LEAF:
            split_bin[k] = np.searchsorted(data.edges[f, : data.n_bins[f] - 1], tree.threshold[k], side="left")
    return _predict_codes(tree.feature, split_bin, tree.left, tree.right, tree.value, data.codes)


@numba.njit(cache=True)
def _predict_codes(feature, split_bin, left, right, value, codes):
    n = codes.shape[1]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] != LEAF:
            if codes[feature[k], i] <= split_bin[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


@numba.njit(cache=True)
def _predict_ensemble(feature, threshold, left, right, value, base, lr, n_trees, X):
    n = X.shape[0]
    out = np.full(n, base)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            k = 0
            while feature[t, k] != LEAF:
                if X[i, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            acc += value[t, k]
        out[i] = base + lr * acc
    return out
