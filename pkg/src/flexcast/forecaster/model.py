"""Direct multi-step metamodel: one boosted ensemble per step ahead."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from ..dataset import SIGNAL_PAST, SIGNAL_WINDOW, Dataset, FeatureSchema, signal_features
from ..signals import ForceOffSignal
from .boosting import BoostParams, Ensemble, fit_ensemble, prepare
from .tree import LEAF

FORMAT_VERSION = 1
H = 96


def _future_bits(s_override, n_rows: int) -> np.ndarray:
    if isinstance(s_override, ForceOffSignal):
        s_override = s_override.bits
    s = np.asarray(s_override, dtype=np.float64)
    if s.ndim == 1:
        s = np.broadcast_to(s, (n_rows, len(s)))
    if s.shape != (n_rows, H):
        raise ValueError("signal override must have 96 steps per row")
    return s


def with_signal(X: np.ndarray, n_signal: int, s_override) -> np.ndarray:
    """Copy of ``X`` whose future signal (and every column derived from it) is replaced."""
    X = np.array(X, dtype=np.float32, copy=True)
    win = X[:, :SIGNAL_WINDOW].astype(np.float64)
    win[:, SIGNAL_PAST + 1:] = _future_bits(s_override, len(X))
    X[:, :n_signal] = signal_features(win)
    return X


@dataclass
class TreeEnsembleModel:
    """96 single-output ensembles sharing a feature schema.

    Outputs are in the dataset's normalised units (fraction of the pool's
    summed nominal power).
    """

    ensembles: list
    schema: FeatureSchema
    params: BoostParams = field(default_factory=BoostParams)
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def horizon(self) -> int:
        return len(self.ensembles)

    @property
    def schema_hash(self) -> str:
        return self.schema.hash

    def packed(self):
        """Ensemble arrays stacked to ``(H, T, M)`` for the batch kernels."""
        if self._packed is None:
            T = max(e.n_trees for e in self.ensembles)
            M = max(e.feature.shape[1] for e in self.ensembles) if T else 1
            Hn = self.horizon
            feat = np.full((Hn, T, M), LEAF, dtype=np.int32)
            thr = np.zeros((Hn, T, M))
            left = np.full((Hn, T, M), -1, dtype=np.int32)
            right = np.full((Hn, T, M), -1, dtype=np.int32)
            val = np.zeros((Hn, T, M))
            base = np.zeros(Hn)
            lr = np.zeros(Hn)
            for h, e in enumerate(self.ensembles):
                t, m = e.feature.shape
                feat[h, :t, :m] = e.feature
                thr[h, :t, :m] = e.threshold
                left[h, :t, :m] = e.left
                right[h, :t, :m] = e.right
                val[h, :t, :m] = e.value
                base[h], lr[h] = e.base_score, e.learning_rate
            self._packed = (feat, thr, left, right, val, base, lr)
        return self._packed

    def check_schema(self, schema: FeatureSchema | str | None):
        if schema is None:
            return
        h = schema if isinstance(schema, str) else schema.hash
        if h != self.schema.hash:
            raise ValueError(f"schema mismatch: model {self.schema.hash}, data {h}")

    def predict(self, X: np.ndarray, s_override=None, schema: FeatureSchema | str | None = None) -> np.ndarray:
        """Predictions of shape ``(n_rows, 96)``.

        With ``s_override`` (one signal or one per row) the future control
        signal is replaced and all signal-derived columns recomputed first.
        """
        self.check_schema(schema)
        X = np.atleast_2d(np.asarray(X, dtype=np.float32))
        if X.shape[1] != self.schema.n_features:
            raise ValueError(f"expected {self.schema.n_features} features, got {X.shape[1]}")
        if s_override is not None:
            X = with_signal(X, self.schema.n_signal, s_override)
        return _predict_all(*self.packed(), np.ascontiguousarray(X))

    def signal_trees(self) -> np.ndarray:
        """``(H, T)`` flags: does the tree split on any signal-derived column?"""
        feat = self.packed()[0]
        return ((feat >= 0) & (feat < self.schema.n_signal)).any(axis=2)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "tree_ensemble",
            "schema": self.schema.to_dict(),
            "params": self.params.to_dict(),
            "ensembles": [e.to_dict() for e in self.ensembles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsembleModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported model format version")
        return cls([Ensemble.from_dict(e) for e in d["ensembles"]], FeatureSchema.from_dict(d["schema"]),
                   BoostParams(**d["params"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        if d.get("kind") == "energy_aware":
            return EnergyAwareModel.from_dict(d)
        return cls.from_dict(d)


def fit_model(train: Dataset, params: BoostParams = BoostParams(), horizons=None, data=None) -> TreeEnsembleModel:
    """Fit one ensemble per step ahead on ``train`` (all 96 by default).

    ``data`` optionally passes a prepared column structure of ``train.X``.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    horizons = range(train.Y.shape[1]) if horizons is None else horizons
    data = prepare(train.X, params) if data is None else data
    ens = [fit_ensemble(data, train.Y[:, h], params) for h in horizons]
    return TreeEnsembleModel(ens, train.schema, params)


def imbalance_features(stage1: TreeEnsembleModel, X: np.ndarray) -> np.ndarray:
    """Stage-1 prediction with the actual signal minus the one with a zeroed future signal."""
    return stage1.predict(X) - stage1.predict(X, s_override=np.zeros(H))


@dataclass
class EnergyAwareModel:
    """Two-stage model; stage 2 also sees the stage-1 energy imbalance."""

    stage1: TreeEnsembleModel
    stage2: TreeEnsembleModel

    @property
    def schema(self) -> FeatureSchema:
        return self.stage1.schema

    @property
    def horizon(self) -> int:
        return self.stage2.horizon

    def augment(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float32))
        return np.concatenate([X, imbalance_features(self.stage1, X).astype(np.float32)], axis=1)

    def predict(self, X: np.ndarray, s_override=None, schema: FeatureSchema | str | None = None) -> np.ndarray:
        self.stage1.check_schema(schema)
        X = np.atleast_2d(np.asarray(X, dtype=np.float32))
        if s_override is not None:
            X = with_signal(X, self.schema.n_signal, s_override)
        return self.stage2.predict(self.augment(X))

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "kind": "energy_aware",
                "stage1": self.stage1.to_dict(), "stage2": self.stage2.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyAwareModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported model format version")
        s1 = TreeEnsembleModel.from_dict(d["stage1"])
        s2 = TreeEnsembleModel.from_dict(d["stage2"])
        if s2.schema.hash != s1.schema.with_imbalance().hash:
            raise ValueError("stage-2 schema does not extend the stage-1 schema")
        return cls(s1, s2)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def fit_energy_aware(train: Dataset, params: BoostParams = BoostParams(),
                     stage1: TreeEnsembleModel | None = None) -> EnergyAwareModel:
    """Fit (or reuse) the stage-1 model, freeze it, then fit stage 2 on augmented rows."""
    if stage1 is None:
        stage1 = fit_model(train, params)
    elif stage1.schema.hash != train.schema.hash:
        raise ValueError("stage-1 model was trained on a different schema")
    aug = Dataset(np.concatenate([train.X, imbalance_features(stage1, train.X).astype(np.float32)], axis=1),
                  train.Y, train.t, train.day, train.scenario, train.controlled, train.scale, train.n_hp,
                  train.n_eh, train.T_ma, train.schema.with_imbalance())
    return EnergyAwareModel(stage1, fit_model(aug, params))


def predict(model, X: np.ndarray, s_override=None, schema=None) -> np.ndarray:
    """Module-level alias of ``model.predict``."""
    return model.predict(X, s_override=s_override, schema=schema)


def predict_candidates(model, x: np.ndarray, signals: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Predictions for one feature row under every candidate future signal.

    Returns ``(n_signals, 96)``.  Trees that never split on a signal column
    give the same value for every candidate and are evaluated only once.
    """
    x = np.asarray(x, dtype=np.float32).reshape(1, -1)
    signals = np.asarray(signals)
    if isinstance(model, EnergyAwareModel):
        out = np.empty((len(signals), model.horizon))
        base_s0 = model.stage1.predict(x, s_override=np.zeros(H))
        for a in range(0, len(signals), chunk):
            sig = signals[a:a + chunk]
            Xc = with_signal(np.repeat(x, len(sig), axis=0), model.schema.n_signal, sig)
            imb = _predict_varying(model.stage1, Xc) - base_s0
            out[a:a + chunk] = _predict_varying(model.stage2, np.concatenate([Xc, imb.astype(np.float32)], axis=1),
                                                varying=None)
        return out
    out = np.empty((len(signals), model.horizon))
    for a in range(0, len(signals), chunk):
        sig = signals[a:a + chunk]
        Xc = with_signal(np.repeat(x, len(sig), axis=0), model.schema.n_signal, sig)
        out[a:a + chunk] = _predict_varying(model, Xc)
    return out


def _predict_varying(model: TreeEnsembleModel, Xc: np.ndarray, varying: str | None = "signal") -> np.ndarray:
    feat, thr, left, right, val, base, lr = model.packed()
    mask = model.signal_trees() if varying == "signal" else np.ones(feat.shape[:2], dtype=bool)
    return _predict_masked(feat, thr, left, right, val, base, lr, mask, np.ascontiguousarray(Xc, dtype=np.float32))


@numba.njit(cache=True)
def _leaf(feat, thr, left, right, val, h, t, x):
    k = 0
    while feat[h, t, k] != LEAF:
        if x[feat[h, t, k]] <= thr[h, t, k]:
            k = left[h, t, k]
        else:
            k = right[h, t, k]
    return val[h, t, k]


@numba.njit(cache=True)
def _predict_all(feat, thr, left, right, val, base, lr, X):
    n = X.shape[0]
    Hn, T = feat.shape[0], feat.shape[1]
    out = np.empty((n, Hn))
    for i in range(n):
        x = X[i]
        for h in range(Hn):
            acc = 0.0
            for t in range(T):
                acc += _leaf(feat, thr, left, right, val, h, t, x)
            out[i, h] = base[h] + lr[h] * acc
    return out


@numba.njit(cache=True)
def _predict_masked(feat, thr, left, right, val, base, lr, varying, X):
    # candidates share every non-signal column, so constant trees use row 0;
    # the summation order matches _predict_all bit for bit
    n = X.shape[0]
    Hn, T = feat.shape[0], feat.shape[1]
    out = np.empty((n, Hn))
    x0 = X[0]
    const = np.zeros(T)
    for h in range(Hn):
        for t in range(T):
            if not varying[h, t]:
                const[t] = _leaf(feat, thr, left, right, val, h, t, x0)
        for i in range(n):
            acc = 0.0
            x = X[i]
            for t in range(T):
                if varying[h, t]:
                    acc += _leaf(feat, thr, left, right, val, h, t, x)
                else:
                    acc += const[t]
            out[i, h] = base[h] + lr[h] * acc
    return out
