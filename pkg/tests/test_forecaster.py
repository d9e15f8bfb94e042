import numpy as np
import pytest

from flexcast.dataset import SIGNAL_PAST, Dataset, default_schema, signal_features
from flexcast.forecaster.boosting import BoostParams, Ensemble, fit_ensemble, prepare
from flexcast.forecaster.metrics import energy_imbalance, late_activation, nmae
from flexcast.forecaster.model import (
    EnergyAwareModel, TreeEnsembleModel, with_signal, fit_energy_aware, fit_model, predict_candidates,
)
from flexcast.forecaster.tree import BinnedColumns, SortedColumns, TreeParams, fit_tree, fit_tree_hist
from flexcast.forecaster.tuning import day_folds, sample_pairs, tune


def _synthetic_dataset(n=400, seed=0, horizon=96):
    """Rows whose target drops by 0.5 for every forced-off future step in the first hour."""
    rng = np.random.default_rng(seed)
    schema = default_schema()
    win = rng.integers(0, 2, (n, 192)).astype(float)
    rest = rng.normal(size=(n, schema.n_features - schema.n_signal))
    X = np.concatenate([signal_features(win), rest], axis=1).astype(np.float32)
    fut = win[:, SIGNAL_PAST + 1:]
    Y = 1.0 + 0.3 * rest[:, [0]] - 0.5 * fut[:, :4].mean(axis=1, keepdims=True) + np.zeros((n, horizon))
    Y += 0.05 * np.sin(np.arange(horizon) / 10.0)
    ones = np.ones(n)
    ds = Dataset(X, Y, np.arange(n), np.arange(n) // 20, np.zeros(n, int), np.ones(n, bool), ones, ones, ones,
                 ones, schema)
    return ds


@pytest.fixture(scope="module")
def ds():
    return _synthetic_dataset()


@pytest.fixture(scope="module")
def model(ds):
    return fit_model(ds, BoostParams(n_estimators=30, learning_rate=0.3, min_samples_leaf=5))


# --------------------------------------------------------------------------- trees


@pytest.mark.parametrize("cols", [SortedColumns, BinnedColumns])
def test_constant_target_gives_single_leaf(cols):
    X = np.random.default_rng(0).normal(size=(50, 3))
    data = cols(X)
    fit = fit_tree if cols is SortedColumns else fit_tree_hist
    tree = fit(data, np.full(50, 2.5), TreeParams(max_depth=3, min_samples_leaf=1))
    assert tree.depth == 0
    assert np.allclose(tree.predict(X), 2.5)


@pytest.mark.parametrize("cols", [SortedColumns, BinnedColumns])
def test_step_function_recovered(cols):
    x = np.linspace(0, 1, 101)
    y = np.where(x <= 0.42, -1.0, 3.0)
    data = cols(x[:, None])
    fit = fit_tree if cols is SortedColumns else fit_tree_hist
    tree = fit(data, y, TreeParams(max_depth=1, min_samples_leaf=1))
    assert tree.depth == 1
    assert 0.42 <= tree.threshold[0] < 0.43
    assert np.array_equal(tree.predict(x[:, None]), y)


def test_exact_and_hist_agree_on_binary_features():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 2, (300, 6)).astype(float)
    y = 2 * X[:, 0] - X[:, 3] + 0.1 * rng.normal(size=300)
    p = TreeParams(max_depth=2, min_samples_leaf=5)
    a = fit_tree(SortedColumns(X), y, p).predict(X)
    b = fit_tree_hist(BinnedColumns(X), y, p).predict(X)
    assert np.allclose(a, b)


# --------------------------------------------------------------------------- boosting


@pytest.mark.parametrize("search", ["hist", "exact"])
def test_training_loss_monotone(search):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 4))
    y = np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=300)
    params = BoostParams(n_estimators=60, learning_rate=0.2, min_samples_leaf=5, split_search=search)
    ens = fit_ensemble(prepare(X, params), y, params)
    mse = ((ens.staged_predict(X) - y) ** 2).mean(axis=1)
    assert np.all(np.diff(mse) <= 1e-12)
    assert np.allclose(ens.staged_predict(X)[-1], ens.predict(X))


def test_zero_learning_rate_predicts_mean():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(80, 2)), rng.normal(size=80)
    ens = fit_ensemble(X, y, BoostParams(n_estimators=10, learning_rate=0.0))
    assert np.allclose(ens.predict(X), y.mean())


def test_fits_smooth_function():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, (2000, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
    params = BoostParams(n_estimators=300, learning_rate=0.2, max_depth=4, min_samples_leaf=5)
    pred = fit_ensemble(X, y, params).predict(X)
    r2 = 1 - ((pred - y) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert r2 > 0.99


def test_invalid_params():
    with pytest.raises(ValueError):
        BoostParams(learning_rate=-0.1)
    with pytest.raises(ValueError):
        BoostParams(split_search="approx")
    with pytest.raises(ValueError):
        fit_ensemble(np.zeros((5, 1)), np.array([1.0, np.nan, 0, 0, 0]), BoostParams(min_samples_leaf=1))


def test_ensemble_round_trip_is_bit_exact():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(200, 3)), rng.normal(size=200)
    ens = fit_ensemble(X, y, BoostParams(n_estimators=20, min_samples_leaf=5))
    back = Ensemble.from_dict(ens.to_dict())
    assert np.array_equal(back.predict(X), ens.predict(X))


# --------------------------------------------------------------------------- multi-step model


def test_model_learns_signal_effect(model, ds):
    pred = model.predict(ds.X)
    assert pred.shape == (len(ds), 96)
    assert np.mean(nmae(ds.Y, pred)) < 0.05
    x = ds.X[:1]
    on = model.predict(x, s_override=np.zeros(96))
    off = model.predict(x, s_override=np.r_[np.ones(4), np.zeros(92)])
    assert np.all(off < on)


def test_override_with_actual_signal_is_identity(model, ds):
    fut = ds.X[:, SIGNAL_PAST + 1:192].astype(float)
    assert np.array_equal(model.predict(ds.X, s_override=fut), model.predict(ds.X))


def test_batch_equals_row_by_row(model, ds):
    batch = model.predict(ds.X[:10])
    rows = np.vstack([model.predict(ds.X[i]) for i in range(10)])
    assert np.array_equal(batch, rows)


def test_predict_candidates_matches_override(model, ds):
    rng = np.random.default_rng(6)
    sig = rng.integers(0, 2, (50, 96)).astype(np.int8)
    cand = predict_candidates(model, ds.X[3], sig, chunk=16)
    ref = model.predict(np.repeat(ds.X[3:4], 50, axis=0), s_override=sig)
    assert np.array_equal(cand, ref)


def test_model_serialization_bit_exact(model, ds, tmp_path):
    model.save(tmp_path / "m.json")
    back = TreeEnsembleModel.load(tmp_path / "m.json")
    assert np.array_equal(back.predict(ds.X), model.predict(ds.X))
    with pytest.raises(ValueError):
        model.predict(ds.X, schema="0000")


def test_energy_aware_model(model, ds, tmp_path):
    ea = fit_energy_aware(ds, BoostParams(n_estimators=10, learning_rate=0.3, min_samples_leaf=5), stage1=model)
    # with a zero future signal the stage-1 imbalance columns vanish
    X0 = ea.augment(with_signal(ds.X[:5], ds.schema.n_signal, np.zeros(96)))
    assert np.allclose(X0[:, ds.X.shape[1]:], 0.0)
    assert X0.shape[1] == ds.X.shape[1] + 96
    sig = np.random.default_rng(7).integers(0, 2, (8, 96))
    assert np.allclose(predict_candidates(ea, ds.X[0], sig), ea.predict(np.repeat(ds.X[:1], 8, 0), s_override=sig))
    ea.save(tmp_path / "ea.json")
    back = TreeEnsembleModel.load(tmp_path / "ea.json")
    assert isinstance(back, EnergyAwareModel)
    assert np.array_equal(back.predict(ds.X[:20]), ea.predict(ds.X[:20]))


# --------------------------------------------------------------------------- metrics and tuning


def test_metric_examples():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert nmae(y, y) == 0.0
    assert nmae(y, y + 1) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        nmae(np.zeros(4), y)
    d, d0 = energy_imbalance(y, y * 1.1, y)
    assert d == pytest.approx(0.1) and d0 == pytest.approx(0.1)
    d, d0 = energy_imbalance(y, y, y)
    assert d == d0 == 0.0
    assert late_activation(np.r_[np.zeros(95), 1]).tolist() == [True]
    assert late_activation(np.r_[1, np.zeros(95)]).tolist() == [False]


def test_tuning_is_deterministic(ds):
    assert sample_pairs(5, seed=1) == sample_pairs(5, seed=1)
    for lr, n in sample_pairs(50, seed=2):
        assert 0.01 <= lr <= 0.3 and 50 <= n <= 1000
    folds = day_folds(ds.day, 3)
    assert np.array_equal(np.sum(folds, axis=0), np.ones(len(ds)))
    base = BoostParams(min_samples_leaf=5)
    a = tune(ds, budget=3, folds=2, seed=0, base=base, n_range=(5, 15), horizons=[0, 50])
    b = tune(ds, budget=3, folds=2, seed=0, base=base, n_range=(5, 15), horizons=[0, 50])
    assert a == b
    assert min(r[2] for r in a[2]) == [r[2] for r in a[2] if (r[0], r[1]) == a[:2]][0]
