"""Seeded random search over the boosting learning rate and round count."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..dataset import Dataset
from .boosting import BoostParams, prepare
from .metrics import nmae
from .model import fit_model


def sample_pairs(budget: int, seed: int = 0, lr_range=(0.01, 0.3), n_range=(50, 1000)) -> list:
    """``budget`` pairs with log-uniform learning rate and uniform integer round count."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    lr = np.exp(rng.uniform(np.log(lr_range[0]), np.log(lr_range[1]), budget))
    n = rng.integers(n_range[0], n_range[1] + 1, budget)
    return [(float(a), int(b)) for a, b in zip(lr, n)]


def day_folds(days: np.ndarray, folds: int) -> list:
    """Contiguous blocks of days; each block is held out once."""
    uniq = np.unique(days)
    if folds < 2 or folds > len(uniq):
        raise ValueError("need 2 <= folds <= number of distinct days")
    return [np.isin(days, block) for block in np.array_split(uniq, folds)]


def tune(train: Dataset, budget: int = 40, folds: int = 3, seed: int = 0, base: BoostParams = BoostParams(),
         lr_range=(0.01, 0.3), n_range=(50, 1000), horizons=None):
    """Pick the (learning rate, n_estimators) pair with the lowest mean CV nMAE.

    Folds are contiguous day blocks.  ``horizons`` restricts the scored
    steps ahead (all 96 by default) to cut the cost at large scale.
    Returns ``(lr, n_estimators, table)`` where ``table`` lists every
    sampled pair with its score.
    """
    pairs = sample_pairs(budget, seed, lr_range, n_range)
    masks = day_folds(train.day, folds)
    horizons = list(range(train.Y.shape[1])) if horizons is None else list(horizons)
    prepared = []
    for held in masks:
        fit_idx, val_idx = np.flatnonzero(~held), np.flatnonzero(held)
        tr, va = train.subset(fit_idx), train.subset(val_idx)
        prepared.append((tr, va, prepare(tr.X, base)))
    table = []
    for lr, n in pairs:
        params = replace(base, learning_rate=lr, n_estimators=n)
        scores = []
        for tr, va, data in prepared:
            model = fit_model(tr, params, horizons=horizons, data=data)
            pred = model.predict(va.X)
            scores.append(float(np.mean(nmae(va.Y[:, horizons] * va.scale[:, None], pred * va.scale[:, None]))))
        table.append((lr, n, float(np.mean(scores))))
    best = min(range(len(table)), key=lambda i: (table[i][2], i))
    return table[best][0], table[best][1], table
