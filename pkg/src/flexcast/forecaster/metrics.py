"""Forecast accuracy and energy-balance metrics over a 96-step horizon."""
from __future__ import annotations

import numpy as np

LATE_STEPS = 20  # force-off in the last 5 h defers energy past the horizon


def nmae(y, y_hat) -> np.ndarray | float:
    """Horizon-normalised MAE ``sum|y - y_hat| / sum|y|`` along the last axis."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    den = np.abs(y).sum(axis=-1)
    if np.any(den == 0):
        raise ValueError("nMAE is undefined for an all-zero target")
    out = np.abs(y - y_hat).sum(axis=-1) / den
    return float(out) if np.ndim(out) == 0 else out


def energy_imbalance(y, y_hat_s, y_hat_s0):
    """Relative energy errors ``(dE_rel, dE_rel_noctrl)`` along the last axis.

    ``dE_rel`` compares the predicted horizon energy with the realised one;
    ``dE_rel_noctrl`` compares it with the prediction under a zero signal.
    Both are normalised by the realised energy.
    """
    y = np.asarray(y, dtype=float)
    e = y.sum(axis=-1)
    if np.any(e == 0):
        raise ValueError("energy imbalance is undefined for zero realised energy")
    e_s = np.asarray(y_hat_s, dtype=float).sum(axis=-1)
    e_0 = np.asarray(y_hat_s0, dtype=float).sum(axis=-1)
    d, d0 = (e_s - e) / e, (e_s - e_0) / e
    if np.ndim(d) == 0:
        return float(d), float(d0)
    return d, d0


def late_activation(s_future, last_steps: int = LATE_STEPS) -> np.ndarray:
    """Rows whose future signal forces devices off within the final ``last_steps``."""
    s = np.atleast_2d(np.asarray(s_future))
    return s[:, -last_steps:].any(axis=1)
