"""Day-ahead force-off planning by exhaustive search over admissible signals."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .signals import SignalSet, filter_by_off_budget

H = 96
GAMMA = 0.25  # h per 15-minute step


@dataclass
class Tariff:
    """Spot prices (CHF/kWh per step) and monthly peak price (CHF/kW)."""

    p_spot: np.ndarray
    p_peak: float = 0.0
    gamma: float = GAMMA
    y_max_month: float = 0.0

    def __post_init__(self):
        self.p_spot = np.asarray(self.p_spot, dtype=float)
        if self.p_spot.shape != (H,):
            raise ValueError("p_spot must have 96 steps")
        if self.y_max_month < 0 or self.p_peak < 0 or self.gamma <= 0:
            raise ValueError("invalid tariff parameters")


def cost_terms(y_hat, tariff: Tariff):
    """Energy and peak cost (CHF) of one or many 96-step profiles in kW."""
    y = np.asarray(y_hat, dtype=float)
    energy = tariff.gamma * (y * tariff.p_spot).sum(axis=-1)
    peak = tariff.p_peak * np.maximum(0.0, y.max(axis=-1) - tariff.y_max_month)
    return energy, peak


def day_ahead_cost(y_hat, tariff: Tariff):
    """``gamma * sum(p_spot * y) + p_peak * max(0, max(y) - y_max_month)``."""
    energy, peak = cost_terms(y_hat, tariff)
    return energy + peak


@dataclass
class Group:
    """A controllable device pool and its response model.

    ``predictor`` maps candidate signals ``(K, 96)`` to the pool's predicted
    power ``(K, 96)`` in kW.  ``max_off`` caps the forced-off steps (comfort
    gate); ``None`` leaves the enumeration unconstrained.
    """

    id: str
    predictor: Callable[[np.ndarray], np.ndarray]
    members: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    kind: str = "EH"
    max_off: int | None = None


@dataclass
class DayPlan:
    signals: dict  # group id -> ForceOffSignal
    predicted: np.ndarray  # total profile, kW
    group_profiles: dict  # group id -> predicted kW under the chosen signal
    group_baselines: dict  # group id -> predicted kW under the zero signal
    energy_cost: float
    peak_cost: float

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.peak_cost

    def to_dict(self) -> dict:
        return {
            "signals": {k: list(v.bits) for k, v in self.signals.items()},
            "predicted": self.predicted.tolist(),
            "energy_cost": self.energy_cost,
            "peak_cost": self.peak_cost,
            "total_cost": self.total_cost,
        }


def lexicographic_argmin(costs: np.ndarray, bits: np.ndarray) -> int:
    """Index of the minimum cost; ties go to the lexicographically smallest signal."""
    costs = np.asarray(costs)
    best = np.flatnonzero(costs == costs.min())
    if len(best) == 1:
        return int(best[0])
    keys = bits[best]
    # lexsort sorts by the last key first
    order = np.lexsort(keys.T[::-1])
    return int(best[order[0]])


def _as_set(signals) -> SignalSet:
    return signals if isinstance(signals, SignalSet) else SignalSet(np.asarray(signals))


def optimize_group(total_forecast, group: Group, signals, tariff: Tariff, cost_fn=None):
    """Exact minimiser of ``cost(total - y_f(s0) + y_f(s))`` over ``signals``.

    Returns ``(signal, cost, y_f(signal), y_f(s0))``.  ``cost_fn`` replaces
    :func:`day_ahead_cost` (it must accept ``(K, 96)`` profiles).
    """
    sig = _as_set(signals)
    if group.max_off is not None:
        sig = filter_by_off_budget(sig, group.max_off)
    if len(sig) == 0:
        raise ValueError("no admissible signal")
    zero = np.zeros((1, sig.horizon), dtype=np.int8)
    base = np.asarray(group.predictor(zero), dtype=float)[0]
    y_f = np.asarray(group.predictor(sig.bits), dtype=float)
    profiles = np.asarray(total_forecast, dtype=float) - base + y_f
    cost_fn = cost_fn or (lambda y: day_ahead_cost(y, tariff))
    costs = cost_fn(profiles)
    k = lexicographic_argmin(costs, sig.bits)
    return sig[k], float(costs[k]), y_f[k], base


def optimize_sequential(groups: list, total_forecast, signals, tariff: Tariff) -> DayPlan:
    """Fix groups one at a time, each against the profile left by its predecessors."""
    if not groups:
        raise ValueError("at least one group is required")
    current = np.asarray(total_forecast, dtype=float).copy()
    chosen, prof, bases = {}, {}, {}
    for g in groups:
        s, _, y_s, y_0 = optimize_group(current, g, signals, tariff)
        current = current - y_0 + y_s
        chosen[g.id], prof[g.id], bases[g.id] = s, y_s, y_0
    energy, peak = cost_terms(current, tariff)
    return DayPlan(chosen, current, prof, bases, float(energy), float(peak))


# --------------------------------------------------------------------------- comfort gating


@dataclass(frozen=True)
class EnergySignature:
    """``e(T, I) = max(0, base + slope * min(T - T_b, 0) + c_irr * I)`` in kWh/day."""

    base: float
    slope: float
    breakpoint: float
    c_irr: float = 0.0

    def __call__(self, T_d, I_d=0.0):
        T_d = np.asarray(T_d, dtype=float)
        e = self.base + self.slope * np.minimum(T_d - self.breakpoint, 0.0) + self.c_irr * np.asarray(I_d, float)
        return np.maximum(e, 0.0)

    @property
    def intercept(self) -> float:
        """Energy at 0 degC extrapolated along the heating branch (no irradiance)."""
        return self.base - self.slope * self.breakpoint


def _lsq(T, I, e, T_b, use_irr):
    cols = [np.ones_like(T), np.minimum(T - T_b, 0.0)]
    if use_irr:
        cols.append(I)
    A = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(A, e, rcond=None)
    return coef, float(((A @ coef - e) ** 2).sum())


def fit_energy_signature(daily_energy, T_d, I_d, min_days: int = 30, n_grid: int = 41) -> EnergySignature:
    """Piecewise-linear least-squares signature with a grid-searched, then refined, breakpoint.

    An irradiance column without spread is dropped (its coefficient is 0).
    """
    e = np.asarray(daily_energy, dtype=float)
    T = np.asarray(T_d, dtype=float)
    I = np.broadcast_to(np.asarray(I_d, dtype=float), T.shape)
    if len(e) < min_days or len(T) != len(e):
        raise ValueError(f"need at least {min_days} aligned daily observations")
    if np.ptp(T) <= 0:
        raise ValueError("rank-deficient design: daily temperature has no spread")
    use_irr = np.ptp(I) > 0
    lo, hi = np.quantile(T, 0.05), T.max()
    grid = np.linspace(lo, hi, n_grid)
    sse = [_lsq(T, I, e, b, use_irr)[1] for b in grid]
    i = int(np.argmin(sse))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    if b > a:
        res = minimize_scalar(lambda x: _lsq(T, I, e, x, use_irr)[1], bounds=(a, b), method="bounded",
                              options={"xatol": 1e-8})
        T_b = float(res.x) if res.fun <= sse[i] else float(grid[i])
    else:
        T_b = float(grid[i])
    coef, _ = _lsq(T, I, e, T_b, use_irr)
    slope = min(float(coef[1]), 0.0)
    if slope != coef[1]:
        # a rising branch is unphysical for heating; refit as a constant
        T_b, slope = float(hi), 0.0
        coef, _ = _lsq(T, I, e, T_b, use_irr)
    return EnergySignature(float(coef[0]), float(slope), T_b, float(coef[2]) if use_irr else 0.0)


def activation_hours(sig: EnergySignature, T_d, I_d, p_nom: float):
    """Hours at nominal power needed to cover the day's energy, within [0, 24]."""
    if p_nom <= 0:
        raise ValueError("p_nom must be positive")
    h = np.clip(sig(T_d, I_d) / p_nom, 0.0, 24.0)
    return float(h) if np.ndim(h) == 0 else h


def off_budget(h_max: float) -> int:
    """Forced-off steps left once ``h_max`` hours of operation are reserved."""
    return max(0, H - int(np.ceil(4.0 * h_max - 1e-9)))


def comfort_budget(signatures: list, p_nom, T_d: float, I_d: float) -> int:
    """Largest admissible off-step count for a group: ``96 - ceil(4 * h_max)``."""
    if not signatures:
        raise ValueError("missing energy signatures")
    p_nom = np.broadcast_to(np.asarray(p_nom, dtype=float), (len(signatures),))
    h = [activation_hours(s, T_d, I_d, p) for s, p in zip(signatures, p_nom)]
    return off_budget(max(h))
