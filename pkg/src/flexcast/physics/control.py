"""Rule-based controller pieces: working mode, hysteresis relays, mixing valve.

Every function accepts scalars or numpy arrays and broadcasts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COOLING, IDLE, HEATING = -1, 0, 1


def working_mode(T_ma, T_min_ma: float, T_max_ma: float):
    """-1 (cool) above ``T_max_ma``, +1 (heat) below ``T_min_ma``, else 0."""
    if not T_min_ma < T_max_ma:
        raise ValueError("T_min_ma must be below T_max_ma")
    T_ma = np.asarray(T_ma, dtype=float)
    wm = np.where(T_ma > T_max_ma, COOLING, np.where(T_ma < T_min_ma, HEATING, IDLE))
    return wm.astype(np.int8) if wm.ndim else int(wm)


def hysteresis_heat(T, T_set, dT, prev):
    """Heating relay: on below ``T_set - dT/2``, stays on until ``T_set + dT/2``."""
    if np.any(np.asarray(dT) <= 0):
        raise ValueError("dT must be positive")
    T = np.asarray(T, dtype=float)
    prev = np.asarray(prev).astype(bool)
    on = (T < T_set - dT / 2) | ((T < T_set + dT / 2) & prev)
    return on.astype(np.int8) if on.ndim else int(on)


def hysteresis_cool(T, T_set, dT, prev):
    """Cooling relay, mirror image of :func:`hysteresis_heat` around ``T_set``."""
    if np.any(np.asarray(dT) <= 0):
        raise ValueError("dT must be positive")
    T = np.asarray(T, dtype=float)
    prev = np.asarray(prev).astype(bool)
    on = (T > T_set + dT / 2) | ((T > T_set - dT / 2) & prev)
    return on.astype(np.int8) if on.ndim else int(on)


def hysteresis_heat_two_sensor(T_up, T_low, T_set, dT, prev):
    """Tank charging relay driven by two sensors.

    Charging starts when the upper sensor drops below ``T_set - dT/2`` and
    continues while the lower sensor is still below ``T_set + dT/2``.
    """
    if np.any(np.asarray(dT) <= 0):
        raise ValueError("dT must be positive")
    T_up = np.asarray(T_up, dtype=float)
    T_low = np.asarray(T_low, dtype=float)
    prev = np.asarray(prev).astype(bool)
    on = (T_up < T_set - dT / 2) | ((T_low < T_set + dT / 2) & prev)
    return on.astype(np.int8) if on.ndim else int(on)


def hysteresis_cool_tank(T_up, T_low, T_min_c, T_max_c, dT, prev):
    """Cold-buffer relay in cooling mode; returns -1 (chill), 0 (idle) or ``prev``."""
    if not np.all(np.asarray(T_min_c) < np.asarray(T_max_c)):
        raise ValueError("T_min_c must be below T_max_c")
    T_up = np.asarray(T_up, dtype=float)
    T_low = np.asarray(T_low, dtype=float)
    prev = np.asarray(prev)
    chill = (T_up > T_max_c + dT / 2) | (T_low > T_max_c + dT / 2)
    idle = (T_low < T_min_c) | (T_up < T_max_c - dT / 2)
    out = np.where(chill, -1, np.where(idle, 0, prev))
    return out.astype(np.int8) if out.ndim else int(out)


@dataclass(frozen=True)
class SupplyCurve:
    """Outdoor-reset curve of the 3-way valve (supply setpoint vs outdoor temperature)."""

    T_ext_lo: float = -4.0
    T_ext_hi: float = 20.0
    T_sup_hi: float = 45.0
    T_sup_lo: float = 40.0

    def __post_init__(self):
        if not self.T_ext_lo < self.T_ext_hi:
            raise ValueError("T_ext_lo must be below T_ext_hi")


def valve_supply_temp(T_ext, curve: SupplyCurve = SupplyCurve()):
    """Linear supply setpoint between the curve endpoints, clamped outside them."""
    frac = (np.asarray(T_ext, dtype=float) - curve.T_ext_lo) / (curve.T_ext_hi - curve.T_ext_lo)
    frac = np.clip(frac, 0.0, 1.0)
    out = curve.T_sup_hi + frac * (curve.T_sup_lo - curve.T_sup_hi)
    return out if out.ndim else float(out)
