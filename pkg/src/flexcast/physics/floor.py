"""Steady-state floor-heating serpentine and its sizing."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import SupplyCurve, valve_supply_temp

CP_WATER = 4186.0  # J/(kg K)
T_EXT_REF = -4.0
T_ZONE_REF = 20.0
DT_REF = T_ZONE_REF - T_EXT_REF
M_DOT_REF = 0.1  # kg/s
M_DOT_WEIGHT = 1e-3

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Serpentine:
    """Floor pipe loop.  Resistances are per unit pipe length (m K / W).

    The building-side path crosses the pipe film, the floor screed (``R_u``)
    and the floor-to-room film; the ground-side path crosses the pipe film
    and the slab insulation (``R_g``).  Fields may be numpy arrays.
    """

    L: float = 300.0
    m_dot: float = 0.1
    w: float = 0.02
    h_in: float = 2000.0
    h_u_eq: float = 50.0
    R_u: float = 0.3
    R_g: float = 10.0
    T_g: float = 10.0

    @property
    def R_up(self):
        return 1.0 / (self.h_in * self.w) + 1.0 / (self.h_u_eq * self.w) + self.R_u

    @property
    def R_down(self):
        return 1.0 / (self.h_in * self.w) + self.R_g

    @property
    def rho_star(self):
        return (self.R_up + self.R_down) / (self.R_up * self.R_down)

    def asymptotic_temp(self, T_z):
        return (self.R_down * T_z + self.R_up * self.T_g) / (self.R_down + self.R_up)


def serpentine_step(T_0, T_z, serp: Serpentine):
    """Outlet temperature and heat delivered to the room for inlet ``T_0``.

    Returns ``(T_L, Q_up)`` with ``Q_up`` in W.
    """
    m_dot = np.asarray(serp.m_dot, dtype=float)
    if np.any(m_dot <= 0):
        raise ValueError("mass flow must be positive")
    T_0 = np.asarray(T_0, dtype=float)
    T_z = np.asarray(T_z, dtype=float)
    rho = serp.rho_star
    T_a = serp.asymptotic_temp(T_z)
    span = m_dot * CP_WATER / rho
    T_L = T_a + (T_0 - T_a) * np.exp(-serp.L / span)
    Q_up = ((T_a - T_z) * serp.L - (T_L - T_0) * span) / serp.R_up
    if T_L.ndim == 0:
        return float(T_L), float(Q_up)
    return T_L, Q_up


def nominal_power(R):
    """Heat demand at reference conditions (-4 / 20 degC) for envelope resistance ``R``."""
    R = np.asarray(R, dtype=float)
    if np.any(R <= 0):
        raise ValueError("R must be positive")
    out = DT_REF / R
    return out if out.ndim else float(out)


def _golden_min(fun, lo, hi, rtol):
    """Vectorised golden-section search on ``[lo, hi]`` (arrays of equal shape)."""
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    n_iter = int(np.ceil(np.log(rtol) / np.log(_GOLDEN))) + 1
    for _ in range(n_iter):
        left = fc < fd
        # minimum in [a, d]: old c becomes new d; else in [c, b]: old d becomes new c
        a, b = np.where(left, a, c), np.where(left, d, b)
        x_new = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
        f_new = fun(x_new)
        c, d, fc, fd = (
            np.where(left, x_new, d),
            np.where(left, c, x_new),
            np.where(left, f_new, fd),
            np.where(left, fc, f_new),
        )
    return 0.5 * (a + b)


def size_serpentine(R, template: Serpentine = Serpentine(), curve: SupplyCurve = SupplyCurve(),
                    rtol: float = 1e-6):
    """Pipe length and nominal mass flow matching the reference heat demand.

    Minimises ``(Q_up(L, m) - Q_nom)^2 + 1e-3 (m - 0.1)^2`` with ``L`` in
    [1, 1e4] m and ``m`` in [1e-3, 5] kg/s.  For a fixed flow, ``Q_up`` rises
    with ``L`` up to a maximum and then falls (a long pipe cools below the
    floor's asymptotic temperature), so the inner problem takes the shortest
    length hitting ``Q_nom`` (bisection below the maximiser) or the
    maximiser itself when ``Q_nom`` is out of reach.  The outer problem over
    ``m`` is a golden-section search.  ``R`` may be an array; returns
    ``(L, m_dot)`` of matching shape.
    """
    R_arr = np.atleast_1d(np.asarray(R, dtype=float))
    q_nom = nominal_power(R_arr)
    T_0 = valve_supply_temp(T_EXT_REF, curve)
    lo_L, hi_L = np.zeros_like(R_arr), np.full_like(R_arr, np.log(1e4))

    def q_up(L, m):
        s = replace(template, L=L, m_dot=m)
        return serpentine_step(np.full_like(L, T_0), np.full_like(L, T_ZONE_REF), s)[1]

    def best_length(m):
        x_peak = _golden_min(lambda x: -q_up(np.exp(x), m), lo_L, hi_L, rtol * 1e-2)
        reachable = q_up(np.exp(x_peak), m) >= q_nom
        a, b = lo_L.copy(), x_peak.copy()
        for _ in range(80):
            mid = 0.5 * (a + b)
            below = q_up(np.exp(mid), m) < q_nom
            a, b = np.where(below, mid, a), np.where(below, b, mid)
        return np.exp(np.where(reachable, 0.5 * (a + b), x_peak))

    def objective(m):
        L = best_length(m)
        return (q_up(L, m) - q_nom) ** 2 + M_DOT_WEIGHT * (m - M_DOT_REF) ** 2

    m = _golden_min(objective, np.full_like(R_arr, 1e-3), np.full_like(R_arr, 5.0), rtol)
    L = best_length(m)
    rel_err = np.abs(q_up(L, m) - q_nom) / q_nom
    if np.any(rel_err > 0.5):
        raise ValueError("no serpentine length in [1, 1e4] m reaches the nominal power")
    if np.ndim(R) == 0:
        return float(L[0]), float(m[0])
    return L, m
