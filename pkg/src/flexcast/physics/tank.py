"""Stratified hot-water tank with buoyancy, conduction, losses and through-flow.

Layers are stored bottom first (row index 0 is the bottom layer).  Water
enters the bottom layer at the inlet temperature and leaves from the top.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .floor import CP_WATER

RHO_WATER = 1000.0  # kg/m3
# explicit Euler is stable for dt * (sum of conductances) / C <= 1; keep margin
STABILITY = 0.5


@dataclass
class Tank:
    """A batch of tanks sharing layer count and heater/sensor placement.

    ``T`` has shape ``(n_tanks, N)``; per-tank coefficients have shape
    ``(n_tanks,)``.  Sensor indices and ``heated_layers`` are zero-based.
    ``k_cond`` defaults to ``u_amb``.
    """

    T: np.ndarray
    C_layer: np.ndarray
    u_amb: np.ndarray
    k_buo: np.ndarray
    heated_layers: tuple = (0, 1)
    sensor_up: int = 7
    sensor_low: int = 2
    k_cond: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.T = np.atleast_2d(np.asarray(self.T, dtype=float))
        n, N = self.T.shape
        if N < 2:
            raise ValueError("a tank needs at least two layers")
        self.C_layer = np.broadcast_to(np.asarray(self.C_layer, dtype=float), (n,)).copy()
        self.u_amb = np.broadcast_to(np.asarray(self.u_amb, dtype=float), (n,)).copy()
        self.k_buo = np.broadcast_to(np.asarray(self.k_buo, dtype=float), (n,)).copy()
        if self.k_cond is None:
            self.k_cond = self.u_amb.copy()
        else:
            self.k_cond = np.broadcast_to(np.asarray(self.k_cond, dtype=float), (n,)).copy()
        if np.any(self.C_layer <= 0):
            raise ValueError("layer capacity must be positive")
        if np.any(self.u_amb < 0) or np.any(self.k_buo < 0) or np.any(self.k_cond < 0):
            raise ValueError("tank coefficients must be non-negative")
        self.heated_layers = tuple(int(i) for i in self.heated_layers)
        if not self.heated_layers or any(i < 0 or i >= N for i in self.heated_layers):
            raise ValueError("heated layers must lie inside the tank")
        if not (0 <= self.sensor_low < N and 0 <= self.sensor_up < N):
            raise ValueError("sensor index outside the tank")

    @classmethod
    def uniform(cls, n: int, N: int, volume, T0, u_amb_total, buoyancy_tau: float = 120.0, **kw):
        """Tanks of ``volume`` m3 at temperature ``T0``; losses spread evenly over layers.

        ``buoyancy_tau`` is the mixing time constant (s) of an unstable layer pair.
        """
        volume = np.broadcast_to(np.asarray(volume, dtype=float), (n,))
        C_layer = RHO_WATER * volume * CP_WATER / N
        T = np.broadcast_to(np.asarray(T0, dtype=float)[..., None], (n, N)).copy()
        u_amb = np.broadcast_to(np.asarray(u_amb_total, dtype=float), (n,)) / N
        k_buo = C_layer / (N * buoyancy_tau)
        return cls(T=T, C_layer=C_layer, u_amb=u_amb, k_buo=k_buo, **kw)

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def N(self) -> int:
        return self.T.shape[1]

    @property
    def T_up(self) -> np.ndarray:
        return self.T[:, self.sensor_up]

    @property
    def T_low(self) -> np.ndarray:
        return self.T[:, self.sensor_low]

    @property
    def T_top(self) -> np.ndarray:
        return self.T[:, -1]

    def energy(self) -> np.ndarray:
        """Stored heat relative to 0 degC, J."""
        return self.C_layer * self.T.sum(axis=1)

    def copy(self) -> "Tank":
        return Tank(self.T.copy(), self.C_layer, self.u_amb, self.k_buo, self.heated_layers,
                    self.sensor_up, self.sensor_low, self.k_cond)


def tank_step(tank: Tank, m_dot_draw, T_inlet, Q_h_total, T_amb, dt: float, fluxes: bool = False):
    """Advance every tank in the batch by ``dt`` seconds (explicit Euler, sub-stepped).

    Returns a new :class:`Tank`.  With ``fluxes=True`` also returns the heat
    integrated over the step, in J per tank, as a dict with keys ``heater``,
    ``loss`` and ``enthalpy``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    n, N = tank.T.shape
    m_dot = np.broadcast_to(np.asarray(m_dot_draw, dtype=float), (n,))
    if np.any(m_dot < 0):
        raise ValueError("draw flow must be non-negative")
    heated = np.zeros(N, dtype=np.bool_)
    heated[list(tank.heated_layers)] = True
    T_new = tank.T.copy()
    acc = np.zeros((n, 3))
    _advance(
        T_new,
        tank.C_layer,
        tank.u_amb,
        tank.k_buo,
        tank.k_cond,
        heated,
        np.ascontiguousarray(m_dot),
        np.ascontiguousarray(np.broadcast_to(np.asarray(T_inlet, dtype=float), (n,))),
        np.ascontiguousarray(np.broadcast_to(np.asarray(Q_h_total, dtype=float), (n,))),
        np.ascontiguousarray(np.broadcast_to(np.asarray(T_amb, dtype=float), (n,))),
        float(dt),
        acc,
    )
    out = Tank(T_new, tank.C_layer, tank.u_amb, tank.k_buo, tank.heated_layers,
               tank.sensor_up, tank.sensor_low, tank.k_cond)
    if fluxes:
        return out, {"heater": acc[:, 0], "loss": acc[:, 1], "enthalpy": acc[:, 2]}
    return out


@numba.njit(cache=True)
def _advance(T, C, u_amb, k_buo, k_cond, heated, m_dot, T_in, Q_tot, T_amb, dt, acc):
    n, N = T.shape
    n_heated = 0
    for i in range(N):
        if heated[i]:
            n_heated += 1
    dT = np.empty(N)
    for p in range(n):
        if dt == 0.0:
            continue
        flow = CP_WATER * m_dot[p]
        # worst-case outgoing conductance of a layer bounds the stable sub-step
        g = flow + 2.0 * k_buo[p] * N + 2.0 * k_cond[p] + u_amb[p]
        n_sub = 1
        if g > 0.0:
            n_sub = max(1, int(np.ceil(dt * g / (STABILITY * C[p]))))
        h = dt / n_sub
        q_layer = Q_tot[p] / n_heated
        kb = k_buo[p] * N
        for _ in range(n_sub):
            for i in range(N):
                Ti = T[p, i]
                q = u_amb[p] * (T_amb[p] - Ti)
                acc[p, 1] += q * h
                if heated[i]:
                    q += q_layer
                # buoyancy moves heat upward across an inverted layer pair
                if i > 0:
                    below = T[p, i - 1]
                    if below > Ti:
                        q += kb * (below - Ti)
                    q += k_cond[p] * (below - Ti)
                    q += flow * (below - Ti)
                else:
                    q += flow * (T_in[p] - Ti)
                if i < N - 1:
                    above = T[p, i + 1]
                    if Ti > above:
                        q -= kb * (Ti - above)
                    q += k_cond[p] * (above - Ti)
                dT[i] = q * h / C[p]
            acc[p, 0] += Q_tot[p] * h
            acc[p, 2] += flow * (T_in[p] - T[p, N - 1]) * h
            for i in range(N):
                T[p, i] += dT[i]
