"""Household heating plants and their 15-minute time step.

A :class:`BuildingPlant` holds one or more households stacked along the
first axis of every array, so a whole fleet can be advanced with one call.
Heat-pump (HP) households have a zone, a floor serpentine, a space-heating
buffer and a DHW tank; electric water heater (EH) households only have the
DHW tank, their space heating is outside the model.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from .control import (
    HEATING,
    COOLING,
    SupplyCurve,
    hysteresis_cool,
    hysteresis_cool_tank,
    hysteresis_heat,
    hysteresis_heat_two_sensor,
    valve_supply_temp,
    working_mode,
)
from .dhw import DrawProfile
from .floor import Serpentine, serpentine_step
from .tank import Tank, tank_step
from .weather import STEPS_PER_DAY, Weather

HP, EH = "HP", "EH"
DT = 900.0
MA_WINDOW = 7 * STEPS_PER_DAY


@dataclass
class Envelope:
    """Single-node zone: ``C dT_z/dt = (T_ext - T_z)/R + Q``."""

    R: np.ndarray
    C: np.ndarray
    T_z: np.ndarray
    T_min_hy: float = 20.0
    T_max_hy: float = 25.0
    delta_T_hy: float = 1.0

    def __post_init__(self):
        self.R = np.atleast_1d(np.asarray(self.R, dtype=float))
        self.C = np.atleast_1d(np.asarray(self.C, dtype=float))
        self.T_z = np.broadcast_to(np.asarray(self.T_z, dtype=float), self.R.shape).copy()
        if np.any(self.R <= 0) or np.any(self.C <= 0):
            raise ValueError("R and C must be positive")
        if not self.T_min_hy < self.T_max_hy:
            raise ValueError("T_min_hy must be below T_max_hy")
        if self.delta_T_hy <= 0:
            raise ValueError("delta_T_hy must be positive")


@dataclass
class HeatDevice:
    """Heat pumps and/or resistive heaters; ``is_hp`` selects the COP model per row."""

    is_hp: np.ndarray
    q_nom_th: np.ndarray
    eta_carnot: float = 0.45
    cop_min: float = 1.5
    cop_max: float = 6.0

    def __post_init__(self):
        self.is_hp = np.atleast_1d(np.asarray(self.is_hp, dtype=bool))
        self.q_nom_th = np.broadcast_to(np.asarray(self.q_nom_th, dtype=float), self.is_hp.shape).copy()
        if np.any(self.q_nom_th <= 0):
            raise ValueError("nominal thermal power must be positive")

    @property
    def kind(self) -> np.ndarray:
        return np.where(self.is_hp, HP, EH)

    @property
    def serves_space(self) -> np.ndarray:
        return self.is_hp

    @property
    def serves_dhw(self) -> np.ndarray:
        return np.ones_like(self.is_hp)

    def cop_heating(self, T_sup, T_ext):
        return np.where(self.is_hp, carnot_cop(T_sup, T_ext, self.eta_carnot, self.cop_min, self.cop_max), 1.0)

    def cop_cooling(self, T_sup, T_ext):
        lift = np.maximum(np.asarray(T_ext, dtype=float) - T_sup, 1e-3)
        eer = np.clip(self.eta_carnot * (T_sup + 273.15) / lift, self.cop_min, self.cop_max)
        return np.where(self.is_hp, eer, 1.0)


def carnot_cop(T_sup, T_ext, eta=0.45, cop_min=1.5, cop_max=6.0):
    """Carnot-fraction COP clamped to ``[cop_min, cop_max]``."""
    lift = np.maximum(np.asarray(T_sup, dtype=float) - T_ext, 1e-3)
    return np.clip(eta * (np.asarray(T_sup, dtype=float) + 273.15) / lift, cop_min, cop_max)


@dataclass
class ControlSettings:
    T_min_ma: float = 16.0
    T_max_ma: float = 22.0
    dhw_set: float = 55.0
    dhw_band: float = 10.0
    dhw_condenser_lift: float = 5.0
    buffer_margin: float = 3.0
    buffer_band: float = 4.0
    T_min_c: float = 14.0
    T_max_c: float = 18.0
    cool_band: float = 2.0
    heating_curve: SupplyCurve = field(default_factory=SupplyCurve)
    cooling_curve: SupplyCurve = field(default_factory=lambda: SupplyCurve(25.0, 35.0, 20.0, 16.0))
    T_mains: float = 12.0
    T_tank_room: float = 20.0
    solar_aperture: float = 0.0  # m2 of effective glazing; 0 disables solar gains


@dataclass
class ControllerState:
    """Relay states plus the trailing outdoor temperature window."""

    wm: np.ndarray
    s_hy_space: np.ndarray
    s_hy_tank: np.ndarray
    s_hy_dhw: np.ndarray
    history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def initial(cls, n: int, T_history=None):
        z = np.zeros(n, dtype=np.int8)
        hist = np.zeros(0) if T_history is None else np.asarray(T_history, dtype=float)[-MA_WINDOW:]
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), hist.copy())

    @property
    def T_ma(self) -> float:
        return float(self.history.mean()) if self.history.size else np.nan

    def push(self, T_ext: float):
        h = np.append(self.history, T_ext)
        self.history = h[-MA_WINDOW:]


@dataclass
class BuildingPlant:
    """One or more households advanced in lock-step."""

    envelope: Envelope
    serpentine: Serpentine
    dhw: Tank
    buffer: Tank
    device: HeatDevice
    state: ControllerState
    settings: ControlSettings = field(default_factory=ControlSettings)

    def __post_init__(self):
        n = self.n
        for name, arr in (("envelope", self.envelope.R), ("dhw", self.dhw.T), ("buffer", self.buffer.T),
                          ("state", self.state.wm)):
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, expected {n}")

    @property
    def n(self) -> int:
        return len(self.device.is_hp)

    @property
    def is_hp(self) -> np.ndarray:
        return self.device.is_hp

    def copy(self) -> "BuildingPlant":
        return copy.deepcopy(self)

    def select(self, rows) -> "BuildingPlant":
        """Sub-batch of the given households (copies)."""
        rows = np.asarray(rows)
        sub = lambda a: np.asarray(a)[rows] if np.ndim(a) else a  # noqa: E731
        env = replace(self.envelope, R=self.envelope.R[rows], C=self.envelope.C[rows], T_z=self.envelope.T_z[rows])
        serp = replace(self.serpentine, **{k: sub(getattr(self.serpentine, k))
                                           for k in ("L", "m_dot", "w", "h_in", "h_u_eq", "R_u", "R_g", "T_g")})

        def tank(t: Tank) -> Tank:
            return Tank(t.T[rows], t.C_layer[rows], t.u_amb[rows], t.k_buo[rows], t.heated_layers,
                        t.sensor_up, t.sensor_low, t.k_cond[rows])

        dev = replace(self.device, is_hp=self.device.is_hp[rows], q_nom_th=self.device.q_nom_th[rows])
        st = ControllerState(self.state.wm[rows], self.state.s_hy_space[rows], self.state.s_hy_tank[rows],
                             self.state.s_hy_dhw[rows], self.state.history.copy())
        return BuildingPlant(env, serp, tank(self.dhw), tank(self.buffer), dev, st, self.settings)


def building_step(plant: BuildingPlant, weather, dhw_draw, force_off, dt: float = DT):
    """Advance all households by one step; returns ``(plant, P_el)`` with ``P_el`` in W.

    ``weather`` is ``(T_ext, GHI)`` for this step.  ``force_off`` (scalar or
    per household) blocks the compressor / resistor only: relays keep
    tracking demand and circulation and envelope dynamics continue.  The
    plant is updated in place and returned.
    """
    T_ext, ghi = float(weather[0]), float(weather[1])
    cfg = plant.settings
    st = plant.state
    env = plant.envelope
    dev = plant.device
    is_hp = dev.is_hp
    n = plant.n
    blocked = np.broadcast_to(np.asarray(force_off, dtype=bool), (n,))
    draw = np.broadcast_to(np.asarray(dhw_draw, dtype=float), (n,))

    st.push(T_ext)
    wm = working_mode(st.T_ma, cfg.T_min_ma, cfg.T_max_ma)
    heat = is_hp & (wm == HEATING)
    cool = is_hp & (wm == COOLING)

    # zone relay drives the circulation pump
    s_space = np.where(
        heat,
        hysteresis_heat(env.T_z, env.T_min_hy, env.delta_T_hy, (st.s_hy_space == 1) & heat),
        np.where(cool, hysteresis_cool(env.T_z, env.T_max_hy, env.delta_T_hy, (st.s_hy_space == 1) & cool), 0),
    ).astype(np.int8)

    T_sup_heat = valve_supply_temp(T_ext, cfg.heating_curve)
    T_sup_cool = valve_supply_temp(T_ext, cfg.cooling_curve)
    buf_set = T_sup_heat + cfg.buffer_margin
    buf = plant.buffer
    s_tank = np.where(
        heat,
        hysteresis_heat(buf.T_up, buf_set, cfg.buffer_band, (st.s_hy_tank == 1) & heat),
        np.where(cool, hysteresis_cool_tank(buf.T_up, buf.T_low, cfg.T_min_c, cfg.T_max_c, cfg.cool_band,
                                            np.where(cool, st.s_hy_tank, 0)), 0),
    ).astype(np.int8)

    dhw = plant.dhw
    s_dhw = hysteresis_heat_two_sensor(dhw.T_up, dhw.T_low, cfg.dhw_set, cfg.dhw_band, st.s_hy_dhw == 1)
    s_dhw = np.asarray(s_dhw, dtype=np.int8)

    # dispatch: DHW first, then the space buffer; force-off blocks both
    run_dhw = (s_dhw == 1) & ~blocked
    free = is_hp & ~run_dhw & ~blocked
    run_heat = free & (s_tank == 1)
    run_cool = free & (s_tank == -1)
    q_dhw = np.where(run_dhw, dev.q_nom_th, 0.0)
    q_buf = np.where(run_heat, dev.q_nom_th, np.where(run_cool, -dev.q_nom_th, 0.0))
    P_el = np.zeros(n)
    if run_dhw.any():
        P_el += q_dhw / dev.cop_heating(cfg.dhw_set + cfg.dhw_condenser_lift, T_ext)
    if run_heat.any():
        P_el += np.where(run_heat, q_buf / dev.cop_heating(buf_set, T_ext), 0.0)
    if run_cool.any():
        P_el += np.where(run_cool, -q_buf / dev.cop_cooling(T_sup_cool, T_ext), 0.0)

    Q_up = np.zeros(n)
    if is_hp.any():
        pump = s_space != 0
        T_top = buf.T_top
        T_0 = np.where(heat, np.minimum(T_top, T_sup_heat), np.maximum(T_top, T_sup_cool))
        T_L, q = serpentine_step(T_0, env.T_z, plant.serpentine)
        Q_up = np.where(pump, q, 0.0)
        # 3-way valve: only part of the loop flow is taken from the buffer
        gap = T_top - T_L
        safe = np.where(np.abs(gap) > 1e-9, gap, 1.0)
        frac = np.where(np.abs(gap) > 1e-9, np.clip((T_0 - T_L) / safe, 0.0, 1.0), 1.0)
        m_tank = np.where(pump, plant.serpentine.m_dot * frac, 0.0)
        plant.buffer = tank_step(buf, m_tank, np.where(pump, T_L, T_top), q_buf, cfg.T_tank_room, dt)
        gains = Q_up + cfg.solar_aperture * ghi
        env.T_z = np.where(is_hp, env.T_z + dt / env.C * ((T_ext - env.T_z) / env.R + gains), env.T_z)

    plant.dhw = tank_step(dhw, draw, cfg.T_mains, q_dhw, cfg.T_tank_room, dt)

    st.wm = np.full(n, wm, dtype=np.int8)
    st.s_hy_space = s_space
    st.s_hy_tank = s_tank
    st.s_hy_dhw = s_dhw
    return plant, P_el


@dataclass
class SimulationResult:
    P_el: np.ndarray  # (n_households, n_steps) W
    T_z: np.ndarray | None = None
    T_dhw_up: np.ndarray | None = None


def simulate(plant: BuildingPlant, weather: Weather, draws: DrawProfile, force_off=None,
             start_day: int = 0, n_days: int | None = None, record_states: bool = False) -> SimulationResult:
    """Run ``plant`` over whole days of ``weather``.

    ``force_off`` is either ``None``, an array ``(n_days, 96)`` shared by all
    households, or ``(n_households, n_days, 96)``.  Draw profiles are indexed
    by absolute day so split runs reproduce a continuous one.
    """
    if n_days is None:
        n_days = weather.n_days - start_day
    n_steps = n_days * STEPS_PER_DAY
    if (start_day + n_days) * STEPS_PER_DAY > len(weather):
        raise ValueError("weather does not cover the requested days")
    if force_off is None:
        force_off = np.zeros((n_days, STEPS_PER_DAY), dtype=np.uint8)
    force_off = np.asarray(force_off)
    per_house = force_off.ndim == 3
    P = np.zeros((plant.n, n_steps))
    Tz = np.zeros((plant.n, n_steps)) if record_states else None
    Tw = np.zeros((plant.n, n_steps)) if record_states else None
    off0 = start_day * STEPS_PER_DAY
    for d in range(n_days):
        draw_day = draws.day(start_day + d)
        for k in range(STEPS_PER_DAY):
            t = d * STEPS_PER_DAY + k
            s = force_off[:, d, k] if per_house else force_off[d, k]
            plant, P[:, t] = building_step(
                plant, (weather.T_ext[off0 + t], weather.ghi[off0 + t]), draw_day[:, k], s
            )
            if record_states:
                Tz[:, t] = plant.envelope.T_z
                Tw[:, t] = plant.dhw.T_up
    return SimulationResult(P, Tz, Tw)
