"""Closed-loop day-ahead operation, open-loop error tracking, rebound curves and KPIs."""
from __future__ import annotations

import copy
import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (H, HISTORY, SIGNAL_PAST, FeatureSchema, calendar_features, check_steps, default_schema,
                      feature_matrix, load_weather_features)
from .fleet import Fleet, fleet_summary
from .forecaster.boosting import BoostParams, fit_ensemble, prepare
from .forecaster.model import TreeEnsembleModel, predict_candidates
from .optimizer import (GAMMA, Group, Tariff, comfort_budget, day_ahead_cost,
                        fit_energy_signature, optimize_sequential)
from .physics.dhw import DrawProfile
from .physics.plant import BuildingPlant, simulate
from .physics.weather import Weather
from .signals import SignalSet


class RunMode(str, enum.Enum):
    SIMULATED = "simulated"  # metamodel plans, physics executes
    FORECAST = "forecast"  # physics executes, costs from the day-ahead predictions
    EMULATED = "emulated"  # metamodel plans and executes; physics is bypassed


# --------------------------------------------------------------------------- exogenous series


def synthetic_prices(index, seed: int = 0, mean: float = 0.12, amp: float = 0.04, noise: float = 0.01) -> np.ndarray:
    """Spot prices (CHF/kWh) with morning and evening peaks plus seeded noise."""
    index = _as_index(index)
    hour = index.hour.to_numpy() + index.minute.to_numpy() / 60.0
    rng = np.random.default_rng(seed)
    shape = np.exp(-0.5 * ((hour - 8.0) / 1.5) ** 2) + np.exp(-0.5 * ((hour - 19.0) / 2.0) ** 2) - 0.5
    daily = np.repeat(rng.normal(0.0, noise, len(index) // H + 1), H)[: len(index)]
    return np.clip(mean + amp * shape + daily + rng.normal(0.0, noise / 2, len(index)), 0.0, None)


def synthetic_carbon(index, seed: int = 0, mean: float = 120.0, amp: float = 30.0, noise: float = 8.0) -> np.ndarray:
    """Grid carbon intensity (gCO2/kWh): daytime dip plus seeded noise."""
    index = _as_index(index)
    hour = index.hour.to_numpy() + index.minute.to_numpy() / 60.0
    rng = np.random.default_rng(seed)
    return np.clip(mean + amp * np.cos(2 * np.pi * (hour - 1.0) / 24.0) + rng.normal(0, noise, len(index)), 0.0, None)


def synthetic_base_load(index, mean_kw: float, seed: int = 0, business_share: float = 0.5) -> np.ndarray:
    """Non-heating DSO load (kW) with mean ``mean_kw``: households plus a weekday business profile."""
    index = _as_index(index)
    hour = index.hour.to_numpy() + index.minute.to_numpy() / 60.0
    weekday = index.dayofweek.to_numpy() < 5
    rng = np.random.default_rng(seed)
    home = 0.6 + 0.5 * np.exp(-0.5 * ((hour - 7.5) / 1.2) ** 2) + 0.9 * np.exp(-0.5 * ((hour - 19.0) / 2.0) ** 2)
    office = np.where(weekday, 0.4 + 0.8 * np.clip(np.sin(np.pi * (hour - 7.0) / 11.0), 0, None), 0.4)
    shape = (1 - business_share) * home / home.mean() + business_share * office / office.mean()
    return mean_kw * shape * (1.0 + rng.normal(0.0, 0.03, len(index)))


def base_load_for_share(fleet_mean_kw: float, ctrl_fraction: float, flex_share: float) -> float:
    """Mean base load that makes controlled devices ``flex_share`` of the total energy."""
    if not 0 < flex_share < 1:
        raise ValueError("flex_share must lie in (0, 1)")
    flex = ctrl_fraction * fleet_mean_kw
    return max(0.0, flex / flex_share - fleet_mean_kw)


def _as_index(index):
    import pandas as pd

    return index.index if isinstance(index, Weather) else pd.DatetimeIndex(index)


def co2(y, C, gamma: float = GAMMA) -> float:
    """Emitted mass in tons: ``sum(C * y * gamma) / 1e6`` with ``y`` in kW and ``C`` in g/kWh."""
    y, C = np.asarray(y, dtype=float), np.asarray(C, dtype=float)
    if y.shape != C.shape:
        raise ValueError("load and carbon series are misaligned")
    return float((C * y).sum() * gamma / 1e6)


def open_loop_error(y_day, y_hat_day, floor: float = 0.01):
    """Normalised error ``(y - y_hat) / y`` and its daily mean.

    The denominator is floored at ``floor`` times the day's mean power.
    """
    y, y_hat = np.asarray(y_day, dtype=float), np.asarray(y_hat_day, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError("profiles have different shapes")
    m = abs(y.mean())
    if m == 0:
        raise ValueError("division guard: the day has zero mean power")
    err = (y - y_hat) / np.maximum(np.abs(y), floor * m) * np.sign(np.where(y == 0, 1.0, y))
    return err, float(err.mean())


# --------------------------------------------------------------------------- total-load forecaster


def load_schema() -> FeatureSchema:
    """Columns of the metamodel schema that do not involve control or pool metadata."""
    drop = ("s[", "s_mean", "meta.")
    return FeatureSchema(tuple(n for n in default_schema().names if not n.startswith(drop)))


@dataclass
class LoadForecaster:
    """Direct 96-step forecaster of an exogenous load series (no control inputs)."""

    model: TreeEnsembleModel
    scale: float

    @staticmethod
    def features(t, y, weather: Weather, scale: float) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=int))
        check_steps(t, len(weather))
        yn = np.asarray(y, dtype=float) / scale
        return np.concatenate([load_weather_features(t, yn, weather), calendar_features(t, weather)],
                              axis=1).astype(np.float32)

    @classmethod
    def fit(cls, y, weather: Weather, last_day: int, first_day: int = 0, params: BoostParams = BoostParams(),
            stride: int = 4):
        """Train on origins with full history from ``first_day`` and targets before ``last_day``."""
        y = np.asarray(y, dtype=float)
        first = first_day * H
        scale = float(np.mean(y[first:last_day * H]))
        t = np.arange(first + HISTORY, last_day * H - H, stride)
        if len(t) == 0:
            raise ValueError("not enough history to train the load forecaster")
        X = cls.features(t, y, weather, scale)
        Y = (y[t[:, None] + 1 + np.arange(H)] / scale).astype(np.float64)
        data = prepare(X, params)
        ens = [fit_ensemble(data, Y[:, h], params) for h in range(H)]
        return cls(TreeEnsembleModel(ens, load_schema(), params), scale)

    def predict(self, t: int, y, weather: Weather) -> np.ndarray:
        return self.model.predict(self.features([t], y, weather, self.scale))[0] * self.scale


# --------------------------------------------------------------------------- closed loop


@dataclass
class LoopInputs:
    """Everything the daily loop needs besides the metamodels.

    Series are indexed like ``weather``.  ``unctrl_P`` (buildings x steps, kW)
    is the uncontrolled fleet trace; zero before ``first_day`` (warm-up).  ``plant`` is
    the fleet's physical state at the first closed-loop day and is only
    touched by the physics-backed modes.
    """

    fleet: Fleet
    weather: Weather
    prices: np.ndarray
    carbon: np.ndarray
    base_load: np.ndarray
    unctrl_P: np.ndarray
    start_day: int
    first_day: int = 0
    plant: BuildingPlant | None = None
    draws: DrawProfile | None = None
    p_peak: float = 10.0

    def __post_init__(self):
        n = len(self.weather)
        for name in ("prices", "carbon", "base_load"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} does not cover the weather horizon")
        if self.unctrl_P.shape != (len(self.fleet), n):
            raise ValueError("uncontrolled trace must be buildings x weather steps")


def prepare_loop(fleet: Fleet, weather: Weather, start_day: int, warmup_days: int = 7, seed: int = 0,
                 p_peak: float = 10.0, prices=None, carbon=None, base_load=None, flex_share: float = 0.09,
                 ctrl_fraction: float = 0.66) -> LoopInputs:
    """Simulate the uncontrolled fleet once and snapshot its state at ``start_day``.

    Without an explicit ``base_load`` a synthetic one is sized so that the
    controlled devices draw ``flex_share`` of the uncontrolled total energy.
    """
    if start_day * H < HISTORY + warmup_days * H or start_day >= weather.n_days:
        raise ValueError("start day leaves too little history or no horizon")
    n = len(weather)
    w0 = warmup_days * H
    plant = fleet.build_plant(T_history=weather.T_ext[:w0])
    draws = DrawProfile(fleet.occupants, seed=fleet.seed)
    P = np.zeros((len(fleet), n))
    head = simulate(plant, weather, draws, start_day=warmup_days, n_days=start_day - warmup_days)
    snapshot = plant.copy()
    tail = simulate(plant, weather, draws, start_day=start_day, n_days=weather.n_days - start_day)
    P[:, w0:start_day * H] = head.P_el / 1000.0
    P[:, start_day * H:weather.n_days * H] = tail.P_el / 1000.0
    prices = synthetic_prices(weather.index, seed) if prices is None else np.asarray(prices, float)
    carbon = synthetic_carbon(weather.index, seed + 1) if carbon is None else np.asarray(carbon, float)
    if base_load is None:
        sim = P[:, w0:weather.n_days * H].sum(axis=0).mean()
        base = synthetic_base_load(weather.index, base_load_for_share(sim, ctrl_fraction, flex_share), seed + 2)
    else:
        base = np.asarray(base_load, dtype=float)
    return LoopInputs(fleet, weather, prices, carbon, base, P, start_day, warmup_days, snapshot, draws, p_peak)


def select_controlled(fleet: Fleet, ctrl_fraction: float, seed: int = 0) -> np.ndarray:
    """Uniform sample of ``round(ctrl_fraction * n)`` buildings per device kind."""
    if not 0.0 <= ctrl_fraction <= 1.0:
        raise ValueError("ctrl_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for idx in (fleet.hp_indices, fleet.eh_indices):
        k = int(round(ctrl_fraction * len(idx)))
        out.append(rng.choice(idx, k, replace=False) if k else np.zeros(0, dtype=int))
    return np.sort(np.concatenate(out)).astype(int)


def fit_signatures(inputs: LoopInputs, members, first_day: int, last_day: int) -> list:
    """Energy signature per building from uncontrolled daily energy on ``[first_day, last_day)``."""
    T_d, I_d = inputs.weather.daily_means()
    days = np.arange(first_day, last_day)
    out = []
    for b in members:
        e = inputs.unctrl_P[b, first_day * H:last_day * H].reshape(-1, H).sum(axis=1) * GAMMA
        out.append(fit_energy_signature(e, T_d[days], I_d[days]))
    return out


@dataclass
class ClosedLoopModels:
    """Metamodels per device kind plus the rest-load forecaster."""

    group_models: dict  # "EH" / "HP" -> metamodel
    rest: LoadForecaster
    order: tuple = ("EH", "HP")


@dataclass
class KpiReport:
    mode: str
    days: list
    energy_cost: float
    peak_cost: float
    co2_tons: float
    flex_energy_cost: float
    flex_peak_cost: float
    flex_co2_tons: float
    daily_open_loop_error: list = field(default_factory=list)
    min_T_z_margin: list = field(default_factory=list)
    comfort_ok_fraction: float = float("nan")
    signals: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return self.energy_cost + self.peak_cost

    @property
    def flex_total_cost(self) -> float:
        return self.flex_energy_cost + self.flex_peak_cost

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_cost"] = self.total_cost
        d["flex_total_cost"] = self.flex_total_cost
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "KpiReport":
        d = json.loads(Path(path).read_text())
        d.pop("total_cost", None)
        d.pop("flex_total_cost", None)
        return cls(**d)


@dataclass
class LoopTrace:
    """Per-step series of a closed-loop run (kW), for plotting and KPIs."""

    steps: np.ndarray
    total: np.ndarray
    rest: np.ndarray
    flex: np.ndarray
    predicted: np.ndarray
    months: np.ndarray
    plans: list = field(default_factory=list)  # DayPlan per day (None without controlled groups)
    no_control_cost: list = field(default_factory=list)  # predicted cost of the zero signal per day


def _monthly_peak(y: np.ndarray, months: np.ndarray) -> float:
    return float(sum(y[months == m].max() for m in np.unique(months)))


def run_horizon(mode: RunMode | str, inputs: LoopInputs, models: ClosedLoopModels, signals: SignalSet,
                days, ctrl_fraction: float = 0.66, seed: int = 0, control: bool = True,
                signatures: dict | None = None, comfort_gate: bool = True, return_trace: bool = False):
    """Day-ahead planning at every midnight of ``days``; KPIs accumulated over the run.

    Each day: forecast the rest load, build one feature row per controlled
    group from observed (or, in emulated mode, self-predicted) history,
    gate the HP signals by comfort budget, optimise EH then HP, execute.
    """
    mode = RunMode(mode)
    days = [int(d) for d in days]
    if not days or days != list(range(days[0], days[0] + len(days))):
        raise ValueError("days must be a non-empty consecutive range")
    if days[0] < inputs.start_day or days[-1] >= inputs.weather.n_days - 1:
        raise ValueError("days exceed the covered horizon")
    fleet, weather = inputs.fleet, inputs.weather
    n = len(weather)
    ctrl = select_controlled(fleet, ctrl_fraction, seed)
    members = {"HP": ctrl[fleet.is_hp[ctrl]], "EH": ctrl[~fleet.is_hp[ctrl]]}
    active = [k for k in models.order if len(members[k])]
    uncontrolled = np.setdiff1d(np.arange(len(fleet)), ctrl)
    rest = inputs.base_load + inputs.unctrl_P[uncontrolled].sum(axis=0)

    # per-group observed history and signal tracks
    y_grp = {k: inputs.unctrl_P[members[k]].sum(axis=0).copy() for k in active}
    s_grp = {k: np.zeros(n + H) for k in active}
    meta = {k: fleet_summary(fleet, members[k]) for k in active}
    scale = {k: meta[k].p_nom_sum for k in active}
    if comfort_gate and "HP" in active and signatures is None:
        first = max(inputs.first_day, inputs.start_day - 60)
        signatures = {"HP": fit_signatures(inputs, members["HP"], first, inputs.start_day)}

    plant = None
    if mode != RunMode.EMULATED and active:
        plant = inputs.plant.select(ctrl) if inputs.plant is not None else None
        if plant is None:
            raise ValueError("physics-backed modes need the plant snapshot")
        plant = copy.deepcopy(plant)
        draws = inputs.draws.select(ctrl)
    row_of = {b: i for i, b in enumerate(ctrl)}
    T_d, I_d = weather.daily_means()

    steps = np.arange(days[0] * H, (days[-1] + 1) * H)
    total = np.zeros(len(steps))
    flex = np.zeros(len(steps))
    predicted = np.zeros(len(steps))
    rest_used = np.zeros(len(steps))
    months = weather.index[steps].month.to_numpy() + 12 * weather.index[steps].year.to_numpy()
    errors, margins, chosen = [], [], {k: [] for k in active}
    plans, no_control = [], []
    comfort_ok = comfort_n = 0
    y_max = 0.0
    for j, d in enumerate(days):
        t = d * H - 1
        sl = slice(j * H, (j + 1) * H)
        if j and months[j * H] != months[j * H - 1]:
            y_max = 0.0
        tariff = Tariff(inputs.prices[d * H:(d + 1) * H], inputs.p_peak, GAMMA, y_max)
        rest_hat = models.rest.predict(t, rest, weather)
        groups, xs = [], {}
        for k in active:
            xs[k] = feature_matrix(np.array([t]), y_grp[k], s_grp[k], weather, meta[k], scale[k])[0]
            max_off = None
            if k == "HP" and comfort_gate:
                max_off = comfort_budget(signatures["HP"], fleet.p_nom_el[members["HP"]], T_d[d], I_d[d])
            model = models.group_models[k]
            groups.append(Group(k, (lambda bits, m=model, x=xs[k], c=scale[k]: c * predict_candidates(m, x, bits)),
                                members[k], k, max_off if control else 0))
        if groups:
            base_total = rest_hat + sum(
                scale[k] * predict_candidates(models.group_models[k], xs[k], np.zeros((1, H)))[0] for k in active)
            plan = optimize_sequential(groups, base_total, signals, tariff)
            no_control.append(float(day_ahead_cost(base_total, tariff)))
            pred_flex = sum(plan.group_profiles[k] for k in active)
            pred_total = plan.predicted
        else:
            plan, pred_flex, pred_total = None, np.zeros(H), rest_hat
            no_control.append(float(day_ahead_cost(rest_hat, tariff)))
        plans.append(plan)
        for k in active:
            bits = np.asarray(plan.signals[k].bits, dtype=float)
            s_grp[k][d * H:(d + 1) * H] = bits
            chosen[k].append(plan.signals[k].bits)

        # execute
        if mode == RunMode.EMULATED:
            exec_flex = np.zeros(H)
            for k in active:
                y_grp[k][d * H:(d + 1) * H] = plan.group_profiles[k]
                exec_flex += plan.group_profiles[k]
        elif active:
            off = np.zeros((len(ctrl), 1, H), dtype=np.int8)
            for k in active:
                off[[row_of[b] for b in members[k]], 0, :] = plan.signals[k].as_array()
            res = simulate(plant, weather, draws, force_off=off, start_day=d, n_days=1, record_states=True)
            P = res.P_el / 1000.0
            exec_flex = P.sum(axis=0)
            for k in active:
                y_grp[k][d * H:(d + 1) * H] = P[[row_of[b] for b in members[k]]].sum(axis=0)
            hp_rows = [row_of[b] for b in members.get("HP", [])] if "HP" in active else []
            if hp_rows:
                env = plant.envelope
                lim = env.T_min_hy - env.delta_T_hy / 2 - 1.0
                lim = np.asarray(lim)[hp_rows] if np.ndim(lim) else lim
                tz = res.T_z[hp_rows]
                margin = tz - np.reshape(lim, (-1, 1))
                comfort_ok += int((margin >= 0).sum())
                comfort_n += margin.size
                margins.append(float(margin.min()))
        else:
            exec_flex = np.zeros(H)
        real_total = rest[d * H:(d + 1) * H] + exec_flex
        if mode == RunMode.FORECAST:
            total[sl], flex[sl], rest_used[sl] = pred_total, pred_flex, rest_hat
        else:
            total[sl], flex[sl], rest_used[sl] = real_total, exec_flex, rest[d * H:(d + 1) * H]
        predicted[sl] = pred_total
        errors.append(open_loop_error(real_total, pred_total)[1])
        y_max = max(y_max, float(real_total.max()))

    C = inputs.carbon[steps]
    p = inputs.prices[steps]
    report = KpiReport(
        mode=mode.value, days=days,
        energy_cost=float(GAMMA * (p * total).sum()),
        peak_cost=inputs.p_peak * _monthly_peak(total, months),
        co2_tons=co2(total, C),
        flex_energy_cost=float(GAMMA * (p * flex).sum()),
        flex_peak_cost=inputs.p_peak * (_monthly_peak(total, months) - _monthly_peak(rest_used, months)),
        flex_co2_tons=co2(flex, C),
        daily_open_loop_error=errors, min_T_z_margin=margins,
        comfort_ok_fraction=comfort_ok / comfort_n if comfort_n else float("nan"),
        signals={k: [list(b) for b in v] for k, v in chosen.items()},
    )
    if return_trace:
        return report, LoopTrace(steps, total, rest_used, flex, predicted, months, plans, no_control)
    return report


# --------------------------------------------------------------------------- rebound


def rebound_profile(model, X: np.ndarray, scale=1.0, s_future=None) -> np.ndarray:
    """Predicted power with the given future signal minus the zero-signal prediction, in W.

    ``s_future`` overrides the rows' own future signal (one signal or one
    per row); by default the signal already in ``X`` is used.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float32))
    y_s = model.predict(X) if s_future is None else model.predict(X, s_override=s_future)
    y_0 = model.predict(X, s_override=np.zeros(H))
    return (y_s - y_0) * np.reshape(np.asarray(scale, dtype=float), (-1, 1)) * 1000.0


def future_signal(X: np.ndarray) -> np.ndarray:
    """Future control signal stored in feature rows."""
    return np.asarray(X)[:, SIGNAL_PAST + 1:SIGNAL_PAST + 1 + H]


def last_release(s_future: np.ndarray) -> np.ndarray:
    """Index of the first free step after the last forced-off block (-1 if none ends in the horizon)."""
    s = np.asarray(s_future)
    rel = (s[:, :-1] == 1) & (s[:, 1:] == 0)
    out = np.full(len(s), -1)
    for i, r in enumerate(rel):
        hits = np.flatnonzero(r)
        if hits.size:
            out[i] = hits[-1] + 1
    return out


def align_at_release(curves: np.ndarray, release: np.ndarray, before: int = 8, after: int = 32) -> np.ndarray:
    """Curves shifted so every release sits at column ``before``; NaN outside the horizon."""
    out = np.full((len(curves), before + after), np.nan)
    for i, (c, r) in enumerate(zip(curves, release)):
        if r < 0:
            continue
        lo, hi = max(0, r - before), min(c.shape[0], r + after)
        out[i, lo - r + before:hi - r + before] = c[lo:hi]
    return out


def decay_steps(curve: np.ndarray, fraction: float, start: int = 0) -> int:
    """Steps from the peak (at or after ``start``) until the curve drops below ``fraction * peak``.

    Returns the curve length when it never does.
    """
    c = np.asarray(curve, dtype=float)[start:]
    k = int(np.nanargmax(c))
    peak = c[k]
    if not peak > 0:
        return 0
    below = np.flatnonzero(c[k:] < fraction * peak)
    return int(below[0]) if below.size else len(c)
