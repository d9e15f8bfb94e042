"""Training corpus for the metamodel: simulated years, penetration scenarios and feature rows.

Conventions: a row is anchored at its prediction time ``t``, the last
observed 15-minute step.  The target is the aggregate power over the next
96 steps, ``y[t+1 .. t+96]``.  Power features and targets are divided by
the scenario's summed nominal electrical power, so every pool is on the
same scale; :attr:`Dataset.scale` converts back to kW.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fleet import METADATA_FIELDS, Fleet, fleet_summary, MetadataFeatures
from .physics.dhw import DrawProfile
from .physics.plant import ControlSettings, simulate
from .physics.weather import STEPS_PER_DAY, Weather
from .signals import SignalSet

H = STEPS_PER_DAY
SIGNAL_PAST = 95  # s is observed from t-95 ...
SIGNAL_FUTURE = 96  # ... to t+96
SIGNAL_WINDOW = SIGNAL_PAST + 1 + SIGNAL_FUTURE
MEAN_WINDOWS = (12, 24)  # 3 h and 6 h trailing means of s
SHORT_LAGS = tuple(range(-4, 1))
HOUR_LAGS = tuple(range(-168, -143)) + tuple(range(-24, 1))
FUTURE_HOUR_LAGS = tuple(range(1, 25))
HISTORY = 4 * 168 + 3  # steps of history needed by the oldest hourly lag
SCHEMA_VERSION = 1


# --------------------------------------------------------------------------- schema


@dataclass(frozen=True)
class FeatureSchema:
    """Frozen column layout shared by datasets, models and the optimizer."""

    names: tuple
    version: int = SCHEMA_VERSION

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def hash(self) -> str:
        payload = json.dumps({"version": self.version, "names": list(self.names)})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def block(self, prefix: str) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.names) if n.startswith(prefix)], dtype=int)

    @property
    def n_signal(self) -> int:
        """Leading columns derived from the control signal."""
        return SIGNAL_WINDOW + len(MEAN_WINDOWS) * SIGNAL_FUTURE

    def with_imbalance(self) -> "FeatureSchema":
        return FeatureSchema(self.names + tuple(f"imb[{h}]" for h in range(1, H + 1)), self.version)

    def to_dict(self) -> dict:
        return {"version": self.version, "names": list(self.names), "hash": self.hash}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        s = cls(tuple(d["names"]), int(d["version"]))
        if "hash" in d and d["hash"] != s.hash:
            raise ValueError("schema hash does not match its column names")
        return s


def default_schema() -> FeatureSchema:
    names = [f"s[{j:+d}]" for j in range(-SIGNAL_PAST, SIGNAL_FUTURE + 1)]
    for w in MEAN_WINDOWS:
        names += [f"s_mean{w}[{lag}]" for lag in range(1, SIGNAL_FUTURE + 1)]
    for var in ("y", "T", "ghi"):
        names += [f"{var}[{lag:+d}]" for lag in SHORT_LAGS]
    for var in ("y", "T", "ghi"):
        names += [f"{var}_h[{lag:+d}]" for lag in HOUR_LAGS]
    for var in ("T", "ghi"):
        names += [f"{var}_fut_h[{lag:+d}]" for lag in FUTURE_HOUR_LAGS]
    names += [f"meta.{f}" for f in METADATA_FIELDS]
    names += ["hour", "dow", "minute_of_day"]
    return FeatureSchema(tuple(names))


def signal_features(window: np.ndarray) -> np.ndarray:
    """Signal block of the feature vector from ``s[t-95 .. t+96]`` (shape ``(m, 192)``).

    Returns the raw window followed by the 3 h and 6 h trailing means of s
    ending at ``t+1 .. t+96``.
    """
    window = np.atleast_2d(np.asarray(window, dtype=np.float64))
    if window.shape[1] != SIGNAL_WINDOW:
        raise ValueError(f"signal window must have {SIGNAL_WINDOW} columns")
    csum = np.concatenate([np.zeros((len(window), 1)), np.cumsum(window, axis=1)], axis=1)
    end = SIGNAL_PAST + 1 + np.arange(1, SIGNAL_FUTURE + 1)  # exclusive end index of each window
    blocks = [window]
    for w in MEAN_WINDOWS:
        blocks.append((csum[:, end] - csum[:, end - w]) / w)
    return np.concatenate(blocks, axis=1)


def _trailing_mean(x: np.ndarray, w: int) -> np.ndarray:
    """Mean of ``x[t-w+1 .. t]`` at every ``t`` (NaN where incomplete)."""
    c = np.concatenate([[0.0], np.cumsum(x)])
    out = np.full(len(x), np.nan)
    out[w - 1:] = (c[w:] - c[:-w]) / w
    return out


# --------------------------------------------------------------------------- simulation traces


@dataclass
class SimulationTrace:
    """Per-building electrical power (kW) of one policy run, plus its inputs."""

    P: np.ndarray  # (n_buildings, n_steps) kW
    signals: np.ndarray  # (n_days, 96) int8, applied to every building
    weather: Weather
    policy: str
    seed: int
    T_z: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.P.shape[1]

    @property
    def s(self) -> np.ndarray:
        return self.signals.reshape(-1)


def run_policy_year(fleet: Fleet, weather: Weather, policy: str, seed: int = 0, signals: SignalSet | None = None,
                    warmup_days: int = 7, n_days: int | None = None, settings: ControlSettings | None = None,
                    draw_seed: int | None = None, record_states: bool = False) -> SimulationTrace:
    """Simulate the whole fleet under a random or no force-off policy.

    The first ``warmup_days`` of ``weather`` only seed the 7-day moving
    average and are not simulated.  Under ``random`` each day applies a
    signal drawn uniformly from ``signals`` to every building.
    """
    if len(fleet) == 0:
        raise ValueError("fleet is empty")
    if policy not in ("random", "none"):
        raise ValueError("policy must be 'random' or 'none'")
    avail = weather.n_days - warmup_days
    n_days = avail if n_days is None else n_days
    if n_days <= 0 or n_days > avail:
        raise ValueError("weather does not cover the requested days")
    if policy == "random":
        if signals is None or len(signals) == 0:
            raise ValueError("random policy needs a non-empty signal set")
        rng = np.random.default_rng(seed)
        sig = signals.bits[rng.integers(0, len(signals), n_days)].astype(np.int8)
    else:
        sig = np.zeros((n_days, H), dtype=np.int8)
    w0 = warmup_days * H
    plant = fleet.build_plant(settings=settings, T_history=weather.T_ext[:w0])
    draws = DrawProfile(fleet.occupants, seed=fleet.seed if draw_seed is None else draw_seed)
    res = simulate(plant, weather, draws, force_off=sig, start_day=warmup_days, n_days=n_days,
                   record_states=record_states)
    return SimulationTrace(res.P_el / 1000.0, sig, weather.slice(w0, w0 + n_days * H), policy, seed,
                           res.T_z if record_states else None)


# --------------------------------------------------------------------------- penetration scenarios


@dataclass
class PenetrationScenario:
    members: np.ndarray
    n_hp: int
    n_eh: int
    metadata: MetadataFeatures
    y_ctrl: np.ndarray | None = None  # kW
    y_unctrl: np.ndarray | None = None  # kW

    @property
    def scale(self) -> float:
        return self.metadata.p_nom_sum


def _grid_levels(n_levels: int, n_max: int) -> np.ndarray:
    return np.round(np.linspace(0, n_max, n_levels)).astype(int)


def sample_penetrations(fleet: Fleet, scheme: str, n_scenarios: int = 100, seed: int = 0,
                        ctrl: SimulationTrace | None = None, unctrl: SimulationTrace | None = None,
                        n_hp_max: int | None = None, n_eh_max: int | None = None) -> list:
    """Sub-fleets of increasing penetration.

    ``random_linear`` grows the total device count linearly, drawing devices
    irrespective of kind; ``grid`` crosses ``sqrt(n_scenarios)`` HP levels with
    as many EH levels (both including zero).  Members are prefixes of one
    seeded permutation, so pools are nested.  The empty grid cell is replaced
    by a minimal mixed pool.  Traces, when given, fill the aggregate series.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    rng = np.random.default_rng(seed)
    hp, eh = fleet.hp_indices, fleet.eh_indices
    n_hp_max = len(hp) if n_hp_max is None else n_hp_max
    n_eh_max = len(eh) if n_eh_max is None else n_eh_max
    if n_hp_max > len(hp) or n_eh_max > len(eh):
        raise ValueError("requested counts exceed the fleet")
    out = []
    if scheme == "random_linear":
        pool = np.concatenate([hp[:n_hp_max], eh[:n_eh_max]])
        perm = rng.permutation(pool)
        sizes = np.round(np.linspace(len(pool) / n_scenarios, len(pool), n_scenarios)).astype(int)
        groups = [np.sort(perm[: max(1, k)]) for k in sizes]
    elif scheme == "grid":
        n_levels = int(round(np.sqrt(n_scenarios)))
        if n_levels**2 != n_scenarios or n_levels < 2:
            raise ValueError("grid scheme needs a square number of scenarios >= 4")
        p_hp, p_eh = rng.permutation(hp)[:n_hp_max], rng.permutation(eh)[:n_eh_max]
        groups = []
        lv_hp, lv_eh = _grid_levels(n_levels, n_hp_max), _grid_levels(n_levels, n_eh_max)
        for a in lv_hp:
            for b in lv_eh:
                if a == 0 and b == 0:
                    a0, b0 = max(1, lv_hp[1] // 2), max(1, lv_eh[1] // 2)
                    a0, b0 = min(a0, n_hp_max), min(b0, n_eh_max)
                    groups.append(np.sort(np.concatenate([p_hp[:a0], p_eh[:b0]])))
                else:
                    groups.append(np.sort(np.concatenate([p_hp[:a], p_eh[:b]])))
    else:
        raise ValueError("scheme must be 'random_linear' or 'grid'")
    for g in groups:
        if len(g) == 0:
            raise ValueError("empty penetration scenario")
        n_h = int(fleet.is_hp[g].sum())
        sc = PenetrationScenario(g, n_h, len(g) - n_h, fleet_summary(fleet, g))
        if ctrl is not None:
            sc.y_ctrl = ctrl.P[g].sum(axis=0)
        if unctrl is not None:
            sc.y_unctrl = unctrl.P[g].sum(axis=0)
        out.append(sc)
    return out


# --------------------------------------------------------------------------- feature rows


@dataclass
class Dataset:
    """Stacked feature rows with their provenance.

    ``Y`` and the power columns of ``X`` are normalised by ``scale`` (kW).
    """

    X: np.ndarray  # (m, F) float32
    Y: np.ndarray  # (m, 96)
    t: np.ndarray  # prediction step within the trace
    day: np.ndarray  # day index of the prediction step (t // 96)
    scenario: np.ndarray
    controlled: np.ndarray  # bool: row comes from the random-policy run
    scale: np.ndarray  # kW
    n_hp: np.ndarray
    n_eh: np.ndarray
    T_ma: np.ndarray  # 7-day mean outdoor temperature at t
    schema: FeatureSchema = field(default_factory=default_schema)

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.Y[idx], self.t[idx], self.day[idx], self.scenario[idx],
                       self.controlled[idx], self.scale[idx], self.n_hp[idx], self.n_eh[idx], self.T_ma[idx],
                       self.schema)

    @property
    def signal_window(self) -> np.ndarray:
        return self.X[:, :SIGNAL_WINDOW]

    @classmethod
    def concat(cls, parts: list) -> "Dataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        schema = parts[0].schema
        if any(p.schema.hash != schema.hash for p in parts):
            raise ValueError("schema mismatch between dataset parts")
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(cat("X"), cat("Y"), cat("t"), cat("day"), cat("scenario"), cat("controlled"), cat("scale"),
                   cat("n_hp"), cat("n_eh"), cat("T_ma"), schema)

    def save(self, path) -> None:
        """Columnar ``.npz`` plus a ``.schema.json`` sidecar."""
        path = Path(path)
        np.savez(path.with_suffix(".npz"), X=self.X, Y=self.Y, t=self.t, day=self.day, scenario=self.scenario,
                 controlled=self.controlled, scale=self.scale, n_hp=self.n_hp, n_eh=self.n_eh, T_ma=self.T_ma)
        path.with_suffix(".schema.json").write_text(json.dumps(self.schema.to_dict()))

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        schema = FeatureSchema.from_dict(json.loads(path.with_suffix(".schema.json").read_text()))
        with np.load(path.with_suffix(".npz")) as z:
            ds = cls(z["X"], z["Y"], z["t"], z["day"], z["scenario"], z["controlled"], z["scale"], z["n_hp"],
                     z["n_eh"], z["T_ma"], schema)
        if ds.X.shape[1] != schema.n_features:
            raise ValueError("stored matrix does not match its schema")
        return ds


def eligible_steps(n_steps: int) -> np.ndarray:
    """Prediction steps with full history and a full horizon inside the trace."""
    return np.arange(HISTORY, n_steps - H)


def load_weather_features(t: np.ndarray, y: np.ndarray, weather: Weather) -> np.ndarray:
    """Lagged load, lagged and future weather, and calendar columns at steps ``t``.

    ``y`` is indexed like ``weather`` and already normalised.  Weather beyond
    ``t`` enters as hourly means, i.e. as a perfect forecast.
    """
    T, ghi = weather.T_ext, weather.ghi
    cols = []
    for x in (y, T, ghi):
        cols.append(x[t[:, None] + np.array(SHORT_LAGS)])
    hour_lags = 4 * np.array(HOUR_LAGS)
    for x in (y, T, ghi):
        cols.append(_trailing_mean(x, 4)[t[:, None] + hour_lags])
    fut = 4 * np.array(FUTURE_HOUR_LAGS)
    for x in (T, ghi):
        cols.append(_trailing_mean(x, 4)[t[:, None] + fut])
    return np.concatenate(cols, axis=1)


def calendar_features(t: np.ndarray, weather: Weather) -> np.ndarray:
    """Hour, day of week and minute of day of the first predicted step."""
    ts = weather.index[t + 1]
    return np.stack([ts.hour.to_numpy(), ts.dayofweek.to_numpy(), (ts.hour * 60 + ts.minute).to_numpy()], axis=1)


def check_steps(t: np.ndarray, n_steps: int):
    if np.any(t < HISTORY) or np.any(t + SIGNAL_FUTURE >= n_steps):
        raise ValueError("prediction steps lack history or horizon")


def feature_matrix(t: np.ndarray, y: np.ndarray, s: np.ndarray, weather: Weather, meta: MetadataFeatures,
                   scale: float) -> np.ndarray:
    """Feature rows at prediction steps ``t`` for one aggregate series.

    ``y`` (kW) and ``s`` are indexed like ``weather``; ``s`` must extend 96
    steps beyond the last ``t``.  Only s reaches into the future; weather
    beyond ``t`` enters as hourly means, i.e. as a perfect forecast.
    """
    t = np.asarray(t, dtype=int)
    y = np.asarray(y, dtype=float) / scale
    check_steps(t, min(len(s), len(weather)))
    win = s[t[:, None] + np.arange(-SIGNAL_PAST, SIGNAL_FUTURE + 1)]
    cols = [signal_features(win), load_weather_features(t, y, weather),
            np.broadcast_to(meta.as_array(), (len(t), len(METADATA_FIELDS))), calendar_features(t, weather)]
    return np.concatenate(cols, axis=1).astype(np.float32)


def target_matrix(t: np.ndarray, y: np.ndarray, scale: float) -> np.ndarray:
    return np.asarray(y, dtype=float)[np.asarray(t)[:, None] + np.arange(1, H + 1)] / scale


def build_rows(scenario: PenetrationScenario, trace: SimulationTrace, k_fraction: float, seed: int = 0,
               scenario_id: int = 0, controlled: bool | None = None) -> Dataset:
    """Sample ``k_fraction`` of the eligible prediction steps (without replacement).

    The aggregate series is the scenario's member sum over ``trace``.
    """
    if not 0 < k_fraction <= 1:
        raise ValueError("k_fraction must lie in (0, 1]")
    y = trace.P[scenario.members].sum(axis=0)
    steps = eligible_steps(trace.n_steps)
    if len(steps) == 0:
        raise ValueError("trace too short for the feature history")
    rng = np.random.default_rng(seed)
    m = max(1, int(round(k_fraction * len(steps))))
    t = np.sort(rng.choice(steps, m, replace=False)) if m < len(steps) else steps
    s = np.concatenate([trace.s, np.zeros(SIGNAL_FUTURE, dtype=trace.s.dtype)]).astype(float)
    scale = scenario.scale
    X = feature_matrix(t, y, s, trace.weather, scenario.metadata, scale)
    Y = target_matrix(t, y, scale)
    ctrl = (trace.policy == "random") if controlled is None else controlled
    T_ma = _trailing_mean(trace.weather.T_ext, 7 * H)[t]
    n = len(t)
    return Dataset(X, Y, t, t // H, np.full(n, scenario_id), np.full(n, ctrl), np.full(n, scale),
                   np.full(n, scenario.n_hp), np.full(n, scenario.n_eh), T_ma)


def build_dataset(scenarios: list, traces: list, k_fraction: float, seed: int = 0) -> Dataset:
    """Rows of every scenario from every trace, in a deterministic order."""
    parts = []
    for i, sc in enumerate(scenarios):
        for j, tr in enumerate(traces):
            parts.append(build_rows(sc, tr, k_fraction, seed=hash_seed(seed, i, j), scenario_id=i))
    return Dataset.concat(parts)


def hash_seed(*parts: int) -> int:
    """Stable child seed from integers (independent of ``PYTHONHASHSEED``)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def split_day(n_days: int, train_fraction: float = 0.8) -> int:
    """First test day: 292 for a 365-day year."""
    return int(round(train_fraction * n_days))


def split_train_test(rows: Dataset, cutoff_day: int):
    """Rows predicted before ``cutoff_day`` train; the rest test.

    A row belongs to the test set only if its whole horizon lies after the
    cutoff, so no test target is seen in training.
    """
    t0 = cutoff_day * H
    train = np.flatnonzero(rows.t + H < t0)
    test = np.flatnonzero(rows.t >= t0 - 1)
    return rows.subset(train), rows.subset(test)
