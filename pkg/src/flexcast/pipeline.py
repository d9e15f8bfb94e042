"""Desk-scale end-to-end workflow shared by the command line and the acceptance suite.

Every stage draws its randomness from a child of one root seed, so a run
is reproducible from its configuration alone.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import (H, Dataset, SimulationTrace, build_dataset, hash_seed, run_policy_year, sample_penetrations,
                      split_day, split_train_test)
from .emulator import (ClosedLoopModels, LoadForecaster, LoopInputs, prepare_loop, run_horizon,
                       select_controlled)
from .fleet import Fleet, FleetSpec, synthesize
from .forecaster.boosting import BoostParams
from .forecaster.model import fit_energy_aware, fit_model
from .physics.weather import Weather, synthetic_weather
from .signals import SignalConstraints, SignalSet, enumerate_signals

STAGES = {"weather": 1, "policy": 2, "scenarios": 3, "rows": 4, "loop": 5, "select": 6}
VARIANTS = ("plain", "energy-aware")


@dataclass
class PipelineConfig:
    """Run configuration; defaults are the desk-scale setting."""

    seed: int = 0
    fleet: FleetSpec = field(default_factory=FleetSpec)
    weather_start: str = "2023-11-01"
    warmup_days: int = 7
    sim_days: int = 120  # simulated days feeding the training corpus
    train_fraction: float = 0.8
    loop_days: int = 60
    scheme: str = "grid"
    n_scenarios: int = 16
    k_fraction: float = 0.05
    variant: str = "plain"
    boost: BoostParams = field(default_factory=lambda: BoostParams(n_estimators=40, learning_rate=0.15,
                                                                   colsample=0.5))
    rest_boost: BoostParams = field(default_factory=lambda: BoostParams(n_estimators=40, learning_rate=0.15,
                                                                        colsample=0.5))
    policy_signals: SignalConstraints = field(default_factory=SignalConstraints)
    loop_signals: SignalConstraints = field(default_factory=lambda: SignalConstraints(max_switches=2))
    ctrl_fraction: float = 0.66
    flex_share: float = 0.09
    p_peak: float = 10.0
    group_order: tuple = ("EH", "HP")

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.sim_days < 2 or self.loop_days < 1 or self.warmup_days < 7:
            raise ValueError("sim_days >= 2, loop_days >= 1 and warmup_days >= 7 are required")

    @property
    def cutoff_day(self) -> int:
        """First test day, counted within the simulated trace."""
        return split_day(self.sim_days, self.train_fraction)

    @property
    def loop_start(self) -> int:
        """First closed-loop day in weather indexing: the first day not seen in training."""
        return self.warmup_days + self.cutoff_day

    @property
    def n_weather_days(self) -> int:
        return max(self.warmup_days + self.sim_days, self.loop_start + self.loop_days + 1)

    def stage_seed(self, stage: str) -> int:
        return hash_seed(self.seed, STAGES[stage])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_order"] = list(self.group_order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        if "fleet" in d:
            d["fleet"] = FleetSpec.from_dict(d["fleet"])
        for key in ("boost", "rest_boost"):
            if key in d:
                d[key] = BoostParams(**d[key])
        for key in ("policy_signals", "loop_signals"):
            if key in d:
                d[key] = SignalConstraints(**d[key])
        if "group_order" in d:
            d["group_order"] = tuple(d["group_order"])
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "PipelineConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


# --------------------------------------------------------------------------- stages


def make_fleet(cfg: PipelineConfig) -> Fleet:
    return synthesize(cfg.fleet)


def make_weather(cfg: PipelineConfig) -> Weather:
    return synthetic_weather(cfg.weather_start, cfg.n_weather_days, seed=cfg.stage_seed("weather"))


def simulate_policies(cfg: PipelineConfig, fleet: Fleet, weather: Weather, signals: SignalSet | None = None):
    """Random-policy and uncontrolled traces over the training period."""
    signals = enumerate_signals(cfg.policy_signals) if signals is None else signals
    kw = dict(warmup_days=cfg.warmup_days, n_days=cfg.sim_days)
    ctrl = run_policy_year(fleet, weather, "random", seed=cfg.stage_seed("policy"), signals=signals, **kw)
    unctrl = run_policy_year(fleet, weather, "none", **kw)
    return ctrl, unctrl


def build_split(cfg: PipelineConfig, fleet: Fleet, traces, scheme: str | None = None):
    """Train and test rows of one sampling scheme."""
    scen = sample_penetrations(fleet, scheme or cfg.scheme, cfg.n_scenarios, seed=cfg.stage_seed("scenarios"))
    rows = build_dataset(scen, list(traces), cfg.k_fraction, seed=cfg.stage_seed("rows"))
    return split_train_test(rows, cfg.cutoff_day)


def train_model(cfg: PipelineConfig, train: Dataset, variant: str | None = None, stage1=None):
    variant = variant or cfg.variant
    if variant == "plain":
        return fit_model(train, cfg.boost)
    return fit_energy_aware(train, cfg.boost, stage1=stage1)


@dataclass
class LoopSetup:
    inputs: LoopInputs
    models: ClosedLoopModels
    signals: SignalSet
    n_days: int

    @property
    def days(self) -> range:
        return range(self.inputs.start_day, self.inputs.start_day + self.n_days)


def setup_loop(cfg: PipelineConfig, fleet: Fleet, weather: Weather, group_model) -> LoopSetup:
    """Uncontrolled reference run, plant snapshot and rest-load forecaster for the closed loop."""
    start = cfg.loop_start
    inputs = prepare_loop(fleet, weather, start, warmup_days=cfg.warmup_days, seed=cfg.stage_seed("loop"),
                          p_peak=cfg.p_peak, flex_share=cfg.flex_share, ctrl_fraction=cfg.ctrl_fraction)
    ctrl = select_controlled(fleet, cfg.ctrl_fraction, cfg.stage_seed("select"))
    rest = inputs.base_load + inputs.unctrl_P[np.setdiff1d(np.arange(len(fleet)), ctrl)].sum(axis=0)
    lf = LoadForecaster.fit(rest, weather, start, cfg.warmup_days, cfg.rest_boost)
    models = ClosedLoopModels({"EH": group_model, "HP": group_model}, lf, tuple(cfg.group_order))
    return LoopSetup(inputs, models, enumerate_signals(cfg.loop_signals), cfg.loop_days)


def run_loop(cfg: PipelineConfig, setup: LoopSetup, mode: str, days=None, control: bool = True,
             return_trace: bool = False):
    days = setup.days if days is None else days
    return run_horizon(mode, setup.inputs, setup.models, setup.signals, days, ctrl_fraction=cfg.ctrl_fraction,
                       seed=cfg.stage_seed("select"), control=control, return_trace=return_trace)


def relative_gaps(emulated, simulated) -> dict:
    """Relative deviation of emulated from simulated KPIs."""
    def rel(a, b):
        return (a - b) / b if b else float("nan")

    return {
        "total_cost": rel(emulated.total_cost, simulated.total_cost),
        "flex_energy_cost": rel(emulated.flex_energy_cost, simulated.flex_energy_cost),
        "flex_peak_cost": rel(emulated.flex_peak_cost, simulated.flex_peak_cost),
        "co2_tons": rel(emulated.co2_tons, simulated.co2_tons),
    }


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})


def save_trace(trace: SimulationTrace, path) -> None:
    np.savez(path, P=trace.P, signals=trace.signals, policy=trace.policy, seed=trace.seed)


def load_trace(path, weather: Weather, warmup_days: int) -> SimulationTrace:
    with np.load(path) as z:
        P, sig, policy, seed = z["P"], z["signals"], str(z["policy"]), int(z["seed"])
    w0 = warmup_days * H
    return SimulationTrace(P, sig, weather.slice(w0, w0 + P.shape[1]), policy, seed)
