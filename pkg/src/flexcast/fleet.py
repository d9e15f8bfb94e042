"""Synthetic building fleets and their aggregate metadata."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .physics.control import SupplyCurve
from .physics.floor import DT_REF, Serpentine, size_serpentine
from .physics.plant import BuildingPlant, ControllerState, ControlSettings, Envelope, HeatDevice
from .physics.tank import Tank


@dataclass(frozen=True)
class Distribution:
    """Named parametric distribution: ``uniform``, ``loguniform`` or ``constant``."""

    kind: str
    low: float
    high: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "loguniform", "constant"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind == "constant":
            if self.low <= 0:
                raise ValueError("constant must be positive")
            return
        if self.high is None or not 0 < self.low <= self.high:
            raise ValueError(f"bounds must satisfy 0 < low <= high, got {self.low}, {self.high}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.low))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, n)
        return np.exp(rng.uniform(np.log(self.low), np.log(self.high), n))

    @classmethod
    def parse(cls, obj) -> "Distribution":
        if isinstance(obj, Distribution):
            return obj
        if isinstance(obj, (int, float)):
            return cls("constant", float(obj))
        return cls(**obj)


@dataclass(frozen=True)
class FleetSpec:
    """Statistical description of a fleet.

    Thermal resistance follows from floor area and yearly heating intensity
    (kWh/m2/yr) through ``R = hdh_ref / (area * intensity)``, i.e. the
    stationary single-node building that needs that much heat over a
    reference year of ``hdh_ref`` heating degree-hours.  Capacity is
    ``area * capacity_per_m2``; occupants are ``area / area_per_person``.
    """

    n_hp_buildings: int = 60
    n_eh_buildings: int = 40
    seed: int = 0
    area: Distribution = Distribution("uniform", 110.0, 250.0)
    area_per_person: Distribution = Distribution("uniform", 50.0, 70.0)
    heating_intensity: Distribution = Distribution("loguniform", 50.0, 200.0)
    capacity_per_m2: Distribution = Distribution("uniform", 1.0e6, 5.0e6)
    eh_power_per_person: Distribution = Distribution("uniform", 1.0, 2.0)
    eh_volume_per_person: Distribution = Distribution("uniform", 0.08, 0.12)
    hdh_ref: float = 57000.0
    cop_ref: float = 3.0
    buffer_litres_per_kw: float = 30.0

    def __post_init__(self):
        if self.n_hp_buildings < 0 or self.n_eh_buildings < 0:
            raise ValueError("building counts must be non-negative")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("Distribution",) or isinstance(v, dict):
                object.__setattr__(self, f.name, Distribution.parse(v))
        if self.hdh_ref <= 0 or self.cop_ref <= 0 or self.buffer_litres_per_kw <= 0:
            raise ValueError("hdh_ref, cop_ref and buffer_litres_per_kw must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "FleetSpec":
        d = dict(d)
        for f in fields(cls):
            if f.name in d and f.type == "Distribution":
                d[f.name] = Distribution.parse(d[f.name])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Fleet:
    """Per-building parameters; HP buildings come first, then EH buildings."""

    is_hp: np.ndarray
    area: np.ndarray
    occupants: np.ndarray
    R: np.ndarray
    C: np.ndarray
    q_nom_th: np.ndarray  # W
    p_nom_el: np.ndarray  # kW
    dhw_volume: np.ndarray  # m3
    buffer_volume: np.ndarray  # m3
    serp_L: np.ndarray
    serp_m_dot: np.ndarray
    seed: int = 0
    serpentine: Serpentine = field(default_factory=Serpentine)

    def __len__(self) -> int:
        return len(self.is_hp)

    @property
    def n_hp(self) -> int:
        return int(self.is_hp.sum())

    @property
    def n_eh(self) -> int:
        return len(self) - self.n_hp

    @property
    def hp_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_hp)

    @property
    def eh_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.is_hp)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                out[f.name] = v.tolist()
            elif isinstance(v, Serpentine):
                out[f.name] = asdict(v)
            else:
                out[f.name] = v
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict) -> "Fleet":
        kw = {}
        for f in fields(cls):
            v = d[f.name]
            if f.name == "serpentine":
                kw[f.name] = Serpentine(**v)
            elif f.name == "seed":
                kw[f.name] = int(v)
            elif f.name == "is_hp":
                kw[f.name] = np.asarray(v, dtype=bool)
            else:
                kw[f.name] = np.asarray(v, dtype=float)
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "Fleet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build_plant(self, rows=None, settings: ControlSettings | None = None, T_history=None,
                    T_z0: float = 20.5, n_layers: int = 10) -> BuildingPlant:
        """Instantiate the simulation state for ``rows`` (default: all buildings)."""
        settings = settings or ControlSettings()
        rows = np.arange(len(self)) if rows is None else np.asarray(rows, dtype=int)
        n = len(rows)
        is_hp = self.is_hp[rows]
        env = Envelope(self.R[rows], self.C[rows], np.full(n, T_z0))
        serp = Serpentine(**{**asdict(self.serpentine), "L": self.serp_L[rows], "m_dot": self.serp_m_dot[rows]})
        dhw = Tank.uniform(n, n_layers, self.dhw_volume[rows], np.full(n, settings.dhw_set), 1.5,
                           heated_layers=(0, 1), sensor_up=7, sensor_low=2)
        buf_T0 = settings.heating_curve.T_sup_hi
        buffer = Tank.uniform(n, n_layers, np.where(is_hp, self.buffer_volume[rows], 0.05), np.full(n, buf_T0),
                              1.0, heated_layers=(0, 1, 2), sensor_up=7, sensor_low=2)
        dev = HeatDevice(is_hp, self.q_nom_th[rows])
        return BuildingPlant(env, serp, dhw, buffer, dev, ControllerState.initial(n, T_history), settings)


def synthesize(spec: FleetSpec, curve: SupplyCurve = SupplyCurve(),
               serpentine: Serpentine = Serpentine()) -> Fleet:
    """Sample a fleet; bit-reproducible for a given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_hp_buildings + spec.n_eh_buildings
    is_hp = np.zeros(n, dtype=bool)
    is_hp[: spec.n_hp_buildings] = True
    area = spec.area.sample(rng, n)
    occupants = np.maximum(1.0, np.round(area / spec.area_per_person.sample(rng, n)))
    intensity = spec.heating_intensity.sample(rng, n)
    R = spec.hdh_ref / (area * intensity * 1000.0)
    C = area * spec.capacity_per_m2.sample(rng, n)
    q_dhw = spec.eh_power_per_person.sample(rng, n) * occupants * 1000.0  # W
    dhw_volume = spec.eh_volume_per_person.sample(rng, n) * occupants
    q_space = DT_REF / R
    q_nom_th = np.where(is_hp, q_space + q_dhw, q_dhw)
    p_nom_el = np.where(is_hp, q_nom_th / spec.cop_ref, q_nom_th) / 1000.0
    buffer_volume = np.where(is_hp, spec.buffer_litres_per_kw * q_nom_th / 1000.0 / 1000.0, 0.0)
    L = np.zeros(n)
    m_dot = np.full(n, 0.1)
    if spec.n_hp_buildings:
        L[is_hp], m_dot[is_hp] = size_serpentine(R[is_hp], serpentine, curve)
    return Fleet(is_hp, area, occupants, R, C, q_nom_th, p_nom_el, dhw_volume, buffer_volume, L, m_dot,
                 spec.seed, serpentine)


METADATA_FIELDS = (
    "p_nom_sum", "p_nom_q10", "p_nom_q90", "n_hp", "n_eh", "hp_eh_ratio",
    "R_mean", "R_q10", "R_q90", "C_mean", "C_q10", "C_q90",
)


@dataclass(frozen=True)
class MetadataFeatures:
    p_nom_sum: float
    p_nom_q10: float
    p_nom_q90: float
    n_hp: int
    n_eh: int
    hp_eh_ratio: float
    R_mean: float
    R_q10: float
    R_q90: float
    C_mean: float
    C_q10: float
    C_q90: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in METADATA_FIELDS], dtype=float)


def fleet_summary(fleet: Fleet, subset) -> MetadataFeatures:
    """Aggregate metadata of a sub-fleet (nominal powers in kW, R in K/W, C in J/K).

    Quantiles use linear interpolation between order statistics.  The
    HP/EH ratio is ``n_hp / (n_eh + 1)`` so pure-HP pools stay finite.
    """
    idx = np.asarray(subset, dtype=int)
    if idx.size == 0:
        raise ValueError("subset must not be empty")
    p, R, C = fleet.p_nom_el[idx], fleet.R[idx], fleet.C[idx]
    n_hp = int(fleet.is_hp[idx].sum())
    n_eh = int(idx.size - n_hp)
    q = lambda a, z: float(np.quantile(a, z, method="linear"))  # noqa: E731
    return MetadataFeatures(
        float(p.sum()), q(p, 0.1), q(p, 0.9), n_hp, n_eh, n_hp / (n_eh + 1),
        float(R.mean()), q(R, 0.1), q(R, 0.9), float(C.mean()), q(C, 0.1), q(C, 0.9),
    )
