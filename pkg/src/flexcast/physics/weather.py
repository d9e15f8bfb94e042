"""Weather series: CSV input and a seeded synthetic generator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

STEP = pd.Timedelta(minutes=15)
STEPS_PER_DAY = 96


@dataclass
class Weather:
    """15-minute outdoor temperature (degC) and global horizontal irradiance (W/m2)."""

    index: pd.DatetimeIndex
    T_ext: np.ndarray
    ghi: np.ndarray

    def __post_init__(self):
        self.index = pd.DatetimeIndex(self.index)
        self.T_ext = np.asarray(self.T_ext, dtype=float)
        self.ghi = np.asarray(self.ghi, dtype=float)
        if not (len(self.index) == len(self.T_ext) == len(self.ghi)):
            raise ValueError("weather columns have different lengths")
        if len(self.index) > 1:
            deltas = np.diff(self.index.asi8)
            if np.any(deltas <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if np.any(deltas != STEP.value):
                raise ValueError("weather must have a 15-minute cadence")

    def __len__(self):
        return len(self.T_ext)

    @property
    def n_days(self) -> int:
        return len(self) // STEPS_PER_DAY

    def slice(self, start: int, stop: int) -> "Weather":
        return Weather(self.index[start:stop], self.T_ext[start:stop], self.ghi[start:stop])

    def daily_means(self):
        """Mean temperature and irradiance of each complete day."""
        n = self.n_days * STEPS_PER_DAY
        T_d = self.T_ext[:n].reshape(-1, STEPS_PER_DAY).mean(axis=1)
        I_d = self.ghi[:n].reshape(-1, STEPS_PER_DAY).mean(axis=1)
        return T_d, I_d

    def to_csv(self, path):
        pd.DataFrame({"timestamp": self.index, "T_ext": self.T_ext, "GHI": self.ghi}).to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path) -> "Weather":
        df = pd.read_csv(path, parse_dates=["timestamp"])
        missing = {"timestamp", "T_ext", "GHI"} - set(df.columns)
        if missing:
            raise ValueError(f"weather file lacks columns {sorted(missing)}")
        return cls(df["timestamp"], df["T_ext"].to_numpy(), df["GHI"].to_numpy())


def synthetic_weather(start: str = "2023-11-01", n_days: int = 120, seed: int = 0,
                      T_mean: float = 6.0, T_season: float = 4.0, T_daily: float = 4.0,
                      synoptic_sd: float = 3.0, ghi_peak: float = 450.0) -> Weather:
    """Winter-like weather: seasonal dip, diurnal cycle, AR(1) synoptic noise, clear-sky GHI.

    The seasonal term reaches its minimum in mid-January.
    """
    rng = np.random.default_rng(seed)
    index = pd.date_range(start, periods=n_days * STEPS_PER_DAY, freq=STEP)
    doy = index.dayofyear.to_numpy() + index.hour.to_numpy() / 24.0
    hour = index.hour.to_numpy() + index.minute.to_numpy() / 60.0
    seasonal = -T_season * np.cos(2 * np.pi * (doy - 15) / 365.0)
    diurnal = -T_daily * np.cos(2 * np.pi * (hour - 3.0) / 24.0)
    # daily AR(1) anomaly, linearly interpolated to 15 minutes
    phi = 0.8
    daily = np.empty(n_days + 1)
    daily[0] = rng.normal(0, synoptic_sd)
    for d in range(1, n_days + 1):
        daily[d] = phi * daily[d - 1] + rng.normal(0, synoptic_sd * np.sqrt(1 - phi**2))
    t_day = np.arange(len(index)) / STEPS_PER_DAY
    anomaly = np.interp(t_day, np.arange(n_days + 1), daily)
    T_ext = T_mean + seasonal + diurnal + anomaly + rng.normal(0, 0.3, len(index))

    declination = 23.44 * np.sin(2 * np.pi * (284 + doy) / 365.0)
    day_len = 24.0 / 180.0 * np.degrees(np.arccos(np.clip(-np.tan(np.radians(46.0)) * np.tan(np.radians(declination)), -1, 1)))
    sun = np.clip(np.sin(np.pi * (hour - (12 - day_len / 2)) / day_len), 0, None)
    sun[(hour < 12 - day_len / 2) | (hour > 12 + day_len / 2)] = 0.0
    cloud = np.clip(rng.beta(2.0, 1.5, n_days + 1), 0.05, 1.0)
    clearness = np.interp(t_day, np.arange(n_days + 1), cloud)
    ghi = ghi_peak * sun * clearness * (1 + 0.25 * np.cos(2 * np.pi * (doy - 172) / 365.0))
    return Weather(index, T_ext, np.clip(ghi, 0, None))


def moving_average_7d(T_ext: np.ndarray, history: np.ndarray | None = None) -> np.ndarray:
    """Trailing 7-day mean of ``T_ext`` at every step (shorter window at the start)."""
    window = 7 * STEPS_PER_DAY
    series = T_ext if history is None else np.concatenate([history, T_ext])
    csum = np.concatenate([[0.0], np.cumsum(series)])
    idx = np.arange(1, len(series) + 1)
    lo = np.maximum(idx - window, 0)
    ma = (csum[idx] - csum[lo]) / (idx - lo)
    return ma[len(series) - len(T_ext):]
