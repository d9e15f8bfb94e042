"""Stochastic domestic hot water tapping profiles."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .weather import STEPS_PER_DAY

# (share of daily volume, mean hour, spread in hours)
DEFAULT_EVENTS = ((0.45, 7.0, 0.75), (0.15, 12.5, 1.0), (0.40, 20.0, 1.25))


@dataclass(frozen=True)
class DrawProfile:
    """Daily tapping events per household, reproducible per (seed, day).

    ``litres_per_person`` is drawn from the tank at storage temperature.
    """

    occupants: np.ndarray
    seed: int = 0
    litres_per_person: float = 40.0
    volume_sd: float = 0.2
    events: tuple = DEFAULT_EVENTS
    dt: float = 900.0
    rows: tuple | None = None  # subset of households kept by ``day``

    def select(self, rows) -> "DrawProfile":
        """Profile of a household subset that reproduces the full profile's draws."""
        base = np.arange(np.asarray(self.occupants).size) if self.rows is None else np.asarray(self.rows)
        return replace(self, rows=tuple(int(r) for r in base[np.asarray(rows, dtype=int)]))

    def day(self, day: int) -> np.ndarray:
        """Draw flow in kg/s, shape ``(n_households, 96)``."""
        out = self._full_day(day)
        return out if self.rows is None else out[list(self.rows)]

    def _full_day(self, day: int) -> np.ndarray:
        occ = np.asarray(self.occupants, dtype=float)
        n = occ.size
        rng = np.random.default_rng([self.seed, day])
        out = np.zeros((n, STEPS_PER_DAY))
        volume = occ * self.litres_per_person * rng.lognormal(-0.5 * self.volume_sd**2, self.volume_sd, n)
        rows = np.arange(n)
        for share, mu, sd in self.events:
            hour = np.clip(rng.normal(mu, sd, n), 0.0, 23.99)
            step = (hour * 4).astype(int)
            np.add.at(out, (rows, step), share * volume)
        return out / self.dt
