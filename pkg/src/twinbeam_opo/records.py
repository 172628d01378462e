"""Uniformly sampled records shared by the simulation and the analysis code."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TimeSeries:
    """Simulation output sampled at ``sample_rate``.

    Values are block averages over the recording interval, so the fast dither
    is filtered out. ``hop_flag`` is 1 for intervals containing a mode hop.
    """

    t: np.ndarray
    nu_minus: np.ndarray
    nu_plus_detuning: np.ndarray
    power: np.ndarray
    hop_flag: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return len(self.t) / self.sample_rate

    def drift_range(self) -> float:
        """Peak-to-peak excursion of the beat note (what a max-hold trace spans)."""
        return float(np.max(self.nu_minus) - np.min(self.nu_minus))


@dataclass
class Spectrum:
    """PSD estimate on a strictly increasing frequency grid."""

    f: np.ndarray
    psd: np.ndarray
    rbw: float
    sweep_time: float = 0.0
    maxhold: np.ndarray | None = None

    def __post_init__(self):
        if len(self.f) > 1 and not np.all(np.diff(self.f) > 0):
            raise ValueError("frequency bins must be strictly increasing")

    def at(self, f0: float) -> float:
        return float(np.interp(f0, self.f, self.psd))
