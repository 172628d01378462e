"""Semiclassical twin-beam detection chain and spectrum-analyzer emulation.

Spectra are in shot-noise units. The intensity-difference noise of the two
output ports of a half-wave plate + polarizing splitter with effective
reflectivity R is

    S(f) = 1 - (2R - 1)^2 * eta * L(f),   L(f) = 1 / (1 + (f/f_c)^2)

so the balanced setting (R = 1/2) reads shot noise for any correlation
``eta`` and the separated setting (R = 1) shows the inverted Lorentzian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, signal

from .records import Spectrum, TimeSeries


def squeezing_psd(f, eta, f_c):
    """Intensity-difference PSD of separated twin beams, in shot-noise units.

    Parameters
    ----------
    f : array_like
        Analysis frequency (Hz), ``f >= 0``.
    eta : float
        Lumped correlation efficiency in [0, 1].
    f_c : float
        Cold-cavity half-width (Hz).
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if f_c <= 0:
        raise ValueError("f_c must be positive")
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("frequencies must be >= 0")
    return 1.0 - eta / (1.0 + (f / f_c) ** 2)


def eta_for_squeezing(level_db, f, f_c, electronic_floor=0.0):
    """Correlation efficiency giving ``level_db`` at ``f`` after shot calibration.

    Accounts for the electronic floor, which is present in both the measured
    trace and the shot-noise reference.
    """
    target = 10.0 ** (level_db / 10.0)
    lor = 1.0 / (1.0 + (f / f_c) ** 2)
    eta = (1.0 + electronic_floor) * (1.0 - target) / lor
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"{level_db} dB at {f} Hz needs eta = {eta:.4g}, outside [0, 1]")
    return eta


@dataclass(frozen=True)
class SplitterConfig:
    """Half-wave plate at ``alpha`` followed by a polarizing beam splitter.

    ``crosstalk_power`` is the residual beat power in the difference channel
    at alpha = 0, relative to its value at alpha = pi/8 (imperfect
    extinction of the splitter).
    """

    alpha: float = 0.0
    crosstalk_power: float = 10 ** -5.2

    def __post_init__(self):
        if not 0.0 <= self.crosstalk_power <= 1.0:
            raise ValueError("crosstalk_power must lie in [0, 1]")

    @property
    def reflectivity(self) -> float:
        """Ideal R = cos^2(2 alpha)."""
        return math.cos(2.0 * self.alpha) ** 2

    @property
    def effective_reflectivity(self) -> float:
        # leakage eps chosen so 4 R (1 - R) equals crosstalk_power at alpha = 0
        eps = 0.5 * (1.0 - math.sqrt(1.0 - self.crosstalk_power))
        r = self.reflectivity
        return r * (1.0 - eps) + (1.0 - r) * eps

    def split(self, p_signal, p_idler):
        """Mean powers on the two detectors; their sum equals the input."""
        r = self.effective_reflectivity
        out1 = r * p_signal + (1.0 - r) * p_idler
        return out1, (p_signal + p_idler) - out1

    def beat_fraction(self) -> float:
        r = self.effective_reflectivity
        return 4.0 * r * (1.0 - r)

    def squeezing_weight(self) -> float:
        r = self.effective_reflectivity
        return (2.0 * r - 1.0) ** 2


@dataclass(frozen=True)
class DetectorPair:
    """Balanced photodiode pair with subtraction.

    The twin-beam correlation seen by the difference channel is
    ``escape_efficiency * quantum_efficiency``.
    """

    quantum_efficiency: float = 0.95
    cmrr_db: float = 42.0
    electronic_floor_db: float = -10.0
    escape_efficiency: float = 0.7

    def __post_init__(self):
        for name in ("quantum_efficiency", "escape_efficiency"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.cmrr_db < 0:
            raise ValueError("cmrr_db must be >= 0")

    @property
    def eta(self) -> float:
        return self.escape_efficiency * self.quantum_efficiency

    @property
    def electronic_floor(self) -> float:
        return 10.0 ** (self.electronic_floor_db / 10.0)

    @classmethod
    def calibrated(cls, level_db=-4.0, f=200e3, f_c=3e6, crosstalk_power=0.0,
                   **kw) -> "DetectorPair":
        """Pick the escape efficiency so the separated trace reads ``level_db`` at ``f``.

        ``crosstalk_power`` is that of the splitter used for the alpha = 0
        measurement; it slightly dilutes the correlation.
        """
        probe = cls(**kw)
        eta = eta_for_squeezing(level_db, f, f_c, probe.electronic_floor)
        eta /= SplitterConfig(0.0, crosstalk_power).squeezing_weight()
        esc = eta / probe.quantum_efficiency
        if esc > 1.0:
            raise ValueError(f"target needs escape efficiency {esc:.4g} > 1")
        return cls(**{**kw, "escape_efficiency": esc})


@dataclass(frozen=True)
class DifferenceModel:
    """Optical inputs to the difference channel.

    Tone levels are peak PSDs in shot-noise units; tones are drawn with the
    Gaussian response of an analyzer of resolution ``rbw``.
    """

    f_c: float = 3e6
    beat_frequency: float = 4e6
    beat_level_db: float = 60.0
    common_mode_frequency: float = 100e3
    common_mode_level_db: float | None = None
    rbw: float = 30e3


def _tone(f, f0, level, rbw):
    return level * np.exp(-math.log(2.0) * ((f - f0) / rbw) ** 2)


def difference_spectrum(alpha, detectors: DetectorPair, model: DifferenceModel, f,
                        crosstalk_power=10 ** -5.2, n_averages=None, rng=None) -> Spectrum:
    """Difference-photocurrent PSD, normalized to the balanced shot reference.

    The raw trace is optical noise plus electronic floor; it is divided by the
    raw alpha = pi/8 level (shot + floor), which is how shot-noise calibration
    is done in practice.

    Parameters
    ----------
    alpha : float
        Half-wave-plate angle (rad).
    f : array_like
        Strictly increasing frequency grid (Hz).
    n_averages : int, optional
        If given, each bin is an average of this many exponential periodogram
        samples (drawn from ``rng``); otherwise the expected PSD is returned.
    """
    f = np.asarray(f, dtype=float)
    split = SplitterConfig(alpha, crosstalk_power)
    floor = detectors.electronic_floor
    optical = 1.0 - split.squeezing_weight() * detectors.eta / (1.0 + (f / model.f_c) ** 2)
    optical = optical + split.beat_fraction() * _tone(
        f, model.beat_frequency, 10 ** (model.beat_level_db / 10), model.rbw)
    if model.common_mode_level_db is not None:
        leak = 10 ** ((model.common_mode_level_db - detectors.cmrr_db) / 10)
        optical = optical + _tone(f, model.common_mode_frequency, leak, model.rbw)
    psd = (optical + floor) / (1.0 + floor)
    if n_averages is not None:
        if rng is None:
            raise ValueError("n_averages needs an rng")
        psd = psd * rng.gamma(n_averages, 1.0 / n_averages, size=psd.shape)
    return Spectrum(f=f, psd=psd, rbw=model.rbw)


def _inverted_lorentzian(f, depth, f_c):
    return 1.0 - depth / (1.0 + (f / f_c) ** 2)


def fit_squeezing(spectrum: Spectrum, exclude=(), exclude_width=None):
    """Least-squares inverted-Lorentzian fit; returns (depth, hwhm).

    ``exclude`` lists tone frequencies whose neighbourhoods (``exclude_width``,
    default 5 rbw) are left out of the fit.
    """
    width = 5 * spectrum.rbw if exclude_width is None else exclude_width
    mask = np.ones(len(spectrum.f), dtype=bool)
    for f0 in exclude:
        mask &= np.abs(spectrum.f - f0) > width
    f, y = spectrum.f[mask], spectrum.psd[mask]
    guess = (max(1.0 - float(np.min(y)), 1e-3), float(np.median(f)))
    (depth, hwhm), _ = optimize.curve_fit(_inverted_lorentzian, f, y, p0=guess)
    return float(depth), abs(float(hwhm))


def gaussian_window_sigma(rbw):
    """Time width of the Gaussian analysis window whose power response has HWHM ``rbw``."""
    return math.sqrt(math.log(2.0)) / (2.0 * math.pi * rbw)


def _chirped_response(offset, chirp, sigma):
    # |FT of exp(-t^2/2s^2 + i pi beta t^2)|^2 at offset, normalized to 1 for a pure tone
    a = 1.0 / (2.0 * sigma**2) - 1j * math.pi * chirp
    inv_a = 1.0 / a
    return np.exp(-0.5 * (2.0 * math.pi * offset) ** 2 * inv_a.real) / (2.0 * sigma**2 * np.abs(a))


def beat_spectrum(series: TimeSeries, rbw=30e3, sweep_time=14e-3, n_sweeps=1, span=5e6,
                  center=None, carrier=0.0, n_bins=501) -> Spectrum:
    """Swept-analyzer view of a unit tone at ``carrier + nu_minus(t)``.

    Each sweep scans ``n_bins`` bins upward across ``span`` in ``sweep_time``.
    Bin ``k`` sees the tone around its own time stamp through a Gaussian
    window; the local frequency and chirp are read off the recorded beat
    note, which is exact for a linearly chirped tone. Sweeps are spread
    evenly over the record. Returns the last sweep with the max-hold trace.
    """
    if rbw <= 0 or sweep_time <= 0 or n_sweeps < 1 or n_bins < 2:
        raise ValueError("rbw, sweep_time, n_sweeps and n_bins must be positive")
    if rbw < 1.0 / sweep_time:
        raise ValueError(f"rbw {rbw} Hz is finer than 1/sweep_time = {1 / sweep_time:.4g} Hz")
    duration = series.duration
    if n_sweeps * sweep_time > duration * (1 + 1e-9):
        raise ValueError(f"{n_sweeps} sweeps of {sweep_time} s do not fit in {duration} s")
    tone = carrier + np.asarray(series.nu_minus, dtype=float)
    if center is None:
        center = float(np.mean(tone))
    f = center + np.linspace(-0.5 * span, 0.5 * span, n_bins)
    chirp = np.gradient(tone, series.t) if len(tone) > 1 else np.zeros_like(tone)
    sigma = gaussian_window_sigma(rbw)

    stride = (duration - sweep_time) / (n_sweeps - 1) if n_sweeps > 1 else 0.0
    frac = np.arange(n_bins) / (n_bins - 1)
    maxhold = np.zeros(n_bins)
    sweep = maxhold
    for j in range(n_sweeps):
        tk = j * stride + frac * sweep_time
        nu = np.interp(tk, series.t, tone)
        beta = np.interp(tk, series.t, chirp)
        sweep = _chirped_response(f - nu, beta, sigma)
        np.maximum(maxhold, sweep, out=maxhold)
    return Spectrum(f=f, psd=sweep, rbw=rbw, sweep_time=sweep_time, maxhold=maxhold)


def peak_hwhm(f, psd):
    """Half width at half maximum of the highest peak, by linear interpolation."""
    f = np.asarray(f)
    psd = np.asarray(psd)
    k = int(np.argmax(psd))
    half = 0.5 * psd[k]
    lo = k
    while lo > 0 and psd[lo] > half:
        lo -= 1
    hi = k
    while hi < len(psd) - 1 and psd[hi] > half:
        hi += 1
    f_lo = np.interp(half, [psd[lo], psd[lo + 1]], [f[lo], f[lo + 1]])
    f_hi = np.interp(half, [psd[hi], psd[hi - 1]], [f[hi], f[hi - 1]])
    return 0.5 * (f_hi - f_lo)


def maxhold_extent(spectrum: Spectrum, level=0.5):
    """Span between the outermost bins where max-hold exceeds ``level`` of its peak."""
    mh = spectrum.maxhold if spectrum.maxhold is not None else spectrum.psd
    above = np.flatnonzero(mh >= level * np.max(mh))
    return float(spectrum.f[above[-1]] - spectrum.f[above[0]])


def psd_estimate(series: TimeSeries, segment_length: int, overlap: float = 0.5,
                 column: str = "nu_minus") -> Spectrum:
    """Averaged Hann-windowed periodogram (one-sided density) of one record column.

    The integral of the returned PSD equals the mean-square of the
    (segment-mean-removed) data.
    """
    x = np.asarray(getattr(series, column), dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if not 1 < segment_length <= x.size:
        raise ValueError(f"segment_length must lie in (1, {x.size}]")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    fs = series.sample_rate
    f, p = signal.welch(x, fs=fs, window="hann", nperseg=segment_length,
                        noverlap=int(overlap * segment_length), detrend="constant",
                        scaling="density")
    return Spectrum(f=f, psd=p, rbw=1.5 * fs / segment_length)
