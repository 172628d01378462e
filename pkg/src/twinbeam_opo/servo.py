"""Time-domain simulation of the locked and free-running OPO.

Noise drives the air path, crystal temperature, pump frequency and transverse
crystal position. The tuning matrix maps them onto the sum-frequency detuning
and the beat note; a dither lock-in servo acting on the PZT holds the output
power at its peak. An optional second integrator on the crystal voltage
closes an electro-optic loop on the beat note.

Two integration modes share one compiled kernel:

* dither-resolved: the 25 kHz dither and the lock-in demodulation are
  simulated sample by sample (needs ``dt <= 1/(10 f_dither)``);
* dither-averaged: the lock-in input is replaced by its exact average over a
  dither period, so the effective sample rate only has to resolve the loop
  (default 50 kHz). Long runs use this mode.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel as K
from .cavity import (
    C_LIGHT,
    CavityGeometry,
    TuningMatrix,
    mode_hop_spacing,
    transverse_tuning,
    tuning_matrix,
)
from .crystal import IDLER, SIGNAL, CrystalParams, optical_path
from .noise import bandlimited_process, ou_process, resonator_process
from .records import TimeSeries

DEFAULT_INTERNAL_RATE = 50e3
_CHUNK = 1 << 16


@dataclass(frozen=True)
class NoiseBudget:
    """Stochastic drivers of a run.

    pump_freq_rate : Hz per ms, rms step of the fast pump random walk
    pump_correlation_time : s, mean-reversion time bounding that walk
    pump_drift : Hz per minute, rms slope of the slow linear pump ramp
    temp_sigma, temp_bandwidth : crystal temperature residual (K, Hz)
    length_sigma, length_bandwidth : fast acoustic air-path noise (m, Hz)
    length_drift_sigma, length_drift_bandwidth : slow air-path wander (m, Hz)
    vibration_lines : (frequency Hz, quality factor, rms transverse displacement m)
    jitter_band : Hz, band where the observed beat jitter lives
    """

    pump_freq_rate: float = 10e3
    pump_correlation_time: float = 0.01
    pump_drift: float = 1e6
    temp_sigma: float = 0.1e-3
    temp_bandwidth: float = 1.0
    length_sigma: float = 0.01e-9
    length_bandwidth: float = 3e3
    length_drift_sigma: float = 0.1e-9
    length_drift_bandwidth: float = 1.0
    vibration_lines: tuple = ((70.0, 20.0, 7.5e-7), (100.0, 20.0, 7.5e-7))
    jitter_band: tuple = (100.0, 500.0)

    def __post_init__(self):
        for name in ("pump_freq_rate", "pump_drift", "temp_sigma", "length_sigma",
                     "length_drift_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("pump_correlation_time", "temp_bandwidth", "length_bandwidth",
                     "length_drift_bandwidth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for f0, q, amp in self.vibration_lines:
            if f0 <= 0 or q <= 0.5 or amp < 0:
                raise ValueError(f"bad vibration line {(f0, q, amp)}")

    @classmethod
    def quiet(cls) -> "NoiseBudget":
        """All noise sources switched off."""
        return cls(pump_freq_rate=0.0, pump_drift=0.0, temp_sigma=0.0, length_sigma=0.0,
                   length_drift_sigma=0.0,
                   vibration_lines=tuple((f, q, 0.0) for f, q, _ in cls().vibration_lines))

    def with_vibration_scale(self, scale: float) -> "NoiseBudget":
        return replace(self, vibration_lines=tuple(
            (f, q, a * scale) for f, q, a in self.vibration_lines))


@dataclass(frozen=True)
class ServoConfig:
    """Dither lock-in length servo, plus an optional electro-optic beat-note loop.

    The error signal is normalized so that, near lock, it reads the
    sum-frequency detuning in Hz. Gains are then dimensionless (proportional)
    and in s^-1 (integral); the PZT command is ``-(Kp e + Ki int e) / (d nu+/dL)``.
    """

    dither_frequency: float = 25e3
    dither_amplitude: float = 0.1e-9
    lockin_time_constant: float = 1.0 / (2 * math.pi * 10e3)
    loop_proportional_gain: float = 0.3
    loop_integral_gain: float = 2 * math.pi * 4.5e3
    servo_bandwidth: float = 3e3
    actuator_range: float = 1e-6
    error_signal_snr: float = 1e3
    eo_bandwidth: float = 0.0
    eo_range: float = 100.0

    def __post_init__(self):
        if self.dither_frequency <= self.servo_bandwidth:
            raise ValueError("dither frequency must exceed the servo bandwidth")
        if not (math.isfinite(self.loop_proportional_gain)
                and math.isfinite(self.loop_integral_gain)):
            raise ValueError("loop gains must be finite")
        if self.actuator_range <= 0:
            raise ValueError("actuator_range must be positive")
        if self.error_signal_snr <= 0:
            raise ValueError("error_signal_snr must be positive")


@dataclass(frozen=True)
class OpoPlant:
    """Linearized OPO seen by the servo: tuning rates, linewidth and hop geometry."""

    tuning: TuningMatrix
    transverse: tuple
    cold_hwhm: float
    p_max: float
    hop_length: float
    fsr_sum: float
    linewidth_asymmetry: float
    nu_minus_setpoint: float = 0.0

    @classmethod
    def from_params(cls, crystal: CrystalParams, geometry: CavityGeometry,
                    p_max=0.08, nu_minus_setpoint=0.0):
        L = geometry.air_path_L
        fsr_s = C_LIGHT / (2 * (L + optical_path(crystal, SIGNAL)))
        fsr_i = C_LIGHT / (2 * (L + optical_path(crystal, IDLER)))
        # pair (p_s + 1, p_i - 1) resonates at a length shifted by -sign(dn) * hop
        hop = -math.copysign(mode_hop_spacing(crystal, geometry), crystal.birefringence)
        return cls(
            tuning=tuning_matrix(crystal, geometry),
            transverse=transverse_tuning(crystal, geometry),
            cold_hwhm=geometry.cold_hwhm,
            p_max=p_max,
            hop_length=hop,
            fsr_sum=fsr_s + fsr_i,
            linewidth_asymmetry=geometry.linewidth_asymmetry,
            nu_minus_setpoint=nu_minus_setpoint,
        )


@dataclass(frozen=True)
class SimState:
    """Snapshot of a run. Physical fields are exposed as properties of ``vec``."""

    vec: np.ndarray
    n_lines: int

    time = property(lambda self: self.vec[K.S_TIME])
    L = property(lambda self: self.vec[K.S_L], doc="air-path offset incl. actuator (m)")
    x = property(lambda self: self.vec[K.S_X])
    T = property(lambda self: self.vec[K.S_DT_TEMP], doc="offset from T0 (K)")
    V = property(lambda self: self.vec[K.S_V])
    nu_pump = property(lambda self: self.vec[K.S_DNU_PUMP], doc="pump offset (Hz)")
    nu_plus_detuning = property(lambda self: self.vec[K.S_DELTA])
    nu_minus = property(lambda self: self.vec[K.S_NU_MINUS])
    output_power = property(lambda self: self.vec[K.S_POWER])
    integrator_state = property(lambda self: self.vec[K.S_INTEGRATOR])
    error_signal = property(lambda self: self.vec[K.S_ERROR])
    actuator = property(lambda self: self.vec[K.S_L_ACT])
    hops = property(lambda self: int(self.vec[K.S_HOPS]))
    saturated = property(lambda self: bool(self.vec[K.S_SATURATED]))


def _lines(noise: NoiseBudget, dt):
    coef = np.zeros((len(noise.vibration_lines), 4))
    for j, (f0, q, amp) in enumerate(noise.vibration_lines):
        proc = resonator_process(f0, q, dt)
        coef[j] = (proc.A[0, 0], proc.A[0, 1], proc.B[0], amp)
    return coef


def _pump_rms(noise):
    # stationary rms of the bounded walk: step * sqrt(tau / (2 * 1 ms))
    return noise.pump_freq_rate * math.sqrt(noise.pump_correlation_time / 2e-3)


def _lp_alpha(servo, dt):
    return 1.0 - math.exp(-dt / servo.lockin_time_constant)


def dither_depth(servo: ServoConfig, plant: OpoPlant) -> float:
    """Signed dither amplitude in Hz of sum-frequency detuning."""
    return plant.tuning.values[0, 0] * servo.dither_amplitude


def discriminant_slope(servo: ServoConfig, plant: OpoPlant) -> float:
    """Small-signal slope of the averaged lock-in output at zero detuning (per Hz)."""
    d = dither_depth(servo, plant)
    h = 1e-4 * plant.cold_hwhm
    return (K.dither_discriminant(h, d, plant.cold_hwhm)
            - K.dither_discriminant(-h, d, plant.cold_hwhm)) / (2 * h)


def _params(dt, noise, servo, plant, locked, resolved):
    p = np.zeros(K.N_PARAMS)
    m = plant.tuning.values
    p[K.P_DT] = dt
    p[K.P_HWHM] = plant.cold_hwhm
    p[K.P_PMAX] = plant.p_max
    p[K.P_MPL], p[K.P_MPT], p[K.P_MPV] = m[0, :3]
    p[K.P_MML], p[K.P_MMT], p[K.P_MMV] = m[1, :3]
    p[K.P_MPX], p[K.P_MMX] = plant.transverse
    p[K.P_ASYM] = plant.linewidth_asymmetry
    p[K.P_HOP_LEN] = plant.hop_length
    p[K.P_FSR_SUM] = plant.fsr_sum
    for (sig_i, rho_i, g_i), sigma, bw in (
        ((K.P_LF_SIG, K.P_LF_RHO, K.P_LF_G), noise.length_sigma, noise.length_bandwidth),
        ((K.P_LD_SIG, K.P_LD_RHO, K.P_LD_G), noise.length_drift_sigma,
         noise.length_drift_bandwidth),
        ((K.P_T_SIG, K.P_T_RHO, K.P_T_G), noise.temp_sigma, noise.temp_bandwidth),
    ):
        proc = bandlimited_process(bw, dt)
        p[sig_i], p[rho_i], p[g_i] = sigma, proc.A[0, 0], proc.B[0]
    pump_proc = ou_process(1.0 / noise.pump_correlation_time, dt)
    p[K.P_PUMP_SIG] = _pump_rms(noise)
    p[K.P_PUMP_RHO], p[K.P_PUMP_G] = pump_proc.A[0, 0], pump_proc.B[0]
    p[K.P_NU_MINUS_SET] = plant.nu_minus_setpoint
    if servo is not None and locked:
        p[K.P_LOCKED] = 1.0
        p[K.P_RESOLVED] = 1.0 if resolved else 0.0
        p[K.P_DITHER_D] = dither_depth(servo, plant)
        p[K.P_DITHER_F] = servo.dither_frequency
        p[K.P_DITHER_LEN] = servo.dither_amplitude
        p[K.P_HP_ALPHA] = 1.0 - math.exp(-2 * math.pi * servo.dither_frequency / 10 * dt)
        alpha = _lp_alpha(servo, dt)
        p[K.P_LP_ALPHA] = alpha
        slope = discriminant_slope(servo, plant)
        p[K.P_INV_SLOPE] = 1.0 / slope
        # white noise at the mixer such that the filtered error has rms hwhm/snr
        beta = 1.0 - alpha
        gain2 = alpha**2 * (1 + beta**2) / (1 - beta**2) ** 3
        p[K.P_ERR_SIG] = plant.cold_hwhm / servo.error_signal_snr * abs(slope) / math.sqrt(gain2)
        p[K.P_KP] = servo.loop_proportional_gain
        p[K.P_KI] = servo.loop_integral_gain
        p[K.P_ACT_RANGE] = servo.actuator_range
        p[K.P_EO_GAIN] = 2 * math.pi * servo.eo_bandwidth
        p[K.P_EO_RANGE] = servo.eo_range
    return p


def initial_state(plant: OpoPlant, noise: NoiseBudget, rng, dt, detuning=0.0) -> SimState:
    """Start a run with every noise process drawn from its stationary law.

    ``detuning`` offsets the starting sum-frequency detuning (Hz).
    """
    n_lines = len(noise.vibration_lines)
    vec = np.zeros(K.S_LINES + 2 * n_lines)
    vec[[K.S_LF1, K.S_LF2]] = bandlimited_process(noise.length_bandwidth, dt).initial_state(rng)
    vec[[K.S_LD1, K.S_LD2]] = bandlimited_process(
        noise.length_drift_bandwidth, dt).initial_state(rng)
    vec[[K.S_T1, K.S_T2]] = bandlimited_process(noise.temp_bandwidth, dt).initial_state(rng)
    vec[K.S_PUMP] = ou_process(1.0 / noise.pump_correlation_time, dt).initial_state(rng)[0]
    vec[K.S_PUMP_SLOPE] = noise.pump_drift / 60.0 * rng.standard_normal()
    for j, (f0, q, _) in enumerate(noise.vibration_lines):
        i0 = K.S_LINES + 2 * j
        vec[i0:i0 + 2] = resonator_process(f0, q, dt).initial_state(rng)
    # place the reference resonance so the initial detuning is exactly ``detuning``
    m = plant.tuning.values
    x0 = sum(amp * vec[K.S_LINES + 2 * j] for j, (_, _, amp) in enumerate(noise.vibration_lines))
    l0 = noise.length_sigma * vec[K.S_LF2] + noise.length_drift_sigma * vec[K.S_LD2]
    temp0 = noise.temp_sigma * vec[K.S_T2]
    pump0 = _pump_rms(noise) * vec[K.S_PUMP]
    disturbance = m[0, 0] * l0 + m[0, 1] * temp0 + plant.transverse[0] * x0 - pump0
    vec[K.S_L_REF] = (disturbance - detuning) / m[0, 0]
    vec[K.S_NU_MINUS_PAIR] = plant.nu_minus_setpoint
    vec[K.S_DELTA] = detuning
    vec[K.S_NU_MINUS] = (plant.nu_minus_setpoint + m[1, 0] * (l0 - vec[K.S_L_REF])
                         + m[1, 1] * temp0 + plant.transverse[1] * x0
                         - plant.linewidth_asymmetry * detuning)
    vec[K.S_POWER] = plant.p_max / (1 + (detuning / plant.cold_hwhm) ** 2)
    vec[K.S_LI_DC] = vec[K.S_POWER] / plant.p_max
    vec[K.S_X] = x0
    vec[K.S_L] = l0
    vec[K.S_DT_TEMP] = temp0
    vec[K.S_DNU_PUMP] = pump0
    return SimState(vec, n_lines)


def _n_normals(noise):
    return K.N_LINES + len(noise.vibration_lines)


def step(state: SimState, dt, noise: NoiseBudget, servo: ServoConfig | None,
         plant: OpoPlant, rng, averaged=False) -> SimState:
    """Advance one time step and return the new state (the input is untouched)."""
    if servo is not None and not averaged and dt > 1.0 / (10 * servo.dither_frequency):
        raise ValueError("dt must resolve the dither: dt <= 1/(10 f_dither)")
    vec = state.vec.copy()
    params = _params(dt, noise, servo, plant, servo is not None, not averaged)
    normals = rng.standard_normal((1, _n_normals(noise)))
    out = np.zeros((1, 4))
    K.advance(vec, params, _lines(noise, dt), normals, 1, 1, out)
    return SimState(vec, state.n_lines)


def run(duration, sample_rate, locked, seed, plant: OpoPlant, noise: NoiseBudget,
        servo: ServoConfig | None = None, averaged=True, internal_rate=None,
        detuning=0.0) -> TimeSeries:
    """Simulate ``duration`` seconds and record block averages at ``sample_rate``.

    Parameters
    ----------
    locked : bool
        Close the length loop (``servo`` defaults to ``ServoConfig()``).
    averaged : bool
        Use the dither-averaged lock-in model. With ``averaged=False`` the
        dither is resolved with 16 samples per period.
    internal_rate : float, optional
        Integration rate in Hz, rounded up to an integer multiple of
        ``sample_rate``.

    Returns
    -------
    TimeSeries
        Identical for identical arguments, down to the last bit.
    """
    if locked and servo is None:
        servo = ServoConfig()
    if internal_rate is None:
        if locked and not averaged:
            internal_rate = 16 * servo.dither_frequency
        else:
            internal_rate = DEFAULT_INTERNAL_RATE
    decim = max(1, math.ceil(internal_rate / sample_rate))
    dt = 1.0 / (decim * sample_rate)
    if locked and not averaged and dt > 1.0 / (10 * servo.dither_frequency):
        raise ValueError("internal rate too low to resolve the dither")
    n_rec = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)
    state = initial_state(plant, noise, rng, dt, detuning)
    vec = state.vec.copy()
    params = _params(dt, noise, servo, plant, locked, not averaged)
    lines = _lines(noise, dt)
    n_norm = _n_normals(noise)

    out = np.empty((n_rec, 4))
    per_chunk = max(1, _CHUNK // decim)
    row = 0
    while row < n_rec:
        rows = min(per_chunk, n_rec - row)
        normals = rng.standard_normal((rows * decim, n_norm))
        K.advance(vec, params, lines, normals, rows * decim, decim, out[row:row + rows])
        row += rows

    t = (np.arange(n_rec) + 0.5) / sample_rate
    return TimeSeries(
        t=t, nu_minus=out[:, 0], nu_plus_detuning=out[:, 1], power=out[:, 2],
        hop_flag=out[:, 3].astype(np.int8), sample_rate=sample_rate,
        meta={"seed": seed, "locked": bool(locked), "averaged": bool(averaged),
              "internal_rate": decim * sample_rate, "hops": int(vec[K.S_HOPS]),
              "saturated": bool(vec[K.S_SATURATED])},
    )


def locked_range(scale, budget, plant, servo, seed, duration=60.0, sample_rate=2e3):
    series = run(duration, sample_rate, True, seed, plant,
                 budget.with_vibration_scale(scale), servo)
    return series.drift_range()


def calibrate_vibration_coupling(target_locked_range, budget: NoiseBudget, plant: OpoPlant,
                                 servo: ServoConfig | None = None, seed=0, duration=60.0,
                                 sample_rate=2e3, max_scale=1e3, rtol=0.1):
    """Rescale the vibration amplitudes until the locked beat range hits a target.

    Bisection on a common amplitude scale; each probe is a full locked run with
    the same seed. Returns the rescaled budget.

    Raises
    ------
    RuntimeError
        If the target cannot be bracketed between zero and ``max_scale``; the
        message carries the achieved range.
    """
    if target_locked_range < 0:
        raise ValueError("target must be >= 0")
    servo = servo or ServoConfig()
    probe = lambda s: locked_range(s, budget, plant, servo, seed, duration, sample_rate)
    lo, hi = 0.0, 1.0
    r_lo = probe(lo)
    if abs(r_lo - target_locked_range) <= rtol * target_locked_range or (
            target_locked_range == 0 and r_lo == 0):
        return budget.with_vibration_scale(0.0)
    if r_lo > target_locked_range:
        raise RuntimeError(
            f"target {target_locked_range:.4g} Hz unreachable: zero vibration already gives "
            f"{r_lo:.4g} Hz")
    r_hi = probe(hi)
    close = lambda r: abs(r - target_locked_range) <= rtol * target_locked_range
    while not close(r_hi) and r_hi < target_locked_range:
        if hi >= max_scale:
            raise RuntimeError(
                f"target {target_locked_range:.4g} Hz unreachable: scale {hi} gives {r_hi:.4g} Hz")
        lo, r_lo = hi, r_hi
        hi = min(2 * hi, max_scale)
        r_hi = probe(hi)
    if close(r_hi):
        return budget.with_vibration_scale(hi)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        r_mid = probe(mid)
        if close(r_mid):
            return budget.with_vibration_scale(mid)
        if r_mid < target_locked_range:
            lo = mid
        else:
            hi = mid
    return budget.with_vibration_scale(0.5 * (lo + hi))


def seed_sweep(seeds, duration, sample_rate, locked, plant, noise, servo=None, workers=None):
    """Independent runs over several seeds; runs share nothing, so they fan out."""
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(
            lambda s: run(duration, sample_rate, locked, s, plant, noise, servo), seeds))
