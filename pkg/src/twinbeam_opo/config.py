"""Scenario configuration: a sectioned ``key = value`` text format.

Grammar (one item per line)::

    # comment               (also allowed after a value)
    seed = 7                (global keys come before the first section)
    [noise]
    temp_sigma_K = 1e-4
    vibration_lines = 70:20:7.5e-7, 100:20:7.5e-7

Keys carry their SI unit as a suffix. Unknown sections or keys are errors;
missing keys take the defaults in :data:`DEFAULTS`.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .cavity import CavityGeometry, check_geometry
from .crystal import CrystalParams, calibrate_derivatives
from .detection import DetectorPair, DifferenceModel
from .efficiency import EfficiencyModel
from .servo import NoiseBudget, OpoPlant, ServoConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending ``section.key``."""

    def __init__(self, key, message):
        super().__init__(message)
        self.key = key


_NB = NoiseBudget()
_SV = ServoConfig()
_CG = CavityGeometry()
_DP = DetectorPair()
_DM = DifferenceModel()

DEFAULTS = {
    "": {"seed": 0},
    "crystal": {
        "length_m": 0.01,
        "n_mean": 1.8,
        "birefringence": -0.09,
        "dbirefringence_dx_per_m": CrystalParams().dbirefringence_dx,
        "reference_temperature_K": 295.0,
        "calibrate": True,
        "dnu_plus_dT_Hz_per_K": -2.12e9,
        "dnu_minus_dT_Hz_per_K": 0.24e9,
        "dnu_plus_dV_Hz_per_V": 1.34e6,
        "dnu_minus_dV_Hz_per_V": 0.59e6,
        "dpath_dT_signal_m_per_K": 0.0,
        "dpath_dT_idler_m_per_K": 0.0,
        "dpath_dV_signal_m_per_V": 0.0,
        "dpath_dV_idler_m_per_V": 0.0,
    },
    "cavity": {
        "air_path_m": _CG.air_path_L,
        "pump_wavelength_m": _CG.pump_wavelength,
        "cold_hwhm_Hz": _CG.cold_hwhm,
        "mirror_R_signal_in": _CG.mirror_R_signal_in,
        "mirror_R_signal_out": _CG.mirror_R_signal_out,
        "mirror_R_pump_in": _CG.mirror_R_pump_in,
        "mirror_R_pump_out": _CG.mirror_R_pump_out,
        "mirror_curvature_m": _CG.mirror_curvature,
        "mirror_separation_m": _CG.mirror_separation,
        "linewidth_asymmetry": _CG.linewidth_asymmetry,
        "output_power_max_W": 0.08,
        "nu_minus_setpoint_Hz": 0.0,
    },
    "noise": {
        "pump_freq_rate_Hz_per_ms": _NB.pump_freq_rate,
        "pump_correlation_time_s": _NB.pump_correlation_time,
        "pump_drift_Hz_per_min": _NB.pump_drift,
        "temp_sigma_K": _NB.temp_sigma,
        "temp_bandwidth_Hz": _NB.temp_bandwidth,
        "length_sigma_m": _NB.length_sigma,
        "length_bandwidth_Hz": _NB.length_bandwidth,
        "length_drift_sigma_m": _NB.length_drift_sigma,
        "length_drift_bandwidth_Hz": _NB.length_drift_bandwidth,
        "vibration_lines": _NB.vibration_lines,
        "jitter_band_Hz": _NB.jitter_band,
    },
    "servo": {
        "dither_frequency_Hz": _SV.dither_frequency,
        "dither_amplitude_m": _SV.dither_amplitude,
        "lockin_time_constant_s": _SV.lockin_time_constant,
        "proportional_gain": _SV.loop_proportional_gain,
        "integral_gain_per_s": _SV.loop_integral_gain,
        "servo_bandwidth_Hz": _SV.servo_bandwidth,
        "actuator_range_m": _SV.actuator_range,
        "error_signal_snr": _SV.error_signal_snr,
        "eo_bandwidth_Hz": _SV.eo_bandwidth,
        "eo_range_V": _SV.eo_range,
        "averaged": True,
        "internal_rate_Hz": "auto",
    },
    "detection": {
        "quantum_efficiency": _DP.quantum_efficiency,
        "cmrr_dB": _DP.cmrr_db,
        "electronic_floor_dB": _DP.electronic_floor_db,
        "escape_efficiency": "auto",
        "squeezing_target_dB": -4.0,
        "squeezing_reference_Hz": 200e3,
        "crosstalk_power": 10 ** -5.2,
        "cavity_hwhm_Hz": _DM.f_c,
        "beat_frequency_Hz": _DM.beat_frequency,
        "beat_level_dB": _DM.beat_level_db,
        "common_mode_frequency_Hz": _DM.common_mode_frequency,
        "common_mode_level_dB": "none",
        "rbw_Hz": _DM.rbw,
        "f_min_Hz": 10e3,
        "f_max_Hz": 50e6,
        "n_points": 2000,
        "n_averages": 0,
    },
    "efficiency": {
        "p_threshold_W": 25.6e-3,
        "k_factor": 3.26,
        "n_points": 20,
        "n_min": 1.04,
        "n_max": 4.0,
        "noise_rel": 0.0,
    },
}


def _parse_value(key, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        if key.endswith("vibration_lines"):
            if raw == "":
                return ()
            return tuple(tuple(float(p) for p in item.split(":")) for item in raw.split(","))
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.split(","))
        if isinstance(default, str):
            return raw if raw.lower() in ("auto", "none") else float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse value {raw!r} for {key}") from None
    raise ConfigError(key, f"unsupported key {key}")


def parse_config(text: str) -> dict:
    """Parse config text into a fully resolved ``{section: {key: value}}`` dict."""
    resolved = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(line, f"line {lineno}: malformed section header")
            section = line[1:-1].strip()
            if section not in DEFAULTS or section == "":
                raise ConfigError(section, f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        full = f"{section}.{key}" if section else key
        if key not in DEFAULTS[section]:
            raise ConfigError(full, f"line {lineno}: unknown key {full}")
        resolved[section][key] = _parse_value(full, raw, DEFAULTS[section][key])
    return resolved


def load_config(path=None) -> dict:
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join(":".join(repr(float(x)) for x in item) for item in v)
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def render_config(cfg: dict) -> str:
    """Canonical text form of a resolved config (parses back to the same dict)."""
    lines = [f"{k} = {_fmt(v)}" for k, v in cfg[""].items()]
    for sec, keys in cfg.items():
        if sec == "":
            continue
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in keys.items())
    return "\n".join(lines) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()


@dataclass(frozen=True)
class Scenario:
    """Model objects built from a resolved config."""

    crystal: CrystalParams
    geometry: CavityGeometry
    plant: OpoPlant
    noise: NoiseBudget
    servo: ServoConfig
    averaged: bool
    internal_rate: float
    detectors: DetectorPair
    difference: DifferenceModel
    crosstalk_power: float
    efficiency: EfficiencyModel


def _build(section, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(section, f"[{section}] {exc}") from None


def build_scenario(cfg: dict) -> Scenario:
    c, g, n, s, d, e = (cfg[k] for k in
                        ("crystal", "cavity", "noise", "servo", "detection", "efficiency"))
    geometry = _build("cavity", lambda: CavityGeometry(
        air_path_L=g["air_path_m"], pump_wavelength=g["pump_wavelength_m"],
        cold_hwhm=g["cold_hwhm_Hz"], mirror_R_signal_in=g["mirror_R_signal_in"],
        mirror_R_signal_out=g["mirror_R_signal_out"], mirror_R_pump_in=g["mirror_R_pump_in"],
        mirror_R_pump_out=g["mirror_R_pump_out"], mirror_curvature=g["mirror_curvature_m"],
        mirror_separation=g["mirror_separation_m"],
        linewidth_asymmetry=g["linewidth_asymmetry"]))

    def make_crystal():
        base = CrystalParams.from_mean_birefringence(
            c["n_mean"], c["birefringence"], length_l=c["length_m"],
            dbirefringence_dx=c["dbirefringence_dx_per_m"],
            reference_temperature=c["reference_temperature_K"],
            dpath_dT_signal=c["dpath_dT_signal_m_per_K"],
            dpath_dT_idler=c["dpath_dT_idler_m_per_K"],
            dpath_dV_signal=c["dpath_dV_signal_m_per_V"],
            dpath_dV_idler=c["dpath_dV_idler_m_per_V"])
        if c["calibrate"]:
            base = calibrate_derivatives(
                geometry, (c["dnu_plus_dT_Hz_per_K"], c["dnu_minus_dT_Hz_per_K"]),
                (c["dnu_plus_dV_Hz_per_V"], c["dnu_minus_dV_Hz_per_V"]), base)
        return base

    crystal = _build("crystal", make_crystal)
    _build("cavity", lambda: check_geometry(geometry, crystal))
    plant = OpoPlant.from_params(crystal, geometry, p_max=g["output_power_max_W"],
                                 nu_minus_setpoint=g["nu_minus_setpoint_Hz"])
    noise = _build("noise", lambda: NoiseBudget(
        pump_freq_rate=n["pump_freq_rate_Hz_per_ms"],
        pump_correlation_time=n["pump_correlation_time_s"],
        pump_drift=n["pump_drift_Hz_per_min"], temp_sigma=n["temp_sigma_K"],
        temp_bandwidth=n["temp_bandwidth_Hz"], length_sigma=n["length_sigma_m"],
        length_bandwidth=n["length_bandwidth_Hz"],
        length_drift_sigma=n["length_drift_sigma_m"],
        length_drift_bandwidth=n["length_drift_bandwidth_Hz"],
        vibration_lines=n["vibration_lines"], jitter_band=n["jitter_band_Hz"]))
    servo = _build("servo", lambda: ServoConfig(
        dither_frequency=s["dither_frequency_Hz"], dither_amplitude=s["dither_amplitude_m"],
        lockin_time_constant=s["lockin_time_constant_s"],
        loop_proportional_gain=s["proportional_gain"],
        loop_integral_gain=s["integral_gain_per_s"], servo_bandwidth=s["servo_bandwidth_Hz"],
        actuator_range=s["actuator_range_m"], error_signal_snr=s["error_signal_snr"],
        eo_bandwidth=s["eo_bandwidth_Hz"], eo_range=s["eo_range_V"]))

    def make_detectors():
        kw = dict(quantum_efficiency=d["quantum_efficiency"], cmrr_db=d["cmrr_dB"],
                  electronic_floor_db=d["electronic_floor_dB"])
        if d["escape_efficiency"] == "auto":
            return DetectorPair.calibrated(d["squeezing_target_dB"],
                                           d["squeezing_reference_Hz"],
                                           d["cavity_hwhm_Hz"], d["crosstalk_power"], **kw)
        if isinstance(d["escape_efficiency"], str):
            raise ValueError("escape_efficiency must be a number or 'auto'")
        return DetectorPair(escape_efficiency=d["escape_efficiency"], **kw)

    detectors = _build("detection", make_detectors)
    cm = d["common_mode_level_dB"]
    if isinstance(cm, str) and cm != "none":
        raise ConfigError("detection.common_mode_level_dB", "expected a number or 'none'")
    difference = DifferenceModel(
        f_c=d["cavity_hwhm_Hz"], beat_frequency=d["beat_frequency_Hz"],
        beat_level_db=d["beat_level_dB"], common_mode_frequency=d["common_mode_frequency_Hz"],
        common_mode_level_db=None if cm == "none" else cm, rbw=d["rbw_Hz"])
    efficiency = _build("efficiency", lambda: EfficiencyModel(e["p_threshold_W"], e["k_factor"]))
    internal_rate = s["internal_rate_Hz"]
    if isinstance(internal_rate, str):
        # auto: 50 kHz averaged, 16 samples per dither period resolved
        internal_rate = None
    return Scenario(crystal, geometry, plant, noise, servo, s["averaged"],
                    internal_rate, detectors, difference, d["crosstalk_power"],
                    efficiency)
