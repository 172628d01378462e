"""Doubly resonant standing-wave cavity: resonances, clusters and mode hops."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .crystal import IDLER, SIGNAL, CrystalParams, optical_path

C_LIGHT = 299_792_458.0

BOYD_KLEINMAN_RATIO = 0.59


@dataclass(frozen=True)
class CavityGeometry:
    """Air path, pump and mirror data for the OPO resonator.

    ``linewidth_asymmetry`` is (gamma_s - gamma_i)/(gamma_s + gamma_i), the
    relative difference of the signal and idler cavity damping rates. It sets
    how a sum-frequency detuning is shared between the two waves (frequency
    pulling) and therefore how much of it leaks into the beat note.
    """

    air_path_L: float = 0.092
    pump_wavelength: float = 532e-9
    cold_hwhm: float = 3e6
    mirror_R_signal_in: float = 0.999
    mirror_R_signal_out: float = 0.990
    mirror_R_pump_in: float = 0.6
    mirror_R_pump_out: float = 0.1
    mirror_curvature: float = 0.05
    mirror_separation: float = 0.102
    linewidth_asymmetry: float = 0.5

    def __post_init__(self):
        if self.air_path_L <= 0:
            raise ValueError("air_path_L must be positive")
        if self.cold_hwhm <= 0:
            raise ValueError("cold_hwhm must be positive")
        for name in ("mirror_R_signal_in", "mirror_R_signal_out",
                     "mirror_R_pump_in", "mirror_R_pump_out"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"{name}={r} outside [0, 1]")
        if not -1.0 < self.linewidth_asymmetry < 1.0:
            raise ValueError("linewidth_asymmetry must lie in (-1, 1)")

    @property
    def pump_frequency(self) -> float:
        return C_LIGHT / self.pump_wavelength


def check_geometry(geometry: CavityGeometry, crystal: CrystalParams, rtol=0.01):
    """Raise if the mirror separation disagrees with air path + crystal length."""
    expected = geometry.air_path_L + crystal.length_l
    if abs(geometry.mirror_separation - expected) > rtol * expected:
        raise ValueError(
            f"mirror_separation {geometry.mirror_separation} m inconsistent with "
            f"air path + crystal = {expected} m"
        )


@dataclass(frozen=True)
class ModePair:
    p_signal: int
    p_idler: int
    nu_signal: float
    nu_idler: float
    detuning_signal: float = 0.0
    detuning_idler: float = 0.0

    @property
    def beat(self) -> float:
        return self.nu_signal - self.nu_idler


class ClusterMode(NamedTuple):
    l_offset: float
    pair: ModePair
    cluster_label: int
    intra_label: int


@dataclass(frozen=True)
class TuningMatrix:
    """Rows (nu_plus, nu_minus); columns (L [Hz/m], T [Hz/K], V [Hz/V], nu_p [1])."""

    values: np.ndarray

    COLUMNS = ("L", "T", "V", "nu_p")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.COLUMNS.index(name)]

    @property
    def plus(self) -> np.ndarray:
        return self.values[0]

    @property
    def minus(self) -> np.ndarray:
        return self.values[1]


def _total_path(crystal, geometry, polarization, L=None, T=None, V=0.0, x=0.0):
    if L is None:
        L = geometry.air_path_L
    return L + optical_path(crystal, polarization, T, V, x)


def resonance_frequency(p, polarization, L, crystal, T=None, V=0.0, x=0.0):
    """Frequency of longitudinal mode ``p``: p c / (2 (L + n l))."""
    if np.any(np.asarray(p) < 1):
        raise ValueError("mode number must be >= 1")
    return p * C_LIGHT / (2.0 * (L + optical_path(crystal, polarization, T, V, x)))


def fsr(polarization, L, crystal, T=None, V=0.0, x=0.0):
    return C_LIGHT / (2.0 * (L + optical_path(crystal, polarization, T, V, x)))


def length_tuning_rate(polarization, crystal, geometry, T=None, V=0.0, x=0.0):
    """d nu / dL at fixed mode number, evaluated at degeneracy nu = nu_p/2."""
    nu = 0.5 * geometry.pump_frequency
    return -nu / _total_path(crystal, geometry, polarization, None, T, V, x)


def tuning_matrix(crystal: CrystalParams, geometry: CavityGeometry) -> TuningMatrix:
    """Partial derivatives of (nu_plus, nu_minus) on the degenerate branch.

    Evaluated at the reference temperature, zero voltage and zero transverse
    offset, with no mode hop. The pump column is (1, 0): the oscillation sum
    follows the pump.
    """
    rate_s = length_tuning_rate(SIGNAL, crystal, geometry)
    rate_i = length_tuning_rate(IDLER, crystal, geometry)
    d_s = np.array([rate_s, rate_s * crystal.dpath_dT_signal, rate_s * crystal.dpath_dV_signal])
    d_i = np.array([rate_i, rate_i * crystal.dpath_dT_idler, rate_i * crystal.dpath_dV_idler])
    values = np.empty((2, 4))
    values[0, :3] = d_s + d_i
    values[1, :3] = d_s - d_i
    values[:, 3] = (1.0, 0.0)
    return TuningMatrix(values)


def transverse_tuning(crystal: CrystalParams, geometry: CavityGeometry):
    """(d nu_plus/dx, d nu_minus/dx) in Hz/m from the birefringence gradient."""
    rate_s = length_tuning_rate(SIGNAL, crystal, geometry)
    rate_i = length_tuning_rate(IDLER, crystal, geometry)
    dpath = 0.5 * crystal.dbirefringence_dx * crystal.length_l
    ds, di = rate_s * dpath, -rate_i * dpath
    return ds + di, ds - di


def mode_hop_spacing(crystal: CrystalParams, geometry: CavityGeometry) -> float:
    """First-order intra-cluster hop length |dn| / (n_mean + L/l) * lambda_p/2."""
    return (
        abs(crystal.birefringence)
        / (crystal.n_mean + geometry.air_path_L / crystal.length_l)
        * geometry.pump_wavelength / 2.0
    )


def cluster_spacing(geometry: CavityGeometry) -> float:
    return geometry.pump_wavelength / 2.0


def first_order_offset(crystal, geometry, d_sum, d_diff):
    """Length shift of a mode hop (d_sum = dps + dpi, d_diff = dps - dpi)."""
    eps = crystal.birefringence / (crystal.n_mean + geometry.air_path_L / crystal.length_l)
    return (np.asarray(d_sum) - 0.5 * eps * np.asarray(d_diff)) * geometry.pump_wavelength / 2.0


def doubly_resonant_length(p_s, p_i, path_s, path_i, pump_frequency):
    """Air path L where modes (p_s, p_i) satisfy nu_s + nu_i = nu_p.

    Solves p_s/(L + A) + p_i/(L + B) = 2 nu_p / c, a quadratic in L, keeping
    the physical root, then polishes it with one Newton step.
    """
    p_s = np.asarray(p_s, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    k = 2.0 * pump_frequency / C_LIGHT
    # shift to u = L + A for better conditioning
    d = path_i - path_s
    b = k * d - p_s - p_i
    c = -p_s * d
    disc = np.sqrt(b * b - 4.0 * k * c)
    # larger root; c <= 0 for d >= 0 so use the cancellation-free form
    u = np.where(b < 0, (-b + disc) / (2.0 * k), (-2.0 * c) / (b + disc))
    f = p_s / u + p_i / (u + d) - k
    df = -p_s / u**2 - p_i / (u + d) ** 2
    u = u - f / df
    return u - path_s


def mode_pair_at(crystal, geometry, p_s, p_i, L, T=None, V=0.0, x=0.0) -> ModePair:
    """Oscillation frequencies of pair (p_s, p_i) at air path ``L``.

    The sum mismatch Delta = r_s + r_i - nu_p of the two cavity resonances is
    shared according to ``geometry.linewidth_asymmetry``; nu_i is then fixed
    by energy conservation.
    """
    r_s = resonance_frequency(p_s, SIGNAL, L, crystal, T, V, x)
    r_i = resonance_frequency(p_i, IDLER, L, crystal, T, V, x)
    nu_p = geometry.pump_frequency
    mismatch = r_s + r_i - nu_p
    a = geometry.linewidth_asymmetry
    det_s = -0.5 * mismatch * (1.0 + a)
    det_i = -0.5 * mismatch * (1.0 - a)
    nu_s = r_s + det_s
    return ModePair(int(p_s), int(p_i), nu_s, nu_p - nu_s, det_s, det_i)


def reference_pair(crystal, geometry, T=None, V=0.0, x=0.0):
    """Mode numbers closest to degenerate oscillation at the nominal air path."""
    L = geometry.air_path_L
    nu_p = geometry.pump_frequency
    path_s = _total_path(crystal, geometry, SIGNAL, L, T, V, x)
    path_i = _total_path(crystal, geometry, IDLER, L, T, V, x)
    p_s = round(path_s * nu_p / C_LIGHT)
    p_i = round(path_i * nu_p / C_LIGHT)
    return p_s, p_i


def find_cluster_modes(
    crystal: CrystalParams,
    geometry: CavityGeometry,
    L_scan,
    T=None,
    V=0.0,
    x=0.0,
    max_beat=20e9,
) -> list[ClusterMode]:
    """Enumerate doubly resonant mode pairs inside an air-path scan window.

    Parameters
    ----------
    L_scan : (float, float)
        Scan interval as offsets (meters) from ``geometry.air_path_L``.
    max_beat : float
        Only pairs with |nu_s - nu_i| <= max_beat are kept (the phase-matched
        part of the cluster).

    Returns
    -------
    list of ClusterMode
        Sorted by length offset. Labels are (dps + dpi, dps - dpi) relative to
        :func:`reference_pair`.
    """
    lo, hi = float(L_scan[0]), float(L_scan[1])
    if not hi > lo:
        return []
    L0 = geometry.air_path_L
    nu_p = geometry.pump_frequency
    path_s = optical_path(crystal, SIGNAL, T, V, x)
    path_i = optical_path(crystal, IDLER, T, V, x)
    ps0, pi0 = reference_pair(crystal, geometry, T, V, x)

    # beat steps by fsr_s + fsr_i for every change of 2 in the intra label
    fsr_sum = C_LIGHT / (2 * (L0 + path_s)) + C_LIGHT / (2 * (L0 + path_i))
    half_lp = geometry.pump_wavelength / 2.0
    L_ref = doubly_resonant_length(ps0, pi0, path_s, path_i, nu_p)
    beat_ref = mode_pair_at(crystal, geometry, ps0, pi0, L_ref, T, V, x).beat
    d_max = int(math.ceil(2 * (max_beat + abs(beat_ref)) / fsr_sum)) + 2
    eps = crystal.birefringence / (crystal.n_mean + L0 / crystal.length_l)
    span = d_max * abs(eps) * half_lp
    s_lo = int(math.floor((lo - (L_ref - L0) - span) / half_lp)) - 2
    s_hi = int(math.ceil((hi - (L_ref - L0) + span) / half_lp)) + 2

    S, D = np.meshgrid(np.arange(s_lo, s_hi + 1), np.arange(-d_max, d_max + 1), indexing="ij")
    keep = (S - D) % 2 == 0
    S, D = S[keep], D[keep]
    p_s = ps0 + (S + D) // 2
    p_i = pi0 + (S - D) // 2
    valid = (p_s >= 1) & (p_i >= 1)
    S, D, p_s, p_i = S[valid], D[valid], p_s[valid], p_i[valid]

    L_root = doubly_resonant_length(p_s, p_i, path_s, path_i, nu_p)
    offsets = L_root - L0
    r_s = p_s * C_LIGHT / (2 * (L_root + path_s))
    beats = 2 * r_s - nu_p
    sel = (offsets >= lo) & (offsets <= hi) & (np.abs(beats) <= max_beat)
    order = np.argsort(offsets[sel], kind="stable")

    modes = []
    for k in np.flatnonzero(sel)[order]:
        pair = mode_pair_at(crystal, geometry, int(p_s[k]), int(p_i[k]), L_root[k], T, V, x)
        modes.append(ClusterMode(float(offsets[k]), pair, int(S[k]), int(D[k])))
    return modes


def effective_threshold(pair: ModePair, threshold_min: float, hwhm: float) -> float:
    ds = pair.detuning_signal / hwhm
    di = pair.detuning_idler / hwhm
    return threshold_min * (1.0 + ds * ds) * (1.0 + di * di)


def select_oscillating_mode(
    candidates: Sequence[ModePair], pump_power: float, threshold_min: float, hwhm: float
) -> ModePair | None:
    """Pick the pair with the lowest detuning-penalized threshold.

    Each pair costs ``threshold_min * (1 + ds^2) * (1 + di^2)`` with detunings
    in units of ``hwhm``. Ties go to the smaller |beat|, then the smaller
    signal mode number. Returns None when the pump is below every threshold.
    """
    if not candidates:
        raise ValueError("no candidate mode pairs")
    best = min(
        candidates,
        key=lambda m: (effective_threshold(m, threshold_min, hwhm), abs(m.beat), m.p_signal),
    )
    if pump_power > effective_threshold(best, threshold_min, hwhm):
        return best
    return None


def waists(geometry: CavityGeometry, crystal: CrystalParams):
    """Boyd-Ashkin confocal waist and the Boyd-Kleinman optimum, in meters."""
    wavelength = 2.0 * geometry.pump_wavelength
    w_ba = math.sqrt(crystal.length_l * wavelength / (2.0 * math.pi * crystal.n_mean))
    return w_ba, BOYD_KLEINMAN_RATIO * w_ba
