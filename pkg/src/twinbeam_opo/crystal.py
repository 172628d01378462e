"""Linearized optical model of the Na:KTP crystal.

The crystal enters the cavity only through the optical path ``n * l`` seen by
each polarization eigenaxis. Everything is linearized around a calibration
point; the derivatives are either supplied or fitted so the cavity tuning
coefficients come out right (see :func:`calibrate_derivatives`).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

SIGNAL = "signal"
IDLER = "idler"
POLARIZATIONS = (SIGNAL, IDLER)

# Largest |T - T0| for which the affine model is accepted (kelvin).
MAX_TEMPERATURE_OFFSET = 0.1


@dataclass(frozen=True)
class CrystalParams:
    """Per-axis refractive indices and optical-path derivatives.

    ``n_signal`` and ``n_idler`` are normally built from a mean index and a
    birefringence with :meth:`from_mean_birefringence`. The default
    birefringence is negative: that is the labelling for which the
    difference-frequency length coefficient comes out negative.
    """

    length_l: float = 0.01
    n_signal: float = 1.755
    n_idler: float = 1.845
    dpath_dT_signal: float = 0.0
    dpath_dT_idler: float = 0.0
    dpath_dV_signal: float = 0.0
    dpath_dV_idler: float = 0.0
    dbirefringence_dx: float = 1e-3
    reference_temperature: float = 295.0

    def __post_init__(self):
        if self.length_l <= 0:
            raise ValueError(f"crystal length must be positive, got {self.length_l}")
        if self.n_signal <= 1 or self.n_idler <= 1:
            raise ValueError(
                f"refractive indices must exceed 1, got {self.n_signal}, {self.n_idler}"
            )

    @classmethod
    def from_mean_birefringence(cls, n_mean=1.8, birefringence=-0.09, **kwargs):
        """Split ``n_mean`` symmetrically: n_s,i = n_mean +/- birefringence/2."""
        return cls(
            n_signal=n_mean + birefringence / 2,
            n_idler=n_mean - birefringence / 2,
            **kwargs,
        )

    @property
    def n_mean(self) -> float:
        return 0.5 * (self.n_signal + self.n_idler)

    @property
    def birefringence(self) -> float:
        return self.n_signal - self.n_idler

    def index(self, polarization: str) -> float:
        _check_polarization(polarization)
        return self.n_signal if polarization == SIGNAL else self.n_idler

    def swapped(self) -> "CrystalParams":
        """Same crystal with the signal/idler labels exchanged."""
        return replace(
            self,
            n_signal=self.n_idler,
            n_idler=self.n_signal,
            dpath_dT_signal=self.dpath_dT_idler,
            dpath_dT_idler=self.dpath_dT_signal,
            dpath_dV_signal=self.dpath_dV_idler,
            dpath_dV_idler=self.dpath_dV_signal,
            dbirefringence_dx=-self.dbirefringence_dx,
        )


def _check_polarization(polarization):
    if polarization not in POLARIZATIONS:
        raise ValueError(f"unknown polarization {polarization!r}; expected one of {POLARIZATIONS}")


def optical_path(params: CrystalParams, polarization: str, T=None, V=0.0, x=0.0):
    """Optical path length n*l through the crystal along one eigenaxis.

    Parameters
    ----------
    params : CrystalParams
    polarization : {"signal", "idler"}
    T : float, optional
        Crystal temperature in kelvin. Defaults to the reference temperature.
    V : float
        Voltage across the crystal.
    x : float
        Transverse beam position in meters. The birefringence gradient is
        shared evenly, ``+x*g*l/2`` on the signal axis and ``-x*g*l/2`` on
        the idler axis.

    Returns
    -------
    float
        Optical path in meters.
    """
    _check_polarization(polarization)
    if T is None:
        T = params.reference_temperature
    dT = T - params.reference_temperature
    if np.any(np.abs(dT) > MAX_TEMPERATURE_OFFSET):
        raise ValueError(
            f"|T - T0| = {np.max(np.abs(dT)):.3g} K exceeds the linearization bound "
            f"{MAX_TEMPERATURE_OFFSET} K"
        )
    half_split = 0.5 * x * params.dbirefringence_dx * params.length_l
    if polarization == SIGNAL:
        return (
            params.n_signal * params.length_l
            + params.dpath_dT_signal * dT
            + params.dpath_dV_signal * V
            + half_split
        )
    return (
        params.n_idler * params.length_l
        + params.dpath_dT_idler * dT
        + params.dpath_dV_idler * V
        - half_split
    )


def _inverse_path_rates(params: CrystalParams, geometry):
    # c_j = nu / (L + n_j l): minus the frequency change per meter of path.
    nu = 0.5 * geometry.pump_frequency
    c_s = nu / (geometry.air_path_L + params.n_signal * params.length_l)
    c_i = nu / (geometry.air_path_L + params.n_idler * params.length_l)
    return c_s, c_i


def _solve_pair(c_s, c_i, target):
    # -c_s a_s - c_i a_i = t_plus ;  -c_s a_s + c_i a_i = t_minus
    if c_s == 0 or c_i == 0:
        raise ValueError("singular calibration system (zero path rate)")
    t_plus, t_minus = target
    a_s = -(t_plus + t_minus) / (2.0 * c_s)
    a_i = -(t_plus - t_minus) / (2.0 * c_i)
    return a_s, a_i


def calibrate_derivatives(geometry, targets_T, targets_V, base: CrystalParams | None = None):
    """Fit d(n l)/dT and d(n l)/dV so the cavity reproduces given tuning rates.

    Parameters
    ----------
    geometry : CavityGeometry
        Supplies the air path and the pump frequency.
    targets_T : (float, float)
        Desired (d nu_plus/dT, d nu_minus/dT) in Hz/K.
    targets_V : (float, float)
        Desired (d nu_plus/dV, d nu_minus/dV) in Hz/V.
    base : CrystalParams, optional
        Indices, length and gradient to keep; defaults to the stock crystal.

    Returns
    -------
    CrystalParams
    """
    if base is None:
        base = CrystalParams()
    c_s, c_i = _inverse_path_rates(base, geometry)
    a_s, a_i = _solve_pair(c_s, c_i, targets_T)
    b_s, b_i = _solve_pair(c_s, c_i, targets_V)
    return replace(
        base,
        dpath_dT_signal=a_s,
        dpath_dT_idler=a_i,
        dpath_dV_signal=b_s,
        dpath_dV_idler=b_i,
    )
