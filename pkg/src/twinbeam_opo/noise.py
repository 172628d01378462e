"""Discrete-time stochastic drivers: band-limited, Ornstein-Uhlenbeck and resonant.

Every process is a small linear state-space recursion ``s' = A s + B xi``
driven by unit white noise and scaled to a unit stationary standard deviation.
The same coefficients drive the servo simulation kernel and the standalone
generators below, so spectral checks exercise the code that actually runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

# composite -3 dB corner of two identical one-pole stages, relative to one stage
_TWO_POLE_CORNER = math.sqrt(math.sqrt(2.0) - 1.0)


@dataclass(frozen=True)
class LinearProcess:
    """``s[k+1] = A s[k] + B xi[k]``; the observed value is ``C @ s``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def stationary_cov(self) -> np.ndarray:
        return linalg.solve_discrete_lyapunov(self.A, np.outer(self.B, self.B))

    def initial_state(self, rng) -> np.ndarray:
        cov = self.stationary_cov()
        # tiny jitter keeps the Cholesky factor defined for rank-deficient cov
        chol = np.linalg.cholesky(cov + 1e-300 * np.eye(len(cov)))
        return chol @ rng.standard_normal(len(cov))


def ou_process(correlation_rate, dt) -> LinearProcess:
    """One-pole (Ornstein-Uhlenbeck) process with unit variance.

    ``correlation_rate`` is 1/tau in s^-1.
    """
    rho = math.exp(-correlation_rate * dt)
    return LinearProcess(
        A=np.array([[rho]]), B=np.array([math.sqrt(1.0 - rho * rho)]), C=np.array([1.0])
    )


def bandlimited_process(bandwidth, dt) -> LinearProcess:
    """Two cascaded identical low-pass stages with -3 dB corner ``bandwidth``.

    The spectrum is flat below the corner and falls as f^-4 above it.
    """
    f1 = bandwidth / _TWO_POLE_CORNER
    rho = math.exp(-2.0 * math.pi * f1 * dt)
    alpha = 1.0 - rho
    gain2 = alpha**2 * (1.0 + rho**2) / (1.0 - rho**2) ** 3
    g = 1.0 / math.sqrt(gain2)
    A = np.array([[rho, 0.0], [alpha * rho, rho]])
    B = np.array([g, alpha * g])
    return LinearProcess(A=A, B=B, C=np.array([0.0, 1.0]))


def resonator_process(f0, quality, dt) -> LinearProcess:
    """Damped second-order resonance (AR(2)) at ``f0`` with quality factor ``quality``."""
    w0 = 2.0 * math.pi * f0
    r = math.exp(-w0 * dt / (2.0 * quality))
    wd = w0 * math.sqrt(max(1.0 - 1.0 / (4.0 * quality**2), 0.0))
    a1 = 2.0 * r * math.cos(wd * dt)
    a2 = -r * r
    var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2) ** 2 - a1**2))
    b = 1.0 / math.sqrt(var)
    A = np.array([[a1, a2], [1.0, 0.0]])
    return LinearProcess(A=A, B=np.array([b, 0.0]), C=np.array([1.0, 0.0]))


def bandlimited_noise(n, dt, sigma, bandwidth, rng) -> np.ndarray:
    """``n`` samples of band-limited Gaussian noise with rms ``sigma``."""
    proc = bandlimited_process(bandwidth, dt)
    f1 = bandwidth / _TWO_POLE_CORNER
    rho = math.exp(-2.0 * math.pi * f1 * dt)
    s0 = proc.initial_state(rng)
    xi = rng.standard_normal(n)
    y1, _ = signal.lfilter([proc.B[0]], [1.0, -rho], xi, zi=[rho * s0[0]])
    y2, _ = signal.lfilter([1.0 - rho], [1.0, -rho], y1, zi=[rho * s0[1]])
    return sigma * y2


def ou_noise(n, dt, sigma, correlation_rate, rng) -> np.ndarray:
    proc = ou_process(correlation_rate, dt)
    rho = proc.A[0, 0]
    s0 = proc.initial_state(rng)
    y, _ = signal.lfilter([proc.B[0]], [1.0, -rho], rng.standard_normal(n), zi=[rho * s0[0]])
    return sigma * y


def resonator_noise(n, dt, sigma, f0, quality, rng) -> np.ndarray:
    """Narrow-band noise line at ``f0`` with rms amplitude ``sigma``."""
    proc = resonator_process(f0, quality, dt)
    (a1, a2), b = proc.A[0], proc.B[0]
    s0 = proc.initial_state(rng)
    zi = signal.lfiltic([b], [1.0, -a1, -a2], y=[s0[0], s0[1]])
    y, _ = signal.lfilter([b], [1.0, -a1, -a2], rng.standard_normal(n), zi=zi)
    return sigma * y


def bandlimited_psd(f, sigma, bandwidth):
    """One-sided continuous-time PSD of :func:`bandlimited_noise`."""
    f1 = bandwidth / _TWO_POLE_CORNER
    return 4.0 * sigma**2 / (math.pi * f1) / (1.0 + (np.asarray(f) / f1) ** 2) ** 2


def ou_psd(f, sigma, correlation_rate):
    lam = correlation_rate
    return 4.0 * sigma**2 * lam / (lam**2 + (2.0 * math.pi * np.asarray(f)) ** 2)


def resonator_psd(f, sigma, f0, quality, dt):
    """One-sided PSD of the discrete resonator, exact for sampling step ``dt``."""
    proc = resonator_process(f0, quality, dt)
    (a1, a2), b = proc.A[0], proc.B[0]
    z = np.exp(-2j * math.pi * np.asarray(f) * dt)
    return 2.0 * dt * sigma**2 * b**2 / np.abs(1.0 - a1 * z - a2 * z * z) ** 2
