"""Above-threshold conversion efficiency rho = (K/N)(sqrt(N) - 1), N = P/P_th."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: threshold predicted from the crystal nonlinearity, kept for reference only (W)
THEORETICAL_THRESHOLD = 12e-3


@dataclass(frozen=True)
class EfficiencyModel:
    p_threshold: float = 25.6e-3
    k_factor: float = 3.26
    physical: bool = False

    def __post_init__(self):
        if not self.p_threshold > 0:
            raise ValueError("p_threshold must be positive")
        if self.physical and not 2.0 <= self.k_factor <= 4.0:
            raise ValueError(f"K = {self.k_factor} outside the physical range [2, 4]")


@dataclass(frozen=True)
class EfficiencyDataset:
    pump_power: np.ndarray
    efficiency: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.pump_power, dtype=float)
        r = np.asarray(self.efficiency, dtype=float)
        if p.shape != r.shape or p.ndim != 1:
            raise ValueError("pump_power and efficiency must be 1-d arrays of equal length")
        if np.any(p <= 0):
            raise ValueError("pump powers must be positive")
        if np.any((r < 0) | (r > 1)):
            raise ValueError("efficiencies must lie in [0, 1]")
        object.__setattr__(self, "pump_power", p)
        object.__setattr__(self, "efficiency", r)
        if self.sigma is not None:
            s = np.asarray(self.sigma, dtype=float)
            if s.shape != p.shape or np.any(s <= 0):
                raise ValueError("sigma must be positive and match the data")
            object.__setattr__(self, "sigma", s)

    def __len__(self):
        return len(self.pump_power)


def conversion_efficiency(pump_power, model: EfficiencyModel):
    """rho at the given pump power(s); zero at or below threshold."""
    n = np.asarray(pump_power, dtype=float) / model.p_threshold
    above = n > 1.0
    safe = np.where(above, n, 1.0)
    rho = model.k_factor / safe * (np.sqrt(safe) - 1.0)
    rho = np.where(above, rho, 0.0)
    return rho if rho.ndim else float(rho)


def _model_and_jacobian(p, p_th, k):
    n = p / p_th
    sq = np.sqrt(n)
    rho = k / n * (sq - 1.0)
    # d rho / dN = K (1 - sqrt(N)/2) / N^2 ;  dN/dP_th = -N / P_th
    d_pth = k * (1.0 - 0.5 * sq) / n**2 * (-n / p_th)
    d_k = (sq - 1.0) / n
    return rho, np.column_stack([d_pth, d_k])


@dataclass
class FitResult:
    model: EfficiencyModel
    chi_squared: float
    covariance: np.ndarray
    uncertainties: np.ndarray
    iterations: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


class FitError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def fit(dataset: EfficiencyDataset, initial_guess: EfficiencyModel | None = None,
        weighted=False, gtol=1e-10, max_iter=200) -> FitResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) fit of (P_th, K).

    The objective is the residual sum of squares, divided by sigma^2 when
    ``weighted`` is set; ``chi_squared`` is that sum at the optimum. The
    gradient test is done on scaled parameters (P_th / P_th0, K), since P_th
    is in watts. ``covariance`` is ``s^2 (J^T W J)^-1`` with ``s^2 = chi^2/(n-2)``
    when unweighted and 1 when weighted.
    """
    p = dataset.pump_power
    y = dataset.efficiency
    if weighted and dataset.sigma is None:
        raise ValueError("weighted fit needs per-point sigma")
    w = 1.0 / dataset.sigma**2 if weighted else np.ones_like(y)
    if initial_guess is None:
        k0 = 3.0
        initial_guess = EfficiencyModel(p_threshold=0.9 * float(p.min()), k_factor=k0)
    if initial_guess.p_threshold >= p.min():
        raise ValueError("initial P_th must lie below every pump power")
    if np.count_nonzero(p > initial_guess.p_threshold) < 3:
        raise ValueError("need at least 3 points above threshold")

    scale = np.array([initial_guess.p_threshold, 1.0])
    theta = np.array([initial_guess.p_threshold, initial_guess.k_factor])
    lam = 1e-3
    trace = []

    def cost(th):
        r, J = _model_and_jacobian(p, th[0], th[1])
        res = y - r
        return float(np.sum(w * res * res)), res, J * scale

    c, res, J = cost(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ (w * res)
        trace.append((it, theta.copy(), c, float(np.linalg.norm(g)), lam))
        if np.linalg.norm(g) <= gtol:
            converged = True
            break
        A = J.T @ (w[:, None] * J)
        for _ in range(60):
            step = np.linalg.solve(A + lam * np.diag(np.diag(A)), g) * scale
            cand = theta + step
            if cand[0] > 0 and cand[0] < p.min():
                c_new, res_new, J_new = cost(cand)
                if c_new <= c:
                    break
            lam *= 10.0
        else:
            raise FitError(f"no descent step found at iteration {it}", trace)
        rel = np.max(np.abs(step / scale))
        theta, c, res, J = cand, c_new, res_new, J_new
        lam = max(lam / 10.0, 1e-12)
        if rel < 1e-15:
            converged = True
            break

    A = J.T @ (w[:, None] * J)
    cov_scaled = np.linalg.inv(A)
    if not weighted:
        dof = max(len(y) - 2, 1)
        cov_scaled = cov_scaled * c / dof
    cov = cov_scaled * np.outer(scale, scale)
    model = EfficiencyModel(p_threshold=float(theta[0]), k_factor=float(theta[1]))
    return FitResult(model, c, cov, np.sqrt(np.diag(cov)), it, converged, trace)


def generate_dataset(model: EfficiencyModel, n_points=20, n_range=(1.04, 4.0),
                     noise=0.0, rng=None) -> EfficiencyDataset:
    """Points at evenly spaced N with optional multiplicative Gaussian noise."""
    n = np.linspace(n_range[0], n_range[1], n_points)
    p = n * model.p_threshold
    rho = conversion_efficiency(p, model)
    if noise:
        if rng is None:
            raise ValueError("noise needs an rng")
        rho = rho * (1.0 + noise * rng.standard_normal(n_points))
        rho = np.clip(rho, 0.0, 1.0)
    sigma = np.maximum(noise * rho, 1e-12) if noise else None
    return EfficiencyDataset(p, rho, sigma)


def optimum_operating_point(model: EfficiencyModel):
    """(N_opt, rho_max) = (4, K/4)."""
    return 4.0, model.k_factor / 4.0
