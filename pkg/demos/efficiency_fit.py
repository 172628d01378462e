"""Fit threshold and conversion factor to noisy synthetic efficiency data.

Run: python3 demos/efficiency_fit.py
"""
import numpy as np

from twinbeam_opo.efficiency import (
    THEORETICAL_THRESHOLD,
    EfficiencyModel,
    fit,
    generate_dataset,
    optimum_operating_point,
)

truth = EfficiencyModel(p_threshold=25.6e-3, k_factor=3.26)
data = generate_dataset(truth, n_points=20, noise=0.02, rng=np.random.default_rng(3))
res = fit(data, weighted=True)
dp, dk = res.uncertainties
print(f"P_th = {res.model.p_threshold * 1e3:.2f} +- {dp * 1e3:.2f} mW "
      f"(true 25.60, nonlinearity estimate {THEORETICAL_THRESHOLD * 1e3:.0f} mW)")
print(f"K    = {res.model.k_factor:.3f} +- {dk:.3f} (true 3.26)")
print(f"chi^2 = {res.chi_squared:.1f} for {len(data) - 2} degrees of freedom, "
      f"{res.iterations} iterations")
n_opt, rho = optimum_operating_point(res.model)
print(f"best operating point: {n_opt:.0f} x threshold, efficiency {rho:.1%}")
