import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twinbeam_opo.efficiency import (
    EfficiencyDataset,
    EfficiencyModel,
    conversion_efficiency,
    fit,
    generate_dataset,
    optimum_operating_point,
)

NOMINAL = EfficiencyModel(25.6e-3, 3.26)


def test_law_values():
    assert conversion_efficiency(NOMINAL.p_threshold, NOMINAL) == 0.0
    assert conversion_efficiency(0.5 * NOMINAL.p_threshold, NOMINAL) == 0.0
    assert conversion_efficiency(4.0, EfficiencyModel(1.0, 4.0)) == 1.0
    assert conversion_efficiency(1.04 * NOMINAL.p_threshold, NOMINAL) == pytest.approx(0.0621, abs=1e-4)
    for k in (2.0, 3.26, 4.0):
        m = EfficiencyModel(1.0, k)
        assert conversion_efficiency(4.0, m) == k / 4


def test_shape_continuity_and_monotonicity():
    m = EfficiencyModel(1.0, 3.0)
    assert conversion_efficiency(1 + 1e-12, m) < 1e-11
    up = conversion_efficiency(np.linspace(1.001, 3.999, 500), m)
    down = conversion_efficiency(np.linspace(4.001, 50, 500), m)
    assert np.all(np.diff(up) > 0) and np.all(np.diff(down) < 0)


@settings(max_examples=50, deadline=None)
@given(k=st.floats(0.1, 10.0))
def test_optimum_matches_grid(k):
    m = EfficiencyModel(1.0, k)
    n_opt, rho = optimum_operating_point(m)
    grid = np.linspace(1.0001, 20.0, 200_001)
    vals = conversion_efficiency(grid, m)
    assert grid[np.argmax(vals)] == pytest.approx(n_opt, abs=2e-4)
    assert rho == pytest.approx(vals.max(), rel=1e-9)


def test_optimum_examples():
    assert optimum_operating_point(NOMINAL) == (4.0, 0.815)
    assert optimum_operating_point(EfficiencyModel(1.0, 4.0)) == (4.0, 1.0)


def test_model_validation():
    with pytest.raises(ValueError):
        EfficiencyModel(0.0, 3.0)
    with pytest.raises(ValueError):
        EfficiencyModel(1.0, 5.0, physical=True)
    EfficiencyModel(1.0, 5.0)
    with pytest.raises(ValueError):
        EfficiencyDataset([1.0, 2.0], [0.1])
    with pytest.raises(ValueError):
        EfficiencyDataset([1.0, -2.0], [0.1, 0.2])
    with pytest.raises(ValueError):
        EfficiencyDataset([1.0, 2.0], [0.1, 1.2])


def test_noiseless_fit_recovers_parameters():
    res = fit(generate_dataset(NOMINAL, 20))
    assert res.converged
    assert res.model.p_threshold == pytest.approx(NOMINAL.p_threshold, rel=1e-6)
    assert res.model.k_factor == pytest.approx(NOMINAL.k_factor, rel=1e-6)
    assert res.iterations <= 200


def test_boundary_k_round_trip():
    res = fit(generate_dataset(EfficiencyModel(25.6e-3, 2.0), 20))
    assert res.model.k_factor == pytest.approx(2.0, rel=1e-6)


def test_chi_squared_is_the_minimized_sum():
    ds = generate_dataset(NOMINAL, 20, noise=0.02, rng=np.random.default_rng(7))
    res = fit(ds)
    resid = ds.efficiency - conversion_efficiency(ds.pump_power, res.model)
    assert res.chi_squared == pytest.approx(np.sum(resid**2), rel=1e-12)
    # a nearby model does no better
    for dp, dk in ((1e-5, 0), (-1e-5, 0), (0, 1e-3), (0, -1e-3)):
        m = EfficiencyModel(res.model.p_threshold + dp, res.model.k_factor + dk)
        assert np.sum((ds.efficiency - conversion_efficiency(ds.pump_power, m)) ** 2) \
            >= res.chi_squared
    w = fit(ds, weighted=True)
    r = (ds.efficiency - conversion_efficiency(ds.pump_power, w.model)) / ds.sigma
    assert w.chi_squared == pytest.approx(np.sum(r**2), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_fit_is_scale_invariant(scale, seed):
    ds = generate_dataset(NOMINAL, 20, noise=0.02, rng=np.random.default_rng(seed))
    scaled = EfficiencyDataset(ds.pump_power * scale, ds.efficiency)
    a, b = fit(ds), fit(scaled)
    assert b.model.k_factor == pytest.approx(a.model.k_factor, rel=1e-6)
    assert b.model.p_threshold == pytest.approx(a.model.p_threshold * scale, rel=1e-6)
    m2 = EfficiencyModel(NOMINAL.p_threshold * scale, NOMINAL.k_factor)
    np.testing.assert_allclose(conversion_efficiency(ds.pump_power * scale, m2),
                               conversion_efficiency(ds.pump_power, NOMINAL), rtol=1e-12)


def test_fit_preconditions():
    ds = generate_dataset(NOMINAL, 20)
    with pytest.raises(ValueError):
        fit(ds, EfficiencyModel(1.0, 3.0))
    with pytest.raises(ValueError):
        fit(EfficiencyDataset([0.03, 0.04], [0.1, 0.2]))
    with pytest.raises(ValueError):
        fit(ds, weighted=True)


def test_noisy_study_reports_uncertainties():
    res = fit(generate_dataset(NOMINAL, 20, noise=0.02, rng=np.random.default_rng(1)))
    assert res.uncertainties.shape == (2,)
    assert 0 < res.uncertainties[0] < 1e-3 and 0 < res.uncertainties[1] < 0.1
    assert np.allclose(res.covariance, res.covariance.T)
