import pytest

from twinbeam_opo.cavity import CavityGeometry
from twinbeam_opo.crystal import CrystalParams, calibrate_derivatives
from twinbeam_opo.servo import NoiseBudget, OpoPlant

# measured tuning coefficients used as calibration targets (Hz/K, Hz/V)
TARGETS_T = (-2.12e9, 0.24e9)
TARGETS_V = (1.34e6, 0.59e6)


@pytest.fixture(scope="session")
def geometry():
    return CavityGeometry()


@pytest.fixture(scope="session")
def crystal(geometry):
    return calibrate_derivatives(geometry, TARGETS_T, TARGETS_V)


@pytest.fixture(scope="session")
def plant(crystal, geometry):
    return OpoPlant.from_params(crystal, geometry)


@pytest.fixture(scope="session")
def quiet():
    return NoiseBudget.quiet()
