import pytest

from logic.formulas import (
    driven_qubit_covariance,
    driven_qubit_variance,
    gaussian_moment,
    signal_noise_variance,
    thermal_ground_population,
    thermal_populations,
)


def test_driven_qubit_reference_point():
    """Omega = 1, lambda = 0.5, gamma = 2."""
    assert signal_noise_variance(2.0, 0.5) == 0.5
    assert driven_qubit_covariance(1.0, 0.5, 2.0) == pytest.approx(0.6)
    assert driven_qubit_variance(1.0, 0.5, 2.0) == pytest.approx(1.1)


def test_covariance_limits():
    # no drive: D follows sigma_z = +-1 exactly
    assert driven_qubit_covariance(0.0, 1.0, 3.0) == pytest.approx(1.0)
    # fast drive washes out the correlation
    assert driven_qubit_covariance(1e3, 1.0, 1.0) < 1e-5


def test_thermal_populations():
    ground, excited = thermal_populations(0.5)
    assert ground + excited == pytest.approx(1.0)
    assert ground == pytest.approx(0.75)
    # strong monitoring of sigma_x pins the populations at 1/2
    assert thermal_ground_population(0.01, 0.5, 0.5) == pytest.approx(0.5049, abs=1e-4)
    assert thermal_ground_population(0.01, 0.5, 1e6) == pytest.approx(0.5)
    # unmonitored, the qubit thermalizes to (1 + 1 / (2 n_B + 1)) / 2
    assert thermal_ground_population(0.01, 0.5, 0.0) == pytest.approx(ground)


def test_gaussian_moments():
    assert gaussian_moment(2, 0.3) == pytest.approx(0.3)
    assert gaussian_moment(4, 0.3) == pytest.approx(3 * 0.09)
    assert gaussian_moment(3, 0.3) == pytest.approx(0.0, abs=1e-12)
    assert gaussian_moment(1, 0.3, mean=2.0) == pytest.approx(2.0)
