import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from logic.errors import ConfigError, TruncationError, UndefinedConditionalError
from logic.formulas import driven_qubit_covariance, driven_qubit_variance, gaussian_moment
from logic.hermite import BasisParams
from logic.models import preset
from logic.operators import SIGMA_X, SIGMA_Z
from logic.qfpme import HermiteState, assemble_generator, evolve, lindblad_spectrum, steady_state_forward
from logic.statistics import (
    characteristic_function,
    conditional_state,
    current_correlation,
    default_grid,
    fidelity,
    fisher_information,
    mutual_information,
    mutual_information_converged,
    reconstruct_distribution,
    signal_mean,
    signal_moment,
    signal_observable_covariance,
    signal_variance,
    von_neumann_entropy,
)


@pytest.fixture(scope="module")
def driven():
    model = preset("driven_qubit")
    return model, steady_state_forward(model, 30)


def test_product_state_moments_are_gaussian():
    """M_n = 0 for n >= 1 leaves D ~ Normal(0, sigma)."""
    params = BasisParams(0.3, 6)
    state = HermiteState.product(np.diag([0.7, 0.3]), params)
    for q in range(5):
        assert signal_moment(state, q) == pytest.approx(gaussian_moment(q, 0.3), abs=1e-12)
    with pytest.raises(TruncationError):
        signal_moment(state, 6)
    with pytest.raises(ConfigError):
        signal_moment(state, -1)


def test_covariance_matches_closed_form(driven):
    model, state = driven
    assert signal_mean(state) == pytest.approx(0.0, abs=1e-12)
    assert signal_observable_covariance(state, SIGMA_Z) == pytest.approx(driven_qubit_covariance(1.0, 0.5, 2.0))
    assert signal_observable_covariance(state, SIGMA_X) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ConfigError):
        signal_observable_covariance(state, np.array([[0, 1], [0, 0]]))


def test_characteristic_function_at_zero(driven):
    _, state = driven
    phi = characteristic_function(state, [0.0, 0.5])
    assert phi[0] == pytest.approx(1.0)
    # symmetric P(D) has a real characteristic function
    assert abs(phi[1].imag) < 1e-10


def test_characteristic_function_is_conjugate_symmetric_and_bounded():
    """Evolving from |0> gives <D> > 0, so phi is genuinely complex."""
    model = preset("driven_qubit")
    gen = assemble_generator(model, 20)
    state = evolve(HermiteState.product(np.diag([1.0, 0.0]), gen.params), gen, math.pi / 4)
    K = np.linspace(0.1, 4.0, 40)
    phi = characteristic_function(state, K)
    assert np.max(np.abs(phi.imag)) > 1e-3
    assert np.allclose(characteristic_function(state, -K), np.conj(phi), atol=1e-12)
    assert np.all(np.abs(phi) <= 1.0 + 1e-10)


@pytest.mark.parametrize("use_model", [True, False])
def test_reconstructed_distribution_reproduces_moments(driven, use_model):
    model, state = driven
    dist = reconstruct_distribution(state, model=model if use_model else None)
    assert dist.method == ("continued" if use_model else "series")
    assert trapezoid(dist.density, dist.grid) == pytest.approx(1.0)
    assert np.all(dist.density >= 0)
    assert dist.mean == pytest.approx(0.0, abs=1e-4)
    assert dist.variance == pytest.approx(driven_qubit_variance(1.0, 0.5, 2.0), abs=1e-3)
    assert dist.to_frame().columns.tolist() == ["D", "P"]


def test_reconstruction_rejects_bad_grid(driven):
    _, state = driven
    with pytest.raises(ConfigError):
        reconstruct_distribution(state, grid=[0.0, 1.0, 0.5])


def test_ising_distribution_has_four_peaks():
    """Well-separated Gaussians at the S_z eigenvalues -3, -1, 1, 3."""
    model = preset("ising")
    state = steady_state_forward(model, 160, np.eye(8) / 8)
    dist = reconstruct_distribution(state, model=model)
    peaks = dist.local_maxima(min_height=0.05)
    assert len(peaks) == 4
    assert np.allclose(peaks, [-3, -1, 1, 3], atol=0.1)


def test_current_correlation_starts_at_variance_and_decays(driven):
    model, state = driven
    spectrum = lindblad_spectrum(model)
    curve = current_correlation(model, spectrum, state.unconditional, [0.0, 0.5, 1.0, 30.0])
    assert curve.values[0] == pytest.approx(driven_qubit_variance(1.0, 0.5, 2.0), rel=1e-8)
    assert abs(curve.values[-1]) < 1e-6
    assert curve.to_frame().columns.tolist() == ["tau", "C"]
    with pytest.raises(ConfigError):
        current_correlation(model, spectrum, state.unconditional, [-1.0])


def test_current_correlation_decays_faster_with_wider_bandwidth():
    decay = []
    for gamma in (0.6, 1.4):
        model = preset("driven_qubit", lam=1.0, gamma=gamma)
        state = steady_state_forward(model, 20)
        curve = current_correlation(model, lindblad_spectrum(model), state.unconditional, [0.0, 1.0])
        decay.append(curve.values[1] / curve.values[0])
    assert decay[1] < decay[0]


def test_strong_measurement_dephases_unconditional_state():
    """lambda = 1e3: M_0 is diagonal in the sigma_z basis."""
    state = steady_state_forward(preset("driven_qubit", lam=1e3), 10)
    assert abs(state.unconditional[0, 1]) < 1e-3


def test_entropy_and_fidelity():
    assert von_neumann_entropy(np.eye(2) / 2) == pytest.approx(math.log(2))
    assert von_neumann_entropy(np.diag([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    rho = np.array([[0.6, 0.1], [0.1, 0.4]], dtype=complex)
    assert fidelity(rho, rho) == pytest.approx(1.0)
    assert fidelity(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == pytest.approx(0.0, abs=1e-12)
    assert fidelity(np.eye(2) / 2, np.diag([1.0, 0.0])) == pytest.approx(0.5)


def test_product_state_carries_no_information():
    state = HermiteState.product(np.diag([0.7, 0.3]), BasisParams(0.5, 8))
    assert mutual_information(state) == pytest.approx(0.0, abs=1e-8)
    cond = conditional_state(state, 0.3)
    assert np.allclose(cond.rho, np.diag([0.7, 0.3]), atol=1e-8)
    with pytest.raises(UndefinedConditionalError):
        conditional_state(state, 50.0)


def test_mutual_information_bounded_and_grows_with_rate():
    values = []
    for lam in (0.5, 1.0, 1.5, 2.0, 2.5):
        model = preset("driven_qubit", lam=lam, gamma=0.5)
        state = steady_state_forward(model, 120)
        values.append(mutual_information(state, model=model))
    assert all(0.0 <= v <= math.log(2) for v in values)
    assert np.all(np.diff(values) > 0)


def test_large_positive_signal_conditions_on_upper_state():
    """Strong measurement: D = +1 points at the sigma_z = +1 eigenstate."""
    model = preset("driven_qubit", lam=2.5, gamma=0.5)
    state = steady_state_forward(model, 120)
    cond = conditional_state(state, 1.0, model=model)
    assert fidelity(cond.rho, np.diag([1.0, 0.0])) > 0.9


def test_mutual_information_converged_history():
    model = preset("driven_qubit")
    value, history = mutual_information_converged(lambda n: steady_state_forward(model, n), 20, model, step=8)
    assert len(history) >= 2
    assert abs(history[-1][1] - history[-2][1]) < 1e-4
    assert value == history[-1][1]


def test_fisher_vanishes_without_measurement():
    assert fisher_information(preset("rabi_metrology", lam=0.0), 20).value == 0.0
    weak = fisher_information(preset("rabi_metrology", lam=1e-6), 20, check=False)
    assert weak.value < 1e-6


def test_fisher_matches_finite_difference_of_distribution():
    model = preset("rabi_metrology")
    N = 60
    result = fisher_information(model, N, check=False)
    state = steady_state_forward(model, N)
    grid = default_grid(state)
    delta = 1e-4
    P = reconstruct_distribution(state, grid, model=model).density
    plus = reconstruct_distribution(steady_state_forward(model.shifted(delta), N), grid, model=model.shifted(delta))
    minus = reconstruct_distribution(steady_state_forward(model.shifted(-delta), N), grid, model=model.shifted(-delta))
    dP = (plus.density - minus.density) / (2 * delta)
    keep = P > 1e-10
    expected = trapezoid(np.where(keep, dP**2 / np.where(keep, P, 1.0), 0.0), grid)
    assert result.value == pytest.approx(expected, rel=1e-3)


def test_fisher_decreases_deep_in_zeno_regime():
    values = [fisher_information(preset("rabi_metrology", lam=lam), 300, check=False).value for lam in (5.0, 10.0)]
    assert values[0] > values[1] > 0


def test_fisher_decreases_with_bandwidth():
    """At lambda = 1 a slower filter keeps more of the signal's dependence on mu."""
    values = [
        fisher_information(preset("rabi_metrology", gamma=gamma), 80, check=False).value
        for gamma in (0.8, 1.2, 1.6)
    ]
    assert values[0] > values[1] > values[2] > 0
