import numpy as np
import pytest
import scipy.linalg as la

from logic.errors import ConfigError, DegenerateKernelError, SingularSystemError
from logic.formulas import driven_qubit_variance, thermal_ground_population
from logic.hermite import FeedbackFunction
from logic.models import preset
from logic.operators import SIGMA_Y, SIGMA_Z, hamiltonian
from logic.qfpme import (
    FeedbackChannel,
    HermiteState,
    ModelSpec,
    ShiftedSolver,
    apply_generator,
    assemble_generator,
    converge_truncation,
    evolve,
    evolve_sampled,
    lindblad_spectrum,
    parameter_derivatives,
    perturbative_steady,
    steady_state,
    steady_state_forward,
    steady_state_full,
    steady_state_spectral,
)
from logic.statistics import fidelity, signal_variance


def _mixed(R):
    return np.eye(R, dtype=complex) / R


def test_generator_blocks_match_dense_and_apply():
    """apply_generator agrees with the dense Q, feedback included."""
    model = preset("thermal_feedback_qubit", g=0.3)
    gen = assemble_generator(model, 6)
    rng = np.random.default_rng(0)
    V = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
    state = HermiteState.from_vectors(gen.params, V)
    dense = (gen.dense() @ V.reshape(-1)).reshape(6, 4)
    assert np.allclose(apply_generator(state, gen).vectors, dense, atol=1e-12)
    assert np.allclose(gen.dense(), gen.dense(include_feedback=False) + gen.feedback_dense())
    assert np.allclose(gen.dense()[4:8, 0:4], gen.block(1, 0))


def test_generator_preserves_total_trace():
    """<<1| Q annihilates the M_0 block row, so Tr M_0 is conserved."""
    gen = assemble_generator(preset("driven_qubit"), 8)
    one = np.eye(2).reshape(-1, order="F")
    assert np.allclose(one @ gen.dense()[0:4, :], 0.0, atol=1e-12)


@pytest.mark.parametrize("omega,lam,gamma", [
    (1.0, 0.5, 2.0), (1.0, 1.0, 1.0), (0.5, 0.5, 0.5), (2.0, 1.5, 3.0), (1.0, 2.0, 0.8),
])
def test_forward_variance_matches_closed_form(omega, lam, gamma):
    state = steady_state_forward(preset("driven_qubit", omega=omega, lam=lam, gamma=gamma), 20)
    expected = driven_qubit_variance(omega, lam, gamma)
    assert signal_variance(state) == pytest.approx(expected, rel=1e-8)


def test_steady_state_is_normalized_and_hermitian():
    state = steady_state_forward(preset("driven_qubit"), 10)
    assert state.trace == pytest.approx(1.0)
    assert state.hermiticity_defect() < 1e-14
    assert np.allclose(state.unconditional, np.eye(2) / 2, atol=1e-12)


def test_solvers_agree_on_driven_qubit():
    model = preset("driven_qubit")
    N = 20
    forward = steady_state_forward(model, N)
    spectral = steady_state_spectral(model, N)
    full = steady_state_full(assemble_generator(model, N))
    assert forward.max_block_deviation(spectral) < 1e-8
    assert forward.max_block_deviation(full) < 1e-8


def test_solvers_agree_on_ising_with_reference():
    """Ising L=2 has a degenerate stationary subspace; a reference state picks one point."""
    model = preset("ising", L=2)
    N = 12
    with pytest.raises(DegenerateKernelError):
        steady_state_forward(model, N)
    ref = _mixed(4)
    forward = steady_state_forward(model, N, ref)
    spectral = steady_state_spectral(model, N, reference=ref)
    full = steady_state_full(assemble_generator(model, N), ref)
    assert forward.max_block_deviation(spectral) < 1e-8
    assert forward.max_block_deviation(full) < 1e-8


def test_steady_state_dispatch():
    model = preset("driven_qubit")
    auto = steady_state(model, 10)
    assert auto.max_block_deviation(steady_state(model, 10, "forward")) < 1e-8
    with pytest.raises(ConfigError):
        steady_state(model, 10, "newton")
    with pytest.raises(ConfigError):
        steady_state_forward(preset("thermal_feedback_qubit", g=0.2), 10)


def test_steady_state_satisfies_generator():
    model = preset("thermal_feedback_qubit", g=0.2)
    gen = assemble_generator(model, 16)
    state = steady_state_full(gen)
    assert np.max(np.abs(apply_generator(state, gen).vectors)) < 1e-10


def test_thermal_ground_population_without_feedback():
    state = steady_state_forward(preset("thermal_feedback_qubit", g=0.0), 12)
    P0 = state.unconditional[0, 0].real
    assert P0 == pytest.approx(thermal_ground_population(0.01, 0.5, 0.5), rel=1e-8)
    assert P0 == pytest.approx(0.505, abs=0.01)


def test_shifted_solver_detects_resonance():
    """An eigenvalue equal to gamma makes the n=1 shifted system singular."""
    Lam = 2.0 * np.diag([0.0, 1.0, 1.0, 0.0]).astype(complex)
    solver = ShiftedSolver(Lam, 2.0)
    with pytest.raises(SingularSystemError):
        solver.solve_shifted(1, np.ones(4, dtype=complex))


def test_parameter_derivatives_match_finite_differences():
    model = preset("rabi_metrology")
    N = 12
    delta = 1e-5
    state = steady_state_forward(model, N)
    exact = parameter_derivatives(model, state)
    plus = steady_state_forward(model.shifted(delta), N).matrices
    minus = steady_state_forward(model.shifted(-delta), N).matrices
    fd = HermiteState(state.params, (plus - minus) / (2 * delta))
    assert exact.max_block_deviation(fd) < 1e-5
    assert abs(exact.trace) < 1e-12


def test_converge_truncation_reports_history():
    model = preset("driven_qubit")
    state, history = converge_truncation(lambda n: steady_state_forward(model, n), 8, signal_variance)
    assert state.N == history[-1][0]
    assert [h[0] for h in history] == sorted(h[0] for h in history)
    assert state.tail_ratio() < 1e-8


def test_perturbative_error_decreases_with_order():
    """Weak-feedback series: the error shrinks with J_c and scales like epsilon^(J_c+1)."""
    model = preset("thermal_feedback_qubit", g=0.1)
    N = 16
    series = perturbative_steady(model, N, 3)
    assert series.epsilon == pytest.approx(0.1)

    def error(eps, J):
        exact = steady_state_full(assemble_generator(model.with_feedback_scale(eps / 0.1), N))
        return np.linalg.norm(series.state(J, eps).unconditional - exact.unconditional)

    errors = [error(0.1, J) for J in range(4)]
    assert all(a > b for a, b in zip(errors, errors[1:]))
    for J in range(4):
        ratio = error(0.2, J) / error(0.1, J)
        assert 2 ** (J + 1) / 1.5 < ratio < 2 ** (J + 1) * 1.5


def test_perturbative_without_feedback_is_zeroth_order():
    series = perturbative_steady(preset("thermal_feedback_qubit", g=0.0), 8, 2)
    assert series.epsilon == 0.0
    assert series.order == 0
    with pytest.raises(ConfigError):
        perturbative_steady(preset("thermal_feedback_qubit", g=0.1), 8, -1)


def test_feedback_fidelity_close_to_one_at_high_order():
    model = preset("thermal_feedback_qubit", g=0.1)
    series = perturbative_steady(model, 16, 3)
    exact = steady_state_full(assemble_generator(model, 16))
    assert fidelity(series.state().unconditional, exact.unconditional) == pytest.approx(1.0, abs=1e-6)


def test_evolution_reaches_steady_state():
    """t = 50 / gamma; the slowest mode of Lambda decays at lambda = 0.5, so gamma = 1 leaves ~e^-25."""
    model = preset("driven_qubit", gamma=1.0)
    gen = assemble_generator(model, 12)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    final = evolve(HermiteState.product(rho0, gen.params), gen, 50.0 / model.gamma)
    steady = steady_state_forward(model, 12)
    assert final.max_block_deviation(steady) < 1e-6
    assert final.trace == pytest.approx(1.0, abs=1e-9)


def test_evolution_matches_matrix_exponential():
    """Per-step renormalization must not disturb the integrator: compare with exp(Q t)."""
    model = preset("driven_qubit")
    gen = assemble_generator(model, 8)
    state0 = HermiteState.product(np.diag([1.0, 0.0]), gen.params)
    states = evolve_sampled(state0, gen, [0.5, 1.0], tol=1e-10)
    for t, state in zip([0.5, 1.0], states):
        exact = (la.expm(gen.dense() * t) @ state0.vectors.reshape(-1)).reshape(gen.N, gen.d)
        assert np.max(np.abs(state.vectors - exact)) < 1e-7


def test_evolution_samples_and_edge_cases():
    model = preset("driven_qubit")
    gen = assemble_generator(model, 8)
    state0 = HermiteState.product(np.diag([1.0, 0.0]), gen.params)
    assert evolve(state0, gen, 0.0) is state0
    states = evolve_sampled(state0, gen, [0.0, 0.5, 1.0])
    assert len(states) == 3
    assert states[0] is state0
    for state in states[1:]:
        assert state.trace == pytest.approx(1.0)
        assert state.hermiticity_defect() < 1e-14
    with pytest.raises(ConfigError):
        evolve_sampled(state0, gen, [1.0, 0.5])
    with pytest.raises(ConfigError):
        evolve(state0, gen, -1.0)


def test_model_spec_validation():
    with pytest.raises(ConfigError):
        ModelSpec("bad", lambda m: hamiltonian(SIGMA_Z), np.array([[0, 1], [0, 0]]), 1.0, 1.0)
    with pytest.raises(ConfigError):
        ModelSpec("bad", lambda m: hamiltonian(SIGMA_Z), SIGMA_Z, 1.0, 0.0)
    unmonitored = ModelSpec("free", lambda m: hamiltonian(SIGMA_Z), SIGMA_Z, 0.0, 1.0)
    with pytest.raises(ConfigError):
        unmonitored.sigma
    channel = FeedbackChannel(FeedbackFunction.linear(), hamiltonian(SIGMA_Y), 0.0)
    model = ModelSpec("fb", lambda m: hamiltonian(SIGMA_Z), SIGMA_Z, 1.0, 1.0, feedback=(channel,))
    assert model.active_feedback == ()


def test_lindblad_spectrum_stationary_pair():
    spectrum = lindblad_spectrum(preset("driven_qubit"))
    assert spectrum.eigenvalues[0] == 0
    M0 = spectrum.right[:, 0].reshape(2, 2, order="F")
    assert np.allclose(M0, np.eye(2) / 2, atol=1e-12)
    assert spectrum.kernel_dim == 1
