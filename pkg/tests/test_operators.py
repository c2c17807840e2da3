import numpy as np
import pytest

from logic.errors import ConfigError, DegenerateKernelError
from logic.operators import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    anticommutator,
    apply_superop,
    build_liouvillian,
    build_superop,
    devectorize,
    dissipator,
    hamiltonian,
    left_right,
    spectral_decompose,
    spin_operators,
    stationary_state,
    trace_row,
    vectorize,
)


def _random_matrix(rng, R=2):
    return rng.normal(size=(R, R)) + 1j * rng.normal(size=(R, R))


def _random_density(rng, R=2):
    X = _random_matrix(rng, R)
    rho = X @ X.conj().T
    return rho / np.trace(rho)


def test_vectorize_is_column_stacking():
    """vec stacks columns, and devectorize undoes it (also for a batch)."""
    X = np.array([[1, 2], [3, 4]], dtype=complex)
    assert vectorize(X).tolist() == [1, 3, 2, 4]
    batch = np.stack([X, 2 * X])
    vecs = np.stack([vectorize(X), vectorize(2 * X)])
    assert np.array_equal(devectorize(vecs), batch)


def test_left_right_matches_matrix_product():
    """vec(sigma_x rho sigma_x) = (sigma_x^T kron sigma_x) vec(rho) for random rho."""
    rng = np.random.default_rng(1)
    S = left_right(SIGMA_X, SIGMA_X)
    for _ in range(20):
        rho = _random_matrix(rng)
        assert np.allclose(S @ vectorize(rho), vectorize(SIGMA_X @ rho @ SIGMA_X), atol=1e-14)


def test_anticommutator_and_hamiltonian_act_as_expected():
    rng = np.random.default_rng(2)
    X = _random_matrix(rng)
    assert np.allclose(apply_superop(anticommutator(SIGMA_Y), X), SIGMA_Y @ X + X @ SIGMA_Y)
    assert np.allclose(apply_superop(hamiltonian(SIGMA_Z), X), -1j * (SIGMA_Z @ X - X @ SIGMA_Z))


@pytest.mark.parametrize("superop", [
    hamiltonian(SIGMA_X),
    dissipator(SIGMA_Z),
    dissipator(SIGMA_MINUS),
    build_liouvillian(0.3 * SIGMA_X, [(0.2, SIGMA_MINUS), (0.1, SIGMA_Z)]),
])
def test_liouvillian_parts_preserve_trace_and_hermiticity(superop):
    """<<1| annihilates every generator, and Hermitian inputs stay Hermitian."""
    assert np.allclose(trace_row(2) @ superop, 0.0, atol=1e-14)
    rng = np.random.default_rng(3)
    rho = _random_density(rng)
    out = apply_superop(superop, rho)
    assert np.allclose(out, out.conj().T, atol=1e-14)


def test_build_superop_dispatch_and_errors():
    assert np.array_equal(build_superop("dissipator", SIGMA_Z), dissipator(SIGMA_Z))
    with pytest.raises(ConfigError):
        build_superop("unknown", SIGMA_Z)
    with pytest.raises(ConfigError):
        build_superop("left_right", SIGMA_Z)
    with pytest.raises(ConfigError):
        build_liouvillian(SIGMA_X, [(-1.0, SIGMA_MINUS)])
    with pytest.raises(ConfigError):
        hamiltonian(np.ones((2, 3)))


def test_stationary_state_of_decay_is_ground():
    """Pure decay sigma_- empties the excited state."""
    rho = stationary_state(build_liouvillian(np.zeros((2, 2)), [(1.0, SIGMA_MINUS)]))
    assert rho[0, 0].real == pytest.approx(1.0, abs=1e-12)
    assert abs(rho[1, 1]) < 1e-12


def test_thermal_bath_reaches_detailed_balance():
    """kappa = 0.01, n_B = 0.5: populations (n_B + 1, n_B) / (2 n_B + 1) = (0.75, 0.25)."""
    kappa, n_B = 0.01, 0.5
    S = build_liouvillian(np.zeros((2, 2)), [(kappa * n_B, SIGMA_PLUS), (kappa * (n_B + 1), SIGMA_MINUS)])
    rho = stationary_state(S)
    assert np.allclose(np.diag(rho).real, [0.75, 0.25], atol=1e-10)
    assert abs(rho[0, 1]) < 1e-10


def test_spin_operators_shapes_and_bound():
    spins = spin_operators(3)
    assert spins.dim == 8
    assert np.allclose(np.linalg.eigvalsh(spins.Sz), [-3, -1, -1, -1, 1, 1, 1, 3])
    assert np.allclose(spins.Sx @ spins.Sy - spins.Sy @ spins.Sx, 2j * spins.Sz)
    with pytest.raises(ConfigError):
        spin_operators(5)
    with pytest.raises(ConfigError):
        spin_operators(0)


def test_spectral_decompose_biorthonormal_and_reconstructs():
    Lam = hamiltonian(SIGMA_X) + 0.5 * dissipator(SIGMA_Z)
    m0 = np.eye(2) / 2
    spec = spectral_decompose(Lam, vectorize(m0))
    assert spec.eigenvalues[0] == 0
    assert spec.biorthogonality_defect() < 1e-10
    assert np.allclose(spec.left_rows[0], trace_row(2))
    rebuilt = (spec.right * spec.eigenvalues) @ spec.left_rows
    assert np.allclose(rebuilt, Lam, atol=1e-10)


def test_spectral_decompose_degenerate_kernel():
    """A pure-dephasing generator has a two-dimensional kernel."""
    Lam = dissipator(SIGMA_Z)
    m0 = np.diag([0.5, 0.5])
    with pytest.raises(DegenerateKernelError):
        spectral_decompose(Lam, vectorize(m0))
    spec = spectral_decompose(Lam, vectorize(m0), allow_degenerate=True)
    assert spec.kernel_dim == 2
    # complementary kernel vectors are traceless
    assert abs(trace_row(2) @ spec.right[:, 1]) < 1e-12
