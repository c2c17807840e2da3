import math

import numpy as np
import pytest
from scipy.integrate import quad

from logic.errors import ConfigError
from logic.hermite import (
    BasisParams,
    FeedbackFunction,
    alpha_matrix,
    alpha_quadrature,
    basis_function,
    basis_functions,
    delta_coefficients,
    gaussian_weight,
    generalized_hermite,
    j_moment_table,
    normalized_polynomials,
    orthonormality_matrix,
)


@pytest.mark.parametrize("N", [1, 5, 30])
def test_orthonormality_identity(N):
    """int h_n p_m dD = delta_nm."""
    O = orthonormality_matrix(BasisParams(0.3, N))
    assert np.max(np.abs(O - np.eye(N))) < 1e-10


def test_basis_function_zero_is_gaussian():
    params = BasisParams(0.5, 4)
    D = np.linspace(-3, 3, 13)
    assert np.allclose(basis_function(0, D, params), gaussian_weight(D, 0.5))
    assert basis_function(0, 0.0, params) == pytest.approx(1 / math.sqrt(2 * math.pi * 0.5))


def test_normalized_polynomials_match_generalized_hermite():
    """p_n = H_n / sqrt(n! sigma^n)."""
    sigma = 0.7
    D = np.linspace(-2, 2, 9)
    H = generalized_hermite(8, D, sigma)
    P = normalized_polynomials(8, D, sigma)
    for n in range(8):
        assert np.allclose(P[n], H[n] / math.sqrt(math.factorial(n) * sigma**n))


def test_basis_functions_integrate_to_delta_n0():
    sigma = 0.25
    for n in range(4):
        value, _ = quad(lambda d: basis_functions(n + 1, d, sigma)[n], -10, 10)
        assert value == pytest.approx(1.0 if n == 0 else 0.0, abs=1e-10)


def test_moment_table_against_quadrature():
    """J[n, q] = int D^q h_n dD for q <= 4."""
    params = BasisParams(0.4, 5)
    J = j_moment_table(4, params)
    for n in range(5):
        for q in range(5):
            value, _ = quad(lambda d: d**q * basis_functions(n + 1, d, params.sigma)[n], -12, 12)
            assert J[n, q] == pytest.approx(value, abs=1e-4)
    # Gaussian moments of h_0
    assert J[0, 2] == pytest.approx(0.4)
    assert J[0, 4] == pytest.approx(3 * 0.4**2)
    with pytest.raises(ConfigError):
        j_moment_table(-1, params)


def test_delta_coefficients_reproduce_values_at_zero():
    params = BasisParams(1.0, 6)
    c = delta_coefficients(params)
    assert c[0] == 1.0
    assert c[1] == 0.0
    assert c[2] == pytest.approx(-1 / math.sqrt(2))


def test_heaviside_alpha_closed_form_matches_quadrature():
    params = BasisParams(0.3, 12)
    f = FeedbackFunction.heaviside()
    closed = alpha_matrix(f, params)
    numeric = alpha_quadrature(f, params, f.breakpoints)
    assert np.max(np.abs(closed - numeric)) < 1e-10
    assert np.allclose(np.diag(closed), 0.5)


@pytest.mark.parametrize("coefficients", [(0.0, 1.0), (0.5, -0.2, 0.3), (0.0, 0.0, 0.0, 1.0)])
def test_polynomial_alpha_matches_quadrature(coefficients):
    params = BasisParams(0.5, 12)
    f = FeedbackFunction.polynomial(*coefficients)
    assert np.max(np.abs(alpha_matrix(f, params) - alpha_quadrature(f, params))) < 1e-10


def test_tabulated_alpha_reproduces_polynomial():
    """A cubic spline through samples of a cubic is exact on the tabulated range."""
    params = BasisParams(0.2, 8)
    grid = np.linspace(-params.window, params.window, 4001)
    cubic = FeedbackFunction.polynomial(0.1, 0.3, 0.0, -0.2)
    table = FeedbackFunction.tabulated(grid, cubic(grid))
    assert np.max(np.abs(alpha_matrix(table, params) - alpha_matrix(cubic, params))) < 1e-8


def test_tabulated_grid_must_cover_window():
    params = BasisParams(1.0, 4)
    grid = np.linspace(-2, 2, 50)
    with pytest.raises(ConfigError):
        alpha_matrix(FeedbackFunction.tabulated(grid, np.tanh(grid)), params)
    # +/-12 clears 10 sqrt(sigma) but not the window (10 + 2 sqrt(N)) sqrt(sigma) = 14
    grid = np.linspace(-12, 12, 200)
    with pytest.raises(ConfigError):
        alpha_matrix(FeedbackFunction.tabulated(grid, np.tanh(grid)), params)
    grid = np.linspace(-params.window, params.window, 400)
    alpha = alpha_matrix(FeedbackFunction.tabulated(grid, np.tanh(grid)), params)
    assert np.allclose(alpha, alpha.T)


def test_basis_params_validation():
    with pytest.raises(ConfigError):
        BasisParams(0.0, 4)
    with pytest.raises(ConfigError):
        BasisParams(1.0, 0)
    with pytest.raises(ConfigError):
        BasisParams.from_rates(1.0, 0.0, 4)
    assert BasisParams.from_rates(2.0, 0.5, 4).sigma == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        FeedbackFunction("sigmoid")
