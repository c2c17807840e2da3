"""Closed-form results used as oracles for the numerical solvers."""

from scipy.stats import norm


def signal_noise_variance(gamma: float, lam: float) -> float:
    return gamma / (8.0 * lam)


def driven_qubit_covariance(omega: float, lam: float, gamma: float) -> float:
    """Stationary E[D sigma_z] for H = omega sigma_x with sigma_z monitored."""
    return gamma * (gamma + 2.0 * lam) / (gamma**2 + 2.0 * gamma * lam + 4.0 * omega**2)


def driven_qubit_variance(omega: float, lam: float, gamma: float) -> float:
    # the signal mean vanishes, so Var(D) = E[D sigma_z] + sigma
    return driven_qubit_covariance(omega, lam, gamma) + signal_noise_variance(gamma, lam)


def thermal_populations(n_B: float) -> tuple[float, float]:
    """(ground, excited) populations of an unmonitored thermal qubit."""
    total = 2.0 * n_B + 1.0
    return (n_B + 1.0) / total, n_B / total


def thermal_ground_population(kappa: float, n_B: float, lam: float) -> float:
    """Ground population of a thermal qubit whose sigma_x is monitored at rate lam."""
    z = kappa / (kappa * (2.0 * n_B + 1.0) + 2.0 * lam)
    return 0.5 * (1.0 + z)


def gaussian_moment(q: int, variance: float, mean: float = 0.0) -> float:
    return float(norm(loc=mean, scale=variance**0.5).moment(q))
