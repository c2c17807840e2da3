"""
Signal and correlation statistics of a Hermite state.

Distributions are reconstructed from the characteristic matrices

    rho_hat(K) = int e^{iKD} rho(D) dD = e^{-u^2/2} g(u),   u = K sqrt(sigma),
    g(u) = sum_m M_m (iu)^m / sqrt(m!),

followed by a tapered discrete inverse Fourier transform. The series for g
cancels badly once |A|^2 / sigma is large, so for feedback-free stationary
states it is only summed near u = 0 and then continued outwards by integrating

    dg/du = Lambda g / (gamma u) + (i / 2 sqrt(sigma)) C_A g,

which is what the coefficient recursion becomes in Fourier space.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
import scipy.linalg as la
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid

from logic.errors import (
    ConfigError,
    ConvergenceError,
    NumericalError,
    ResonanceError,
    TruncationError,
    UndefinedConditionalError,
)
from logic.hermite import j_moment_table
from logic.operators import ComplexMatrix, Spectrum, anticommutator, dissipator, hermitize, vectorize
from logic.qfpme import HermiteState, ModelSpec, parameter_derivatives, steady_state_forward

logger = logging.getLogger(__name__)

GRID_POINTS = 2001
CUTOFF_SCALE = 8.0
TAPER_WIDTH = 0.25
CLIP_LIMIT = 1e-3
CANCELLATION_LIMIT = 1e-9
CONDITIONAL_FLOOR = 1e-12
FISHER_FLOOR = 1e-10
ENTROPY_CLIP = 1e-14


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalDistribution:
    """P(D) on an increasing grid, with the reconstruction settings that produced it."""

    grid: np.ndarray
    density: np.ndarray
    cutoff: float
    N: int
    clip_mass: float = 0.0
    method: str = "series"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"D": self.grid, "P": self.density})

    def moment(self, q: int) -> float:
        return float(trapezoid(self.grid ** q * self.density, self.grid))

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        return self.moment(2) - self.mean ** 2

    def cdf(self) -> np.ndarray:
        out = cumulative_trapezoid(self.density, self.grid, initial=0.0)
        return out / out[-1]

    def local_maxima(self, min_height: float = 1e-3) -> np.ndarray:
        p = self.density
        inner = (p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:]) & (p[1:-1] > min_height * p.max())
        return self.grid[1:-1][inner]


@dataclass(frozen=True)
class CorrelationCurve:
    lags: np.ndarray
    values: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"tau": self.lags, "C": self.values})


@dataclass(frozen=True)
class ConditionalState:
    rho: ComplexMatrix
    weight: float
    clip: float


@dataclass(frozen=True)
class FisherResult:
    value: float
    masked_mass: float
    N: int
    grid_points: int
    history: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Coefficients and moments
# ---------------------------------------------------------------------------

def signal_coefficients(state: HermiteState) -> np.ndarray:
    """c_m = Tr(M_m)."""
    return np.real(np.trace(state.matrices, axis1=1, axis2=2))


def signal_moment(state: HermiteState, q: int) -> float:
    """<D^q> = sum_n c_n J_n(q); needs the first q+1 coefficients."""
    if q < 0:
        raise ConfigError(f"moment order must be >= 0, got {q}")
    if state.N < q + 1:
        raise TruncationError(f"moment q={q} needs N >= {q + 1}, state has N={state.N}", q=q, N=state.N)
    c = signal_coefficients(state)[: q + 1]
    J = j_moment_table(q, state.params)
    return float(c @ J[:, q])


def signal_mean(state: HermiteState) -> float:
    return signal_moment(state, 1)


def signal_variance(state: HermiteState) -> float:
    return signal_moment(state, 2) - signal_moment(state, 1) ** 2


def signal_observable_covariance(state: HermiteState, B: npt.ArrayLike) -> float:
    """cov(D, B) = sqrt(sigma) [Tr(M_1 B) - Tr(M_1) Tr(M_0 B)]."""
    B = np.asarray(B, dtype=complex)
    if B.shape != (state.R, state.R):
        raise ConfigError(f"observable shape {B.shape} does not match R={state.R}")
    if np.max(np.abs(B - B.conj().T)) > 1e-12 * max(1.0, float(np.max(np.abs(B)))):
        raise ConfigError("observable B must be Hermitian")
    if state.N < 2:
        return 0.0
    M0, M1 = state.matrices[0], state.matrices[1]
    value = math.sqrt(state.params.sigma) * (np.trace(M1 @ B) - np.trace(M1) * np.trace(M0 @ B))
    if abs(value.imag) > 1e-12 * max(1.0, abs(value.real)):
        logger.warning("covariance has imaginary residue %.3e", value.imag)
    return float(value.real)


# ---------------------------------------------------------------------------
# Characteristic function
# ---------------------------------------------------------------------------

def _series_terms(N: int, u: np.ndarray) -> np.ndarray:
    """(iu)^m / sqrt(m!) for m < N, shape (N, len(u)), by term recurrence."""
    terms = np.empty((N, u.size), dtype=complex)
    terms[0] = 1.0
    for m in range(1, N):
        terms[m] = terms[m - 1] * (1j * u) / math.sqrt(m)
    return terms


def characteristic_function(state: HermiteState, K: npt.ArrayLike) -> np.ndarray:
    """<e^{iKD}> = e^{-K^2 sigma / 2} sum_m c_m (iK sqrt(sigma))^m / sqrt(m!)."""
    K = np.atleast_1d(np.asarray(K, dtype=float))
    u = K * math.sqrt(state.params.sigma)
    c = signal_coefficients(state)
    return np.exp(-0.5 * u * u) * (c @ _series_terms(state.N, u))


def characteristic_matrices(state: HermiteState, K: npt.ArrayLike) -> np.ndarray:
    """Operator-valued version rho_hat(K), shape (len(K), R, R)."""
    K = np.atleast_1d(np.asarray(K, dtype=float))
    u = K * math.sqrt(state.params.sigma)
    g = np.einsum("mk,mab->kab", _series_terms(state.N, u), state.matrices)
    return np.exp(-0.5 * u * u)[:, None, None] * g


def _cancellation_bound(state: HermiteState, u: np.ndarray) -> np.ndarray:
    norms = state.block_norms()
    magnitude = norms @ np.abs(_series_terms(state.N, u))
    return np.finfo(float).eps * magnitude * np.exp(-0.5 * u * u)


def stable_cutoff(state: HermiteState, requested: float, limit: float = CANCELLATION_LIMIT) -> float:
    """Largest cutoff <= requested at which the series still has error below ``limit``."""
    s = math.sqrt(state.params.sigma)
    K = np.linspace(0.0, requested, 400)
    bad = np.nonzero(_cancellation_bound(state, K * s) > limit)[0]
    if bad.size == 0:
        return float(requested)
    cutoff = float(K[max(bad[0] - 1, 1)])
    logger.warning("series cancellation limits the cutoff to %.4g (requested %.4g)", cutoff, requested)
    return cutoff


def _series_radius(state: HermiteState) -> float:
    """u below which the truncated series is accurate to ~1e-13 with negligible cancellation."""
    u = np.linspace(0.02, 1.0, 50)
    terms = np.abs(_series_terms(state.N, u))
    tail = state.block_norms()[-1] * terms[-1]
    ok = (tail < 1e-13) & (_cancellation_bound(state, u) < 1e-13)
    return float(u[ok][-1]) if np.any(ok) else float(u[0])


def continued_characteristic(
    model: ModelSpec,
    state: HermiteState,
    K: npt.ArrayLike,
    derivative: HermiteState | None = None,
    rtol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray | None]:
    """rho_hat(K) (and its mu-derivative) for a feedback-free stationary state.

    Sums the series up to a safe radius and integrates the Fourier-space
    stationarity equation beyond it.
    """
    if model.active_feedback:
        raise ConfigError("Fourier continuation applies to feedback-free models only")
    K = np.atleast_1d(np.asarray(K, dtype=float))
    sigma = state.params.sigma
    s = math.sqrt(sigma)
    u = K * s
    R, d = state.R, state.R * state.R
    Lam = model.lindbladian() + model.lam * dissipator(model.measured)
    C = anticommutator(model.measured)
    dL = np.asarray(model.derivative(model.mu), dtype=complex) if derivative is not None else None

    u0 = _series_radius(state)
    if derivative is not None:
        u0 = min(u0, _series_radius(derivative))
    inner = u <= u0

    g = np.empty((u.size, d), dtype=complex)
    dg = np.empty((u.size, d), dtype=complex) if derivative is not None else None
    terms = _series_terms(state.N, u[inner])
    g[inner] = terms.T @ state.vectors
    if derivative is not None:
        dg[inner] = _series_terms(derivative.N, u[inner]).T @ derivative.vectors

    outer = ~inner
    if np.any(outer):
        start = _series_terms(state.N, np.array([u0]))[:, 0] @ state.vectors
        y0 = [start]
        if derivative is not None:
            y0.append(_series_terms(derivative.N, np.array([u0]))[:, 0] @ derivative.vectors)
        y0 = np.concatenate(y0)
        rotation = 0.5j / s * C

        def rhs(x: float, y: np.ndarray) -> np.ndarray:
            gv = y[:d]
            out = [Lam @ gv / (model.gamma * x) + rotation @ gv]
            if dL is not None:
                dv = y[d:]
                out.append((Lam @ dv + dL @ gv) / (model.gamma * x) + rotation @ dv)
            return np.concatenate(out)

        sol = solve_ivp(rhs, (u0, float(u[outer].max())), y0, method="DOP853",
                        t_eval=u[outer], rtol=rtol, atol=rtol * 1e-3)
        if not sol.success:
            raise NumericalError(f"Fourier continuation failed: {sol.message}")
        g[outer] = sol.y[:d].T
        if dg is not None:
            dg[outer] = sol.y[d:].T
        logger.debug("Fourier continuation from u0=%.3f over %d points (%d evaluations)", u0, outer.sum(), sol.nfev)

    damp = np.exp(-0.5 * u * u)[:, None]

    def as_matrices(vecs: np.ndarray) -> np.ndarray:
        return np.swapaxes((damp * vecs).reshape(u.size, R, R), 1, 2)

    return as_matrices(g), (as_matrices(dg) if dg is not None else None)


# ---------------------------------------------------------------------------
# Inverse transform
# ---------------------------------------------------------------------------

def default_window(state: HermiteState) -> float:
    """|<D>| + 10 sqrt(Var D), the half-width outside which P(D) is negligible."""
    mean = signal_mean(state) if state.N >= 2 else 0.0
    var = signal_variance(state) if state.N >= 3 else state.params.sigma
    half = abs(mean) + 10.0 * math.sqrt(max(var, state.params.sigma))
    return half


def default_grid(state: HermiteState, points: int = GRID_POINTS) -> np.ndarray:
    half = default_window(state)
    return np.linspace(-half, half, points)


def _window(state: HermiteState, grid: np.ndarray) -> float:
    return max(default_window(state), float(np.max(np.abs(grid))))


def frequency_grid(half: float, cutoff: float) -> tuple[np.ndarray, np.ndarray]:
    """K samples and inverse-transform weights (trapezoid, raised-cosine taper, 1/pi).

    The spacing keeps the aliasing period at four times the largest |D|.
    """
    dK = math.pi / (2.0 * half)
    k_max = (1.0 + TAPER_WIDTH) * cutoff
    n = int(math.ceil(k_max / dK)) + 1
    K = np.arange(n) * dK
    taper = np.where(
        K <= cutoff, 1.0,
        0.5 * (1.0 + np.cos(np.pi * np.clip((K - cutoff) / (TAPER_WIDTH * cutoff), 0.0, 1.0))),
    )
    weights = taper * dK / math.pi
    weights[0] *= 0.5
    return K, weights


def _invert(grid: np.ndarray, K: np.ndarray, weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """sum_j w_j Herm[e^{-i K_j D} values_j] for scalar or matrix values."""
    out = []
    for chunk in np.array_split(grid, max(1, grid.size // 256)):
        phase = np.exp(-1j * np.outer(chunk, K)) * weights
        if values.ndim == 1:
            out.append(np.real(phase @ values))
        else:
            out.append(hermitize(np.einsum("dk,kab->dab", phase, values)))
    return np.concatenate(out)


def _resolve_cutoff(state: HermiteState, cutoff: float | None) -> float:
    default = CUTOFF_SCALE / math.sqrt(state.params.sigma)
    if cutoff is None:
        return default
    if cutoff < default:
        logger.warning("cutoff %.4g is below the recommended %.4g", cutoff, default)
    return float(cutoff)


def _clip_and_normalize(grid: np.ndarray, density: np.ndarray) -> tuple[np.ndarray, float]:
    negative = np.clip(-density, 0.0, None)
    clip_mass = float(trapezoid(negative, grid))
    if clip_mass > CLIP_LIMIT:
        raise TruncationError(
            f"negative ripple of mass {clip_mass:.2e} in P(D); increase N", clip_mass=clip_mass
        )
    density = np.clip(density, 0.0, None)
    return density / trapezoid(density, grid), clip_mass


def reconstruct_distribution(
    state: HermiteState,
    grid: npt.ArrayLike | None = None,
    cutoff: float | None = None,
    model: ModelSpec | None = None,
) -> SignalDistribution:
    """P(D) from the characteristic function.

    With ``model`` given (feedback-free, ``state`` stationary for it) the
    characteristic function is continued by integration; otherwise the series is
    used up to the cutoff at which it stays numerically stable.
    """
    grid = default_grid(state) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
        raise ConfigError("distribution grid must be increasing with at least 3 points")
    cutoff = _resolve_cutoff(state, cutoff)
    if model is not None and not model.active_feedback:
        K, weights = frequency_grid(_window(state, grid), cutoff)
        rho_hat, _ = continued_characteristic(model, state, K)
        phi = np.trace(rho_hat, axis1=1, axis2=2)
        method = "continued"
    else:
        cutoff = stable_cutoff(state, cutoff)
        K, weights = frequency_grid(_window(state, grid), cutoff)
        phi = characteristic_function(state, K)
        method = "series"
    density, clip_mass = _clip_and_normalize(grid, _invert(grid, K, weights, phi))
    return SignalDistribution(grid, density, cutoff, state.N, clip_mass, method)


def reconstruct_operator_density(
    state: HermiteState,
    grid: np.ndarray,
    cutoff: float | None = None,
    model: ModelSpec | None = None,
) -> np.ndarray:
    """rho(D_k) for each grid point, shape (len(grid), R, R)."""
    cutoff = _resolve_cutoff(state, cutoff)
    if model is not None and not model.active_feedback:
        K, weights = frequency_grid(_window(state, grid), cutoff)
        rho_hat, _ = continued_characteristic(model, state, K)
    else:
        K, weights = frequency_grid(_window(state, grid), stable_cutoff(state, cutoff))
        rho_hat = characteristic_matrices(state, K)
    return _invert(grid, K, weights, rho_hat)


# ---------------------------------------------------------------------------
# Conditional states and information measures
# ---------------------------------------------------------------------------

def von_neumann_entropy(rho: ComplexMatrix) -> float:
    """S = -Tr rho ln rho in nats, eigenvalues clipped at 1e-14 inside the log."""
    p = np.linalg.eigvalsh(hermitize(rho))
    p = np.clip(p, 0.0, None)
    return float(-np.sum(p * np.log(np.clip(p, ENTROPY_CLIP, None))))


def fidelity(rho: ComplexMatrix, other: ComplexMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) other sqrt(rho)))^2."""
    root = _psd_sqrt(rho)
    inner = _psd_sqrt(root @ other @ root)
    return float(np.real(np.trace(inner)) ** 2)


def _psd_sqrt(m: ComplexMatrix) -> ComplexMatrix:
    # sqrtm is unreliable on singular input (pure states)
    p, U = la.eigh(hermitize(m))
    return (U * np.sqrt(np.clip(p, 0.0, None))) @ U.conj().T


def _clip_spectrum(rho: ComplexMatrix) -> tuple[ComplexMatrix, float]:
    p, U = np.linalg.eigh(hermitize(rho))
    clipped = np.clip(p, 0.0, 1.0)
    clip = float(np.max(np.abs(p - clipped)))
    clipped = clipped / clipped.sum()
    return (U * clipped) @ U.conj().T, clip


def conditional_state(
    state: HermiteState,
    D: float,
    model: ModelSpec | None = None,
    floor: float = CONDITIONAL_FLOOR,
) -> ConditionalState:
    """rho~(D) = rho(D) / P(D) with its weight P(D)."""
    rho = reconstruct_operator_density(state, np.array([float(D)]), model=model)[0]
    weight = float(np.real(np.trace(rho)))
    if weight < floor:
        raise UndefinedConditionalError(f"P(D={D:.4g}) = {weight:.3e} is below {floor:g}", D=D, weight=weight)
    normalized, clip = _clip_spectrum(rho / weight)
    if clip > 1e-6:
        logger.debug("conditional state at D=%.4g clipped by %.2e", D, clip)
    return ConditionalState(normalized, weight, clip)


def mutual_information(
    state: HermiteState,
    grid: npt.ArrayLike | None = None,
    model: ModelSpec | None = None,
    floor: float = CONDITIONAL_FLOOR,
) -> float:
    """I = S[M_0] - int P(D) S[rho~(D)] dD on the reconstruction grid."""
    grid = default_grid(state) if grid is None else np.asarray(grid, dtype=float)
    rho = reconstruct_operator_density(state, grid, model=model)
    P = np.real(np.trace(rho, axis1=1, axis2=2))
    keep = P > floor
    if not np.any(keep):
        raise UndefinedConditionalError("P(D) is below the floor everywhere on the grid")
    entropies = np.array([von_neumann_entropy(_clip_spectrum(r / p)[0]) for r, p in zip(rho[keep], P[keep])])
    weights = np.zeros_like(P)
    weights[keep] = P[keep]
    norm = trapezoid(weights, grid)
    weighted = np.zeros_like(P)
    weighted[keep] = P[keep] * entropies
    conditional = trapezoid(weighted, grid) / norm
    value = von_neumann_entropy(state.unconditional) - conditional
    bounded = min(max(value, 0.0), math.log(state.R))
    if abs(bounded - value) > 1e-8:
        logger.warning("mutual information %.6g outside [0, ln R]; truncation too small?", value)
    return float(bounded)


def mutual_information_converged(
    solve: Callable[[int], HermiteState],
    N0: int,
    model: ModelSpec | None = None,
    step: int = 4,
    tol: float = 1e-4,
    max_n: int = 400,
) -> tuple[float, list[tuple[int, float]]]:
    """Mutual information with increasing N until two successive values agree to ``tol``."""
    history: list[tuple[int, float]] = []
    N = N0
    while N <= max_n:
        value = mutual_information(solve(N), model=model)
        history.append((N, value))
        if len(history) > 1 and abs(history[-1][1] - history[-2][1]) < tol:
            return value, history
        N += step
    raise ConvergenceError("mutual information did not converge in N", history=history)


# ---------------------------------------------------------------------------
# Two-time correlations
# ---------------------------------------------------------------------------

def current_correlation(
    model: ModelSpec,
    spectrum: Spectrum,
    M0: ComplexMatrix,
    lags: Sequence[float],
) -> CorrelationCurve:
    """C(tau) = <D(t+tau) D(t)> - <D>^2 in the steady state, from the spectrum of Lambda."""
    if model.active_feedback:
        raise ConfigError("current correlation is defined here for feedback-free models only")
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise ConfigError("lags must be >= 0")
    gamma, sigma = model.gamma, model.sigma
    A = model.measured
    eta = spectrum.eigenvalues[1:]
    X = spectrum.right[:, 1:]
    gap = np.abs(gamma ** 2 - eta ** 2)
    if np.any(gap < 1e-8 * gamma ** 2):
        raise ResonanceError("an eigenvalue of Lambda has |eta| = gamma", eigenvalues=eta[gap < 1e-8 * gamma ** 2])
    trA = vectorize(A.T) @ X
    overlap = spectrum.left_rows[1:] @ vectorize(A @ M0 + M0 @ A)
    amplitude = 0.5 * gamma * trA * overlap / (gamma ** 2 - eta ** 2)
    tau = lags[:, None]
    values = sigma * np.exp(-gamma * lags) + np.sum(
        amplitude * (gamma * np.exp(tau * eta) + np.exp(-gamma * tau) * eta), axis=1
    )
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue > 1e-10 * max(1.0, float(np.max(np.abs(values.real)))):
        logger.warning("correlation has imaginary residue %.3e", residue)
    return CorrelationCurve(lags, values.real)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

def _fisher_once(
    model: ModelSpec, N: int, points: int, floor: float, reference: ComplexMatrix | None
) -> tuple[float, float]:
    state = steady_state_forward(model, N, reference)
    derivative = parameter_derivatives(model, state)
    grid = default_grid(state, points)
    K, weights = frequency_grid(_window(state, grid), CUTOFF_SCALE / math.sqrt(state.params.sigma))
    rho_hat, d_rho_hat = continued_characteristic(model, state, K, derivative)
    P = _invert(grid, K, weights, np.trace(rho_hat, axis1=1, axis2=2))
    dP = _invert(grid, K, weights, np.trace(d_rho_hat, axis1=1, axis2=2))
    raw_mass = float(trapezoid(np.clip(P, 0.0, None), grid))
    P, _ = _clip_and_normalize(grid, P)
    # dP shares the normalization applied to P
    dP = dP / raw_mass
    keep = P > floor
    integrand = np.zeros_like(P)
    integrand[keep] = dP[keep] ** 2 / P[keep]
    masked = float(trapezoid(np.where(keep, 0.0, P), grid))
    return float(trapezoid(integrand, grid)), masked


def fisher_information(
    model: ModelSpec,
    N: int,
    grid_points: int = GRID_POINTS,
    floor: float = FISHER_FLOOR,
    check: bool = True,
    tol: float = 1e-3,
    reference: ComplexMatrix | None = None,
) -> FisherResult:
    """F = int (dP/dmu)^2 / P dD of the stationary signal distribution at the model's mu.

    With ``check`` the value is recomputed at N + 8 and on a grid with twice the
    points; a relative change above ``tol`` raises ConvergenceError.
    """
    if model.lam == 0:
        return FisherResult(0.0, 0.0, N, grid_points)
    if model.derivative is None:
        raise ConfigError(f"model '{model.name}' has no parameter derivative")
    value, masked = _fisher_once(model, N, grid_points, floor, reference)
    history = [(N, grid_points, value)]
    if check:
        refined, _ = _fisher_once(model, N + 8, 2 * grid_points - 1, floor, reference)
        history.append((N + 8, 2 * grid_points - 1, refined))
        if abs(refined - value) > tol * max(abs(refined), 1e-9):
            raise ConvergenceError(
                f"Fisher information changed from {value:.6g} to {refined:.6g} under refinement",
                history=history,
            )
    if masked > 1e-6:
        logger.info("Fisher integrand masked %.2e of probability mass", masked)
    return FisherResult(value, masked, N, grid_points, tuple(history))
