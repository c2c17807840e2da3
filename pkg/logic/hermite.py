"""
Generalized Hermite machinery for the signal coordinate D.

The signal-resolved state is expanded as

    rho(D) = sum_n M_n h_n(D),   h_n(D) = p_n(D) w(D),

with w(D) = exp(-D^2 / 2 sigma) / sqrt(2 pi sigma) and p_n = H_n / sqrt(sigma^n n!)
the normalized generalized Hermite polynomials, so that  int h_n p_m dD = delta_nm.
Everything here is evaluated through the three-term recurrence, never through
raw factorials.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from logic.errors import ConfigError, ConvergenceError

logger = logging.getLogger(__name__)

AlphaMatrix = npt.NDArray[np.float64]

FEEDBACK_KINDS = ("polynomial", "heaviside", "tabulated")
QUADRATURE_ORDERS = (8, 16, 32, 64)
QUADRATURE_TOL = 1e-12


@dataclass(frozen=True)
class BasisParams:
    """Detector-noise variance sigma = gamma / 8 lambda and the truncation order N."""

    sigma: float
    N: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}", sigma=self.sigma)
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"truncation N must be an integer >= 1, got {self.N}", N=self.N)

    @classmethod
    def from_rates(cls, gamma: float, lam: float, N: int) -> "BasisParams":
        if lam <= 0 or gamma <= 0:
            raise ConfigError(f"gamma and lambda must be > 0 (gamma={gamma}, lambda={lam})")
        return cls(sigma=gamma / (8.0 * lam), N=N)

    def with_N(self, N: int) -> "BasisParams":
        return BasisParams(self.sigma, N)

    @property
    def window(self) -> float:
        """Half-width of the quadrature window in D; grows with N so the tails stay negligible."""
        return (10.0 + 2.0 * math.sqrt(self.N)) * math.sqrt(self.sigma)


# ---------------------------------------------------------------------------
# Basis evaluation
# ---------------------------------------------------------------------------

def gaussian_weight(D: npt.ArrayLike, sigma: float) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return np.exp(-D * D / (2.0 * sigma)) / math.sqrt(2.0 * math.pi * sigma)


def _recurrence(N: int, D: np.ndarray, sigma: float, start: np.ndarray) -> np.ndarray:
    out = np.empty((N,) + D.shape, dtype=float)
    out[0] = start
    if N > 1:
        out[1] = D / math.sqrt(sigma) * start
    for n in range(1, N - 1):
        out[n + 1] = D / math.sqrt(sigma * (n + 1)) * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def normalized_polynomials(N: int, D: npt.ArrayLike, sigma: float) -> np.ndarray:
    """p_0 .. p_{N-1} evaluated at D; shape (N,) + D.shape."""
    D = np.asarray(D, dtype=float)
    return _recurrence(N, D, sigma, np.ones_like(D))


def basis_functions(N: int, D: npt.ArrayLike, sigma: float) -> np.ndarray:
    """h_0 .. h_{N-1} evaluated at D.

    The recurrence is run on h_n directly (seeded with the Gaussian weight) so
    the values stay bounded for large n.
    """
    D = np.asarray(D, dtype=float)
    return _recurrence(N, D, sigma, gaussian_weight(D, sigma))


def basis_function(n: int, D: npt.ArrayLike, params: BasisParams) -> np.ndarray | float:
    if n < 0:
        raise ConfigError(f"basis order must be >= 0, got {n}")
    value = basis_functions(n + 1, D, params.sigma)[n]
    return float(value) if np.ndim(value) == 0 else value


def generalized_hermite(N: int, D: npt.ArrayLike, sigma: float) -> np.ndarray:
    """Unnormalized H_0 .. H_{N-1} from H_{n+1} = D H_n - n sigma H_{n-1}. Overflows for large n."""
    D = np.asarray(D, dtype=float)
    out = np.empty((N,) + D.shape, dtype=float)
    out[0] = 1.0
    if N > 1:
        out[1] = D
    for n in range(1, N - 1):
        out[n + 1] = D * out[n] - n * sigma * out[n - 1]
    return out


def orthonormality_matrix(params: BasisParams) -> np.ndarray:
    """O_nm = int h_n p_m dD by Gauss-Hermite quadrature (exact for N below the node count)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(params.N + 8)
    D = math.sqrt(params.sigma) * nodes
    P = normalized_polynomials(params.N, D, params.sigma)
    weights = weights / math.sqrt(2.0 * math.pi)
    return (P * weights) @ P.T


def delta_coefficients(params: BasisParams) -> np.ndarray:
    """Expansion coefficients p_n(0) of a delta function at D = 0."""
    return normalized_polynomials(params.N, 0.0, params.sigma)


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _j_table(q_max: int, sigma: float) -> np.ndarray:
    J = np.zeros((q_max + 2, q_max + 1))
    J[0, 0] = 1.0
    for q in range(1, q_max + 1):
        for n in range(0, q + 1):
            J[n, q] = math.sqrt(sigma * (n + 1)) * J[n + 1, q - 1]
            if n > 0:
                J[n, q] += math.sqrt(n * sigma) * J[n - 1, q - 1]
    J = J[: q_max + 1]
    J.setflags(write=False)
    return J


def j_moment_table(q_max: int, params: BasisParams) -> np.ndarray:
    """Table J[n, q] = int D^q h_n(D) dD for 0 <= n, q <= q_max (zero for n > q)."""
    if q_max < 0:
        raise ConfigError(f"q_max must be >= 0, got {q_max}")
    return _j_table(int(q_max), float(params.sigma))


# ---------------------------------------------------------------------------
# Feedback functions and alpha matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackFunction:
    """f_p(D), one of a polynomial, the Heaviside step, or a cubic spline through samples."""

    kind: str
    coefficients: tuple[float, ...] = ()
    grid: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    _spline: CubicSpline | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in FEEDBACK_KINDS:
            raise ConfigError(f"Unknown feedback kind '{self.kind}'. Expected one of {list(FEEDBACK_KINDS)}.")
        if self.kind == "polynomial":
            if not self.coefficients or not np.all(np.isfinite(self.coefficients)):
                raise ConfigError("polynomial feedback needs finite coefficients")
        if self.kind == "tabulated":
            x = np.asarray(self.grid, dtype=float)
            y = np.asarray(self.values, dtype=float)
            if x.ndim != 1 or x.shape != y.shape or x.size < 4:
                raise ConfigError("tabulated feedback needs matching grid/values with at least 4 samples")
            if np.any(np.diff(x) <= 0):
                raise ConfigError("tabulated feedback grid must be strictly increasing")
            object.__setattr__(self, "_spline", CubicSpline(x, y))

    @classmethod
    def polynomial(cls, *coefficients: float) -> "FeedbackFunction":
        """f(D) = sum_k coefficients[k] D^k."""
        return cls("polynomial", coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def linear(cls) -> "FeedbackFunction":
        return cls.polynomial(0.0, 1.0)

    @classmethod
    def heaviside(cls) -> "FeedbackFunction":
        return cls("heaviside")

    @classmethod
    def tabulated(cls, grid: Sequence[float], values: Sequence[float]) -> "FeedbackFunction":
        return cls("tabulated", grid=tuple(map(float, grid)), values=tuple(map(float, values)))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.kind == "heaviside":
            return (0.0,)
        if self.kind == "tabulated":
            return self.grid
        return ()

    def __call__(self, D: npt.ArrayLike) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(D, self.coefficients)
        if self.kind == "heaviside":
            return np.heaviside(D, 0.5)
        # constant extension beyond the tabulated range
        return self._spline(np.clip(D, self.grid[0], self.grid[-1]))


def _polynomial_alpha(coefficients: Sequence[float], N: int, sigma: float) -> np.ndarray:
    P = len(coefficients) - 1
    size = N + P
    m = np.arange(1, size)
    X = np.diag(np.sqrt(sigma * m), 1) + np.diag(np.sqrt(sigma * m), -1)
    power = np.eye(size)
    total = coefficients[0] * power
    for a in coefficients[1:]:
        power = power @ X
        total = total + a * power
    return total[:N, :N]


def _heaviside_alpha(N: int) -> np.ndarray:
    n, m = np.indices((N, N))
    odd_sum = (n + m) % 2 == 1
    # e is the even index, o the odd one; the closed form is stated for that ordering
    e = np.where(n % 2 == 0, n, m)
    o = np.where(n % 2 == 0, m, n)
    # log m!! for odd m and log (n-1)!! for even n, with (-1)!! = 1
    log_odd_df = gammaln(o + 1) - 0.5 * (o - 1) * math.log(2.0) - gammaln((o - 1) / 2 + 1)
    log_even_df = gammaln(e + 1) - 0.5 * e * math.log(2.0) - gammaln(e / 2 + 1)
    log_mag = log_odd_df + log_even_df - 0.5 * (math.log(2.0 * math.pi) + gammaln(n + 1) + gammaln(m + 1))
    sign = np.where(((e + o - 1) // 2) % 2 == 1, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        table = np.where(odd_sum, sign * np.exp(log_mag) / (o - e), 0.0)
    np.fill_diagonal(table, 0.5)
    return table


def alpha_quadrature(
    func: Callable[[np.ndarray], np.ndarray],
    params: BasisParams,
    breakpoints: Sequence[float] = (),
    tol: float = QUADRATURE_TOL,
) -> np.ndarray:
    """alpha_nm = int f(D) p_n(D) p_m(D) w(D) dD by composite Gauss-Legendre quadrature.

    Panels are uniform on the window plus any breakpoints of f; the rule order
    is doubled until successive tables agree to ``tol``.
    """
    half = params.window
    n_panels = max(40, 2 * params.N)
    edges = np.linspace(-half, half, n_panels + 1)
    inner = [b for b in breakpoints if -half < b < half]
    edges = np.unique(np.concatenate([edges, inner]))
    lo, hi = edges[:-1], edges[1:]

    previous = None
    change = math.inf
    for order in QUADRATURE_ORDERS:
        x, wts = np.polynomial.legendre.leggauss(order)
        nodes = (0.5 * (hi - lo)[:, None] * x + 0.5 * (hi + lo)[:, None]).ravel()
        weights = (0.5 * (hi - lo)[:, None] * wts).ravel()
        P = normalized_polynomials(params.N, nodes, params.sigma)
        kernel = weights * gaussian_weight(nodes, params.sigma) * func(nodes)
        table = (P * kernel) @ P.T
        if previous is not None:
            change = float(np.max(np.abs(table - previous)))
            if change < tol:
                logger.debug("alpha quadrature converged at order %d (change %.2e)", order, change)
                return 0.5 * (table + table.T)
        previous = table
    raise ConvergenceError(
        f"alpha quadrature did not converge: last change {change:.3e} > {tol:g}",
        residual=change, orders=list(QUADRATURE_ORDERS),
    )


def alpha_matrix(f: FeedbackFunction, params: BasisParams) -> AlphaMatrix:
    """Hermite-basis representation alpha_nm = int f p_n p_m w dD of one feedback function."""
    if f.kind == "polynomial":
        return _polynomial_alpha(f.coefficients, params.N, params.sigma)
    if f.kind == "heaviside":
        return _heaviside_alpha(params.N)
    if f.grid[0] > -params.window or f.grid[-1] < params.window:
        raise ConfigError(
            f"tabulated feedback grid must cover the quadrature window +/-{params.window:.6g}",
            grid=[f.grid[0], f.grid[-1]], required=params.window,
        )
    return alpha_quadrature(f, params, f.breakpoints)
