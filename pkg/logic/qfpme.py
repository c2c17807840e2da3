"""
QFPME engine.

The signal-resolved density matrix is carried as a stack of Hermite coefficient
matrices M_0 .. M_{N-1}. Their coupled equations read

    dM_m/dt = (Lambda - gamma m) M_m + (gamma / 2 sqrt(sigma)) sqrt(m) {A, M_{m-1}}
              + sum_p sum_n alpha_p[n, m] L_p M_n,

with Lambda = L_0 + lambda D[A]. Without feedback the generator is block lower
triangular, so stationary states, parameter derivatives and perturbative
feedback corrections are all obtained by the same forward substitution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import numpy.typing as npt
import scipy.linalg as la
from scipy.integrate import RK45

from logic.errors import (
    ConfigError,
    ConvergenceError,
    DefectiveSpectrumError,
    DegenerateKernelError,
    ResonanceError,
    SingularSystemError,
    StiffnessError,
)
from logic.hermite import AlphaMatrix, BasisParams, FeedbackFunction, alpha_matrix, delta_coefficients
from logic.operators import (
    ComplexMatrix,
    Spectrum,
    SuperOperator,
    anticommutator,
    devectorize,
    dissipator,
    hermiticity_defect,
    hermitize,
    spectral_decompose,
    trace_row,
    vectorize,
)

logger = logging.getLogger(__name__)

STEADY_METHODS = ("auto", "forward", "spectral", "full")
KERNEL_TOL = 1e-9
RESONANCE_TOL = 1e-8


# ---------------------------------------------------------------------------
# Model description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackChannel:
    """One term f(D) * strength * L_p of the signal-dependent Liouvillian."""

    function: FeedbackFunction
    superop: SuperOperator
    strength: float = 1.0


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a monitored system.

    ``liouvillian(mu)`` returns L_0 at parameter value mu; ``derivative(mu)``
    returns dL_0/dmu when the model is used for Fisher information.
    A lambda of 0 describes an unmonitored system; it is accepted here but every
    solver needs sigma and therefore lambda > 0.
    """

    name: str
    liouvillian: Callable[[float], SuperOperator]
    measured: ComplexMatrix
    lam: float
    gamma: float
    feedback: tuple[FeedbackChannel, ...] = ()
    derivative: Callable[[float], SuperOperator] | None = None
    mu: float = 0.0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        A = np.asarray(self.measured, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError(f"measured operator must be square, got shape {A.shape}")
        if hermiticity_defect(A) > 1e-12 * max(1.0, float(np.max(np.abs(A)))):
            raise ConfigError("measured operator A must be Hermitian")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}", lam=self.lam)
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}", gamma=self.gamma)
        d = A.shape[0] ** 2
        for ch in self.feedback:
            if np.shape(ch.superop) != (d, d):
                raise ConfigError(f"feedback superoperator shape {np.shape(ch.superop)} != ({d}, {d})")
        object.__setattr__(self, "measured", A)

    @property
    def R(self) -> int:
        return self.measured.shape[0]

    @property
    def sigma(self) -> float:
        if self.lam <= 0:
            raise ConfigError("sigma = gamma / 8 lambda needs lambda > 0", lam=self.lam)
        return self.gamma / (8.0 * self.lam)

    @property
    def active_feedback(self) -> tuple[FeedbackChannel, ...]:
        return tuple(ch for ch in self.feedback if ch.strength != 0)

    def lindbladian(self, mu: float | None = None) -> SuperOperator:
        return np.asarray(self.liouvillian(self.mu if mu is None else mu), dtype=complex)

    def basis(self, N: int) -> BasisParams:
        return BasisParams.from_rates(self.gamma, self.lam, N)

    def shifted(self, dmu: float) -> "ModelSpec":
        return replace(self, mu=self.mu + dmu)

    def without_feedback(self) -> "ModelSpec":
        return replace(self, feedback=())

    def with_feedback_scale(self, scale: float) -> "ModelSpec":
        return replace(self, feedback=tuple(replace(ch, strength=ch.strength * scale) for ch in self.feedback))


# ---------------------------------------------------------------------------
# Hermite state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HermiteState:
    """Truncated coefficient stack M_0 .. M_{N-1}, shape (N, R, R)."""

    params: BasisParams
    matrices: npt.NDArray[np.complex128]

    def __post_init__(self) -> None:
        M = np.array(self.matrices, dtype=complex)
        if M.ndim != 3 or M.shape[1] != M.shape[2] or M.shape[0] != self.params.N:
            raise ConfigError(f"state matrices of shape {M.shape} do not match N={self.params.N}")
        M.setflags(write=False)
        object.__setattr__(self, "matrices", M)

    @classmethod
    def from_vectors(cls, params: BasisParams, vectors: npt.ArrayLike) -> "HermiteState":
        V = np.asarray(vectors, dtype=complex)
        return cls(params, devectorize(V))

    @classmethod
    def product(cls, rho: npt.ArrayLike, params: BasisParams) -> "HermiteState":
        """System in rho, detector in its stationary Gaussian noise: M_0 = rho, others zero."""
        rho = np.asarray(rho, dtype=complex)
        M = np.zeros((params.N,) + rho.shape, dtype=complex)
        M[0] = rho
        return cls(params, M)

    @classmethod
    def delta(cls, rho: npt.ArrayLike, params: BasisParams) -> "HermiteState":
        """System in rho, detector signal exactly at D = 0."""
        rho = np.asarray(rho, dtype=complex)
        return cls(params, delta_coefficients(params)[:, None, None] * rho[None])

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def R(self) -> int:
        return self.matrices.shape[1]

    @property
    def vectors(self) -> npt.NDArray[np.complex128]:
        """Row m is vec(M_m) (column stacking)."""
        return np.swapaxes(self.matrices, 1, 2).reshape(self.N, -1)

    @property
    def unconditional(self) -> ComplexMatrix:
        return self.matrices[0]

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.matrices[0]))

    def block_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrices, axis=(1, 2))

    def tail_ratio(self) -> float:
        """Size of the last two retained blocks relative to M_0."""
        norms = self.block_norms()
        head = norms[0] if norms[0] > 0 else 1.0
        return float(np.max(norms[-2:]) / head) if self.N > 1 else 0.0

    def hermiticity_defect(self) -> float:
        return hermiticity_defect(self.matrices)

    def resized(self, N: int) -> "HermiteState":
        """Truncate or zero-pad to N blocks."""
        M = np.zeros((N, self.R, self.R), dtype=complex)
        k = min(N, self.N)
        M[:k] = self.matrices[:k]
        return HermiteState(self.params.with_N(N), M)

    def max_block_deviation(self, other: "HermiteState") -> float:
        """max_n ||M_n - M'_n||_F relative to the largest block norm."""
        N = min(self.N, other.N)
        diff = np.linalg.norm(self.matrices[:N] - other.matrices[:N], axis=(1, 2))
        scale = max(float(np.max(self.block_norms())), 1e-300)
        return float(np.max(diff) / scale)

    def __add__(self, other: "HermiteState") -> "HermiteState":
        return HermiteState(self.params, self.matrices + other.matrices)

    def __mul__(self, scalar: float) -> "HermiteState":
        return HermiteState(self.params, scalar * self.matrices)

    __rmul__ = __mul__


def _tidy(params: BasisParams, vectors: np.ndarray, normalize: bool = True) -> HermiteState:
    M = hermitize(devectorize(vectors))
    if normalize:
        M = M / np.trace(M[0]).real
    return HermiteState(params, M)


# ---------------------------------------------------------------------------
# Block generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlockGenerator:
    """Blockwise storage of Q = Q_0 + Q_fb acting on stacked vec(M_m)."""

    params: BasisParams
    lindbladian: SuperOperator
    measured: ComplexMatrix
    lam: float
    gamma: float
    feedback: tuple[tuple[AlphaMatrix, SuperOperator], ...] = ()

    def __post_init__(self) -> None:
        for alpha, _ in self.feedback:
            if np.shape(alpha) != (self.params.N, self.params.N):
                raise ConfigError(
                    f"alpha matrix of shape {np.shape(alpha)} does not match N={self.params.N}"
                )

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def R(self) -> int:
        return self.measured.shape[0]

    @property
    def d(self) -> int:
        return self.R * self.R

    @property
    def coupling_scale(self) -> float:
        return self.gamma / (2.0 * math.sqrt(self.params.sigma))

    @cached_property
    def dephasing(self) -> SuperOperator:
        return self.lam * dissipator(self.measured)

    @cached_property
    def coupling(self) -> SuperOperator:
        """C_A = {A, .}."""
        return anticommutator(self.measured)

    @cached_property
    def Lam(self) -> SuperOperator:
        return self.lindbladian + self.dephasing

    def block(self, m: int, n: int) -> SuperOperator:
        out = np.zeros((self.d, self.d), dtype=complex)
        if m == n:
            out += self.Lam - self.gamma * m * np.eye(self.d)
        if n == m - 1:
            out += self.coupling_scale * math.sqrt(m) * self.coupling
        for alpha, superop in self.feedback:
            out += alpha[n, m] * superop
        return out

    def dense(self, include_feedback: bool = True) -> npt.NDArray[np.complex128]:
        """Materialize the (N d) x (N d) matrix."""
        N, d = self.N, self.d
        F = np.diag(np.arange(N, dtype=float))
        G = np.diag(np.sqrt(np.arange(1, N, dtype=float)), -1)
        Q = np.kron(np.eye(N), self.Lam) - self.gamma * np.kron(F, np.eye(d))
        Q = Q + self.coupling_scale * np.kron(G, self.coupling)
        if include_feedback:
            for alpha, superop in self.feedback:
                Q = Q + np.kron(alpha.T, superop)
        return Q

    def feedback_dense(self) -> npt.NDArray[np.complex128]:
        Q = np.zeros((self.N * self.d,) * 2, dtype=complex)
        for alpha, superop in self.feedback:
            Q += np.kron(alpha.T, superop)
        return Q

    def without_feedback(self) -> "BlockGenerator":
        return replace(self, feedback=())


def assemble_generator(model: ModelSpec, N: int, include_feedback: bool = True) -> BlockGenerator:
    params = model.basis(N)
    feedback = ()
    if include_feedback:
        feedback = tuple(
            (alpha_matrix(ch.function, params), ch.strength * np.asarray(ch.superop, dtype=complex))
            for ch in model.active_feedback
        )
    return BlockGenerator(
        params=params,
        lindbladian=model.lindbladian(),
        measured=model.measured,
        lam=model.lam,
        gamma=model.gamma,
        feedback=feedback,
    )


def _apply_vectors(V: np.ndarray, gen: BlockGenerator, feedback: bool = True) -> np.ndarray:
    N, R = gen.N, gen.R
    A = gen.measured
    M = devectorize(V, R)
    # -(lambda/2)[A,[A,M]] and {A, M} in matrix form
    AM = A @ M
    MA = M @ A
    deph = -0.5 * gen.lam * (A @ (AM - MA) - (AM - MA) @ A)
    out = V @ gen.lindbladian.T + vectorize_batch(deph)
    out -= gen.gamma * np.arange(N)[:, None] * V
    if N > 1:
        anti = AM[:-1] + MA[:-1]
        out[1:] += gen.coupling_scale * np.sqrt(np.arange(1, N))[:, None] * vectorize_batch(anti)
    if feedback:
        for alpha, superop in gen.feedback:
            out += alpha.T @ (V @ superop.T)
    return out


def vectorize_batch(M: np.ndarray) -> np.ndarray:
    return np.swapaxes(M, -1, -2).reshape(M.shape[0], -1)


def apply_generator(state: HermiteState, gen: BlockGenerator) -> HermiteState:
    """dM/dt for the given state, applied blockwise without forming Q."""
    if state.N != gen.N or state.R != gen.R:
        raise ConfigError(f"state (N={state.N}, R={state.R}) does not match generator (N={gen.N}, R={gen.R})")
    return HermiteState.from_vectors(state.params, _apply_vectors(state.vectors, gen))


# ---------------------------------------------------------------------------
# Shifted solves shared by every forward substitution
# ---------------------------------------------------------------------------

class ShiftedSolver:
    """Solves Lambda x = b (on the trace-fixed complement) and (Lambda - gamma n) x = b.

    LU factorizations are cached per shift, so a stationary solve, its parameter
    derivatives and perturbative corrections all reuse them.
    """

    def __init__(self, Lam: SuperOperator, gamma: float) -> None:
        self.Lam = np.asarray(Lam, dtype=complex)
        self.gamma = gamma
        self.d = self.Lam.shape[0]
        self.R = int(round(math.sqrt(self.d)))
        self.scale = max(float(np.linalg.norm(self.Lam)), 1.0)
        self._lu: dict[int, tuple] = {}
        self._eigenvalues: np.ndarray | None = None
        self._svd: tuple | None = None

    @property
    def eigenvalues(self) -> np.ndarray:
        if self._eigenvalues is None:
            self._eigenvalues = la.eigvals(self.Lam)
        return self._eigenvalues

    def _kernel(self) -> tuple[np.ndarray, np.ndarray, int]:
        if self._svd is None:
            U, s, Vh = la.svd(self.Lam)
            k = int(np.sum(s < KERNEL_TOL * self.scale))
            self._svd = (U, Vh, max(k, 1))
        return self._svd

    @property
    def kernel_dim(self) -> int:
        return self._kernel()[2]

    def _bordered(self, rhs: np.ndarray, trace_value: float) -> np.ndarray:
        one = trace_row(self.R)
        system = np.vstack([self.Lam, one[None, :]])
        b = np.concatenate([rhs, [trace_value]])
        x, *_ = la.lstsq(system, b)
        residual = float(np.linalg.norm(system @ x - b))
        if residual > 1e-8 * (self.scale * np.linalg.norm(x) + np.linalg.norm(b)):
            raise SingularSystemError(
                f"bordered system has no solution (residual {residual:.3e})", residual=residual
            )
        return x

    def stationary(self, reference: ComplexMatrix | None = None) -> np.ndarray:
        """vec(M_0) with Lambda M_0 = 0 and Tr M_0 = 1.

        A multi-dimensional kernel is an error unless a reference state is given;
        then the reference is projected onto the kernel along the range, which is
        where the unconditional dynamics started in the reference ends up.
        """
        U, Vh, k = self._kernel()
        if k == 1:
            rhs = np.zeros(self.d, dtype=complex)
            return self._bordered(rhs, 1.0)
        if reference is None:
            raise DegenerateKernelError(f"stationary subspace of Lambda has dimension {k}", dim=k)
        logger.warning("stationary subspace has dimension %d; projecting the reference state onto it", k)
        K = Vh[-k:].conj().T
        L = U[:, -k:]
        v = vectorize(reference)
        coeffs = la.solve(L.conj().T @ K, L.conj().T @ v)
        x = K @ coeffs
        return x / (trace_row(self.R) @ x)

    def solve_traceless(self, rhs: np.ndarray) -> np.ndarray:
        """Lambda x = rhs with Tr x = 0."""
        if self.kernel_dim > 1:
            raise DegenerateKernelError(
                f"traceless solve is not unique on a {self.kernel_dim}-dimensional kernel", dim=self.kernel_dim
            )
        return self._bordered(rhs, 0.0)

    def solve_shifted(self, n: int, rhs: np.ndarray) -> np.ndarray:
        shift = self.gamma * n
        gap = np.abs(self.eigenvalues - shift)
        j = int(np.argmin(gap))
        if gap[j] < RESONANCE_TOL * (abs(self.eigenvalues[j]) + shift):
            raise SingularSystemError(
                f"Lambda - gamma*{n} is singular: eigenvalue {self.eigenvalues[j]:.6g} resonates with {shift:.6g}",
                n=n, eigenvalue=complex(self.eigenvalues[j]),
            )
        if n not in self._lu:
            self._lu[n] = la.lu_factor(self.Lam - shift * np.eye(self.d))
        x = la.lu_solve(self._lu[n], rhs)
        return x


def _forward_substitute(
    solver: ShiftedSolver,
    gen: BlockGenerator,
    first: np.ndarray,
    sources: np.ndarray | None = None,
) -> np.ndarray:
    """Fill blocks n >= 1 of  (Lambda - gamma n) x_n = -c sqrt(n) C_A x_{n-1} + s_n."""
    N = gen.N
    V = np.zeros((N, gen.d), dtype=complex)
    V[0] = first
    C = gen.coupling
    for n in range(1, N):
        rhs = -gen.coupling_scale * math.sqrt(n) * (C @ V[n - 1])
        if sources is not None:
            rhs = rhs + sources[n]
        V[n] = solver.solve_shifted(n, rhs)
        if logger.isEnabledFor(logging.DEBUG):
            res = np.linalg.norm((gen.Lam - gen.gamma * n * np.eye(gen.d)) @ V[n] - rhs)
            logger.debug("block %d: |M_n| = %.3e residual %.2e", n, np.linalg.norm(V[n]), res)
    return V


def _require_no_feedback(model: ModelSpec) -> None:
    if model.active_feedback:
        raise ConfigError(
            f"model '{model.name}' has active feedback; use steady_state_full or perturbative_steady"
        )


def _report(state: HermiteState, method: str) -> HermiteState:
    logger.info("%s steady state: N=%d tail ratio %.2e", method, state.N, state.tail_ratio())
    return state


# ---------------------------------------------------------------------------
# Steady states
# ---------------------------------------------------------------------------

def steady_state_forward(
    model: ModelSpec,
    N: int,
    reference: ComplexMatrix | None = None,
    solver: ShiftedSolver | None = None,
) -> HermiteState:
    """Stationary state by block forward substitution (no feedback)."""
    _require_no_feedback(model)
    gen = assemble_generator(model, N, include_feedback=False)
    solver = solver or ShiftedSolver(gen.Lam, gen.gamma)
    V = _forward_substitute(solver, gen, solver.stationary(reference))
    return _report(_tidy(gen.params, V), "forward")


def lindblad_spectrum(model: ModelSpec, reference: ComplexMatrix | None = None) -> Spectrum:
    """Spectrum of Lambda with the stationary pair at index 0."""
    Lam = model.lindbladian() + model.lam * dissipator(model.measured)
    m0 = ShiftedSolver(Lam, model.gamma).stationary(reference)
    return spectral_decompose(Lam, m0, allow_degenerate=reference is not None)


def steady_state_spectral(model: ModelSpec, N: int, spectrum: Spectrum | None = None,
                          reference: ComplexMatrix | None = None) -> HermiteState:
    """Stationary state from the eigendecomposition of Lambda.

    In eigen-coordinates u_n = Y^dagger vec(M_n) the recursion is diagonal:
    u_n = -c sqrt(n) (Y^dagger C_A X) u_{n-1} / (eta - gamma n).
    """
    _require_no_feedback(model)
    gen = assemble_generator(model, N, include_feedback=False)
    spectrum = spectrum or lindblad_spectrum(model, reference)
    eta = spectrum.eigenvalues
    X = spectrum.right
    T = spectrum.left_rows @ gen.coupling @ X

    U = np.zeros((N, gen.d), dtype=complex)
    U[0, 0] = 1.0
    for n in range(1, N):
        denom = eta - gen.gamma * n
        close = np.abs(denom) < RESONANCE_TOL * (np.abs(eta) + gen.gamma * n)
        if np.any(close):
            raise ResonanceError(
                f"eigenvalue resonates with gamma*{n}", n=n, eigenvalues=eta[close]
            )
        U[n] = -gen.coupling_scale * math.sqrt(n) * (T @ U[n - 1]) / denom
    V = U @ X.T
    return _report(_tidy(gen.params, V), "spectral")


def steady_state_full(gen: BlockGenerator, reference: ComplexMatrix | None = None) -> HermiteState:
    """Null vector of the dense generator, feedback included."""
    Q = gen.dense()
    U, s, Vh = la.svd(Q)
    k = max(int(np.sum(s < KERNEL_TOL * max(s[0], 1.0))), 1)
    one = np.concatenate([trace_row(gen.R), np.zeros((gen.N - 1) * gen.d)])
    if k == 1:
        v = Vh[-1].conj()
    elif reference is None:
        raise DegenerateKernelError(f"generator kernel has dimension {k}", dim=k)
    else:
        logger.warning("generator kernel has dimension %d; projecting the reference state onto it", k)
        K = Vh[-k:].conj().T
        L = U[:, -k:]
        ref = np.zeros(gen.N * gen.d, dtype=complex)
        ref[: gen.d] = vectorize(reference)
        v = K @ la.solve(L.conj().T @ K, L.conj().T @ ref)
    tr = one @ v
    if abs(tr) < 1e-12 * np.linalg.norm(v):
        raise SingularSystemError("kernel vector of the generator has zero trace", trace=complex(tr))
    v = v / tr
    residual = float(np.linalg.norm(Q @ v))
    if residual > 1e-10 * max(s[0], 1.0):
        logger.warning("full steady state residual %.3e", residual)
    return _report(_tidy(gen.params, v.reshape(gen.N, gen.d)), "full")


def steady_state(
    model: ModelSpec,
    N: int,
    method: str = "auto",
    reference: ComplexMatrix | None = None,
) -> HermiteState:
    """Dispatch to a steady-state solver.

    ``auto`` uses the full solve with feedback and otherwise tries the spectral
    recursion, falling back to forward substitution when the spectrum is
    defective, degenerate or resonant.
    """
    if method not in STEADY_METHODS:
        raise ConfigError(f"Unknown steady-state method '{method}'. Expected one of {list(STEADY_METHODS)}.")
    if method == "full" or (method == "auto" and model.active_feedback):
        return steady_state_full(assemble_generator(model, N), reference)
    if method == "forward":
        return steady_state_forward(model, N, reference)
    if method == "spectral":
        return steady_state_spectral(model, N, reference=reference)
    try:
        return steady_state_spectral(model, N, reference=reference)
    except (DefectiveSpectrumError, ResonanceError, DegenerateKernelError) as exc:
        logger.info("spectral path declined (%s); using forward substitution", exc)
        return steady_state_forward(model, N, reference)


def converge_truncation(
    solve: Callable[[int], HermiteState],
    N0: int,
    observable: Callable[[HermiteState], float] | None = None,
    tail_tolerance: float = 1e-8,
    observable_tolerance: float = 1e-6,
    max_n: int = 512,
) -> tuple[HermiteState, list[tuple[int, float, float]]]:
    """Double N until the tail ratio and the observable both settle.

    Returns the accepted state and the history of (N, tail ratio, observable).
    """
    history: list[tuple[int, float, float]] = []
    N = max(int(N0), 2)
    previous = None
    while N <= max_n:
        state = solve(N)
        value = float(observable(state)) if observable is not None else math.nan
        tail = state.tail_ratio()
        history.append((N, tail, value))
        settled = observable is None or (
            previous is not None and abs(value - previous) <= observable_tolerance * max(1.0, abs(value))
        )
        if tail < tail_tolerance and settled:
            logger.info("truncation converged at N=%d (tail %.2e)", N, tail)
            return state, history
        previous = value
        N *= 2
    raise ConvergenceError(
        f"truncation did not converge up to N={max_n}", history=history
    )


# ---------------------------------------------------------------------------
# Parameter derivatives
# ---------------------------------------------------------------------------

def parameter_derivatives(
    model: ModelSpec,
    state: HermiteState,
    solver: ShiftedSolver | None = None,
) -> HermiteState:
    """dM_n/dmu at the model's reference mu, given the stationary state there.

    The returned stack is not normalized: Tr(dM_0) = 0.
    """
    _require_no_feedback(model)
    if model.derivative is None:
        raise ConfigError(f"model '{model.name}' has no parameter derivative")
    gen = assemble_generator(model, state.N, include_feedback=False)
    dL = np.asarray(model.derivative(model.mu), dtype=complex)
    sources = -(state.vectors @ dL.T)
    solver = solver or ShiftedSolver(gen.Lam, gen.gamma)
    first = solver.solve_traceless(sources[0])
    V = _forward_substitute(solver, gen, first, sources)
    return _tidy(state.params, V, normalize=False)


# ---------------------------------------------------------------------------
# Perturbative feedback
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbativeResult:
    """Series M = sum_j epsilon^j M^(j) truncated at order J_c."""

    epsilon: float
    corrections: tuple[HermiteState, ...]

    @property
    def order(self) -> int:
        return len(self.corrections) - 1

    def state(self, order: int | None = None, epsilon: float | None = None) -> HermiteState:
        order = self.order if order is None else order
        eps = self.epsilon if epsilon is None else epsilon
        total = self.corrections[0]
        for j in range(1, order + 1):
            total = total + eps ** j * self.corrections[j]
        return total


def perturbative_steady(
    model: ModelSpec,
    N: int,
    order: int,
    reference: ComplexMatrix | None = None,
) -> PerturbativeResult:
    """Weak-feedback series around the feedback-free stationary state.

    epsilon is the largest channel strength; Q_0 M^(j+1) = -Q_1 M^(j) with
    Q_1 = Q_fb / epsilon, each correction solved by forward substitution with a
    traceless M_0 block.
    """
    if order < 0:
        raise ConfigError(f"correction order must be >= 0, got {order}")
    bare = model.without_feedback()
    gen0 = assemble_generator(bare, N, include_feedback=False)
    solver = ShiftedSolver(gen0.Lam, gen0.gamma)
    zeroth = steady_state_forward(bare, N, reference, solver=solver)
    channels = model.active_feedback
    epsilon = max((abs(ch.strength) for ch in channels), default=0.0)
    corrections = [zeroth]
    if epsilon == 0:
        return PerturbativeResult(0.0, tuple(corrections))

    unit = assemble_generator(model.with_feedback_scale(1.0 / epsilon), N)
    previous = zeroth.vectors
    for j in range(1, order + 1):
        sources = np.zeros_like(previous)
        for alpha, superop in unit.feedback:
            sources -= alpha.T @ (previous @ superop.T)
        first = solver.solve_traceless(sources[0])
        V = _forward_substitute(solver, gen0, first, sources)
        corrections.append(_tidy(zeroth.params, V, normalize=False))
        logger.debug("correction %d: |M^(j)| = %.3e", j, np.linalg.norm(V))
        previous = V
    return PerturbativeResult(epsilon, tuple(corrections))


# ---------------------------------------------------------------------------
# Time evolution
# ---------------------------------------------------------------------------

def _renormalize_in_place(y: np.ndarray, gen: BlockGenerator) -> None:
    V = y.reshape(gen.N, gen.d)
    M = hermitize(devectorize(V, gen.R))
    M /= np.trace(M[0]).real
    V[:] = vectorize_batch(M)


def evolve_sampled(
    state0: HermiteState,
    gen: BlockGenerator,
    times: Sequence[float],
    tol: float = 1e-8,
) -> list[HermiteState]:
    """Integrate dM/dt = Q M with an adaptive Dormand-Prince pair, sampling at ``times``.

    The state is re-hermitized and renormalized after every accepted step.
    """
    if tol <= 0:
        raise ConfigError(f"tolerance must be > 0, got {tol}")
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return []
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ConfigError("sample times must be non-negative and increasing")
    if state0.N != gen.N or state0.R != gen.R:
        raise ConfigError("initial state does not match the generator dimensions")

    y0 = state0.vectors.reshape(-1).copy()
    out: list[HermiteState] = []
    pending = list(times)
    while pending and pending[0] == 0.0:
        out.append(state0)
        pending.pop(0)
    if not pending:
        return out

    def rhs(_t: float, y: np.ndarray) -> np.ndarray:
        return _apply_vectors(y.reshape(gen.N, gen.d), gen).reshape(-1)

    solver = RK45(rhs, 0.0, y0, pending[-1], rtol=tol, atol=tol * 1e-3)
    steps = 0
    while pending:
        message = solver.step()
        if solver.status == "failed":
            raise StiffnessError(f"integration failed at t={solver.t:.6g}: {message}", time=solver.t)
        steps += 1
        _renormalize_in_place(solver.y, gen)
        # first stage of the next step reuses f
        solver.f = solver.fun(solver.t, solver.y)
        if pending[0] <= solver.t:
            interp = solver.dense_output()
            while pending and pending[0] <= solver.t:
                V = interp(pending.pop(0)).reshape(gen.N, gen.d)
                out.append(_tidy(gen.params, V))
    logger.info("evolved to t=%.4g in %d steps", times[-1], steps)
    return out


def evolve(state0: HermiteState, gen: BlockGenerator, t_end: float, tol: float = 1e-8) -> HermiteState:
    if t_end < 0:
        raise ConfigError(f"t_end must be >= 0, got {t_end}")
    if t_end == 0:
        return state0
    return evolve_sampled(state0, gen, [t_end], tol)[-1]
