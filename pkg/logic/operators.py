from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt
import scipy.linalg as la

from logic.errors import ConfigError, DefectiveSpectrumError, DegenerateKernelError

logger = logging.getLogger(__name__)

ComplexMatrix = npt.NDArray[np.complex128]
SuperOperator = npt.NDArray[np.complex128]

# Largest Hilbert-space dimension accepted for dense superoperators (4 qubits).
MAX_DIM = 16

IDENTITY2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
# |0> is the ground state, so sigma_minus maps |1> to |0>.
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = np.array([[0, 0], [1, 0]], dtype=complex)


# ---------------------------------------------------------------------------
# Vectorization (column stacking: vec(A X B) = (B^T kron A) vec(X))
# ---------------------------------------------------------------------------

def _square(X: npt.ArrayLike, name: str = "matrix") -> ComplexMatrix:
    arr = np.asarray(X, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {arr.shape}", shape=list(arr.shape))
    return arr


def vectorize(X: npt.ArrayLike) -> npt.NDArray[np.complex128]:
    """Column-stack an R x R matrix into a vector of length R**2."""
    return _square(X).reshape(-1, order="F")


def devectorize(v: npt.ArrayLike, R: int | None = None) -> ComplexMatrix:
    """Inverse of :func:`vectorize`. Extra leading axes are kept (batched vectors)."""
    arr = np.asarray(v, dtype=complex)
    d = arr.shape[-1]
    if R is None:
        R = int(round(np.sqrt(d)))
    if R * R != d:
        raise ConfigError(f"vector of length {d} cannot be devectorized to {R}x{R}", length=d, R=R)
    if arr.ndim == 1:
        return arr.reshape(R, R, order="F")
    # batched: vec index k = i + R*j
    return np.swapaxes(arr.reshape(*arr.shape[:-1], R, R), -1, -2)


def trace_row(R: int) -> npt.NDArray[np.complex128]:
    """Left vector <<1| with <<1|vec(X) = Tr(X)."""
    return vectorize(np.eye(R))


def dagger(X: ComplexMatrix) -> ComplexMatrix:
    return np.swapaxes(np.conj(X), -1, -2)


def hermitize(X: ComplexMatrix) -> ComplexMatrix:
    return 0.5 * (X + dagger(X))


def hermiticity_defect(X: ComplexMatrix) -> float:
    """max |X - X^dagger| / 2, i.e. the size of the anti-Hermitian part."""
    return float(np.max(np.abs(X - dagger(X)))) / 2.0 if np.size(X) else 0.0


# ---------------------------------------------------------------------------
# Superoperator building blocks
# ---------------------------------------------------------------------------

def left_right(A: npt.ArrayLike, B: npt.ArrayLike) -> SuperOperator:
    """Superoperator of X -> A X B."""
    A = _square(A, "A")
    B = _square(B, "B")
    if A.shape != B.shape:
        raise ConfigError(f"dimension mismatch {A.shape} vs {B.shape}")
    return np.kron(B.T, A)


def hamiltonian(H: npt.ArrayLike) -> SuperOperator:
    """Superoperator of X -> -i[H, X]."""
    H = _square(H, "H")
    eye = np.eye(H.shape[0])
    return -1j * (np.kron(eye, H) - np.kron(H.T, eye))


def dissipator(L: npt.ArrayLike) -> SuperOperator:
    """Lindblad dissipator X -> L X L^dagger - 1/2 {L^dagger L, X}."""
    L = _square(L, "jump operator")
    eye = np.eye(L.shape[0])
    LdL = L.conj().T @ L
    return np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)


def anticommutator(X: npt.ArrayLike) -> SuperOperator:
    """Superoperator of Y -> {X, Y}."""
    X = _square(X)
    eye = np.eye(X.shape[0])
    return np.kron(eye, X) + np.kron(X.T, eye)


SUPEROP_KINDS = {
    "hamiltonian": hamiltonian,
    "dissipator": dissipator,
    "anticommutator": anticommutator,
    "left_right": left_right,
}


def build_superop(kind: str, *args: npt.ArrayLike) -> SuperOperator:
    """Dispatch by name to one of the superoperator constructors."""
    try:
        builder = SUPEROP_KINDS[kind]
    except KeyError:
        raise ConfigError(f"Unknown superoperator kind '{kind}'. Expected one of {list(SUPEROP_KINDS)}.")
    expected = 2 if kind == "left_right" else 1
    if len(args) != expected:
        raise ConfigError(f"'{kind}' takes {expected} matrix argument(s), got {len(args)}")
    return builder(*args)


def build_liouvillian(H: npt.ArrayLike, jumps: Iterable[tuple[float, npt.ArrayLike]] = ()) -> SuperOperator:
    """-i[H, .] + sum_k rate_k D[L_k]."""
    H = _square(H, "H")
    out = hamiltonian(H)
    for rate, L in jumps:
        if not np.isfinite(rate) or rate < 0:
            raise ConfigError(f"jump rate must be finite and >= 0, got {rate}", rate=rate)
        L = _square(L, "jump operator")
        if L.shape != H.shape:
            raise ConfigError(f"jump operator shape {L.shape} does not match H {H.shape}")
        if rate:
            out = out + rate * dissipator(L)
    return out


def apply_superop(S: SuperOperator, X: ComplexMatrix) -> ComplexMatrix:
    return devectorize(S @ vectorize(X), X.shape[0])


def superop_norm(S: SuperOperator) -> float:
    """Spectral norm, used to set time scales."""
    return float(np.linalg.norm(S, 2)) if S.size else 0.0


def stationary_state(S: SuperOperator) -> ComplexMatrix:
    """Trace-one kernel vector of a Liouvillian, via the bordered least-squares solve."""
    d = S.shape[0]
    R = int(round(np.sqrt(d)))
    bordered = np.vstack([S, trace_row(R)[None, :]])
    rhs = np.zeros(d + 1, dtype=complex)
    rhs[-1] = 1.0
    sol, *_ = la.lstsq(bordered, rhs)
    return hermitize(devectorize(sol, R))


# ---------------------------------------------------------------------------
# Spin chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinOperators:
    """Site Pauli operators (identity padded) and collective S_q = sum_i sigma_i^q."""

    L: int
    x: tuple[ComplexMatrix, ...]
    y: tuple[ComplexMatrix, ...]
    z: tuple[ComplexMatrix, ...]

    @property
    def Sx(self) -> ComplexMatrix:
        return sum(self.x)

    @property
    def Sy(self) -> ComplexMatrix:
        return sum(self.y)

    @property
    def Sz(self) -> ComplexMatrix:
        return sum(self.z)

    @property
    def dim(self) -> int:
        return 2 ** self.L


def _embed(op: ComplexMatrix, site: int, L: int) -> ComplexMatrix:
    factors = [IDENTITY2] * L
    factors[site] = op
    return reduce(np.kron, factors)


def spin_operators(L: int, max_dim: int = MAX_DIM) -> SpinOperators:
    if int(L) != L or L < 1:
        raise ConfigError(f"qubit count must be a positive integer, got {L}", L=L)
    L = int(L)
    if 2 ** L > max_dim:
        raise ConfigError(
            f"L={L} gives dimension {2 ** L}, above the memory bound {max_dim}",
            L=L, max_dim=max_dim,
        )
    return SpinOperators(
        L=L,
        x=tuple(_embed(SIGMA_X, i, L) for i in range(L)),
        y=tuple(_embed(SIGMA_Y, i, L) for i in range(L)),
        z=tuple(_embed(SIGMA_Z, i, L) for i in range(L)),
    )


# ---------------------------------------------------------------------------
# Spectral decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """Biorthonormal eigendecomposition S = X diag(eta) Y^dagger.

    ``right[:, j]`` is x_j and ``left[:, j]`` is y_j with <<y_j|x_k>> = delta_jk.
    Index 0 is the stationary pair (eta_0 = 0, x_0 = vec(M_0), y_0 = vec(1)).
    Further zero modes, if accepted, follow at indices 1..kernel_dim-1 and are traceless.
    """

    eigenvalues: npt.NDArray[np.complex128]
    right: npt.NDArray[np.complex128]
    left: npt.NDArray[np.complex128]
    kernel_dim: int
    residual: float

    @property
    def left_rows(self) -> npt.NDArray[np.complex128]:
        """Rows y_j^dagger, ready for projections."""
        return self.left.conj().T

    def biorthogonality_defect(self) -> float:
        G = self.left_rows @ self.right
        return float(np.max(np.abs(G - np.eye(G.shape[0]))))


def spectral_decompose(
    S: SuperOperator,
    stationary: npt.ArrayLike,
    tol: float = 1e-8,
    allow_degenerate: bool = False,
) -> Spectrum:
    """Eigendecompose a Liouvillian-like superoperator with a fixed stationary pair.

    Raises DefectiveSpectrumError when the reconstruction residual exceeds
    ``tol * ||S||`` (callers then fall back to direct shifted solves) and
    DegenerateKernelError when the zero eigenvalue is repeated, unless
    ``allow_degenerate`` is set.
    """
    S = np.asarray(S, dtype=complex)
    d = S.shape[0]
    R = int(round(np.sqrt(d)))
    m0 = np.asarray(stationary, dtype=complex).reshape(-1)
    if m0.shape[0] != d:
        raise ConfigError(f"stationary vector has length {m0.shape[0]}, expected {d}")
    one = trace_row(R)
    m0 = m0 / (one @ m0)

    scale = max(np.linalg.norm(S), 1.0)
    eta, V = la.eig(S)
    zero = np.abs(eta) < 1e-9 * scale
    k = int(zero.sum())
    if k == 0:
        raise DefectiveSpectrumError("no zero eigenvalue found for a trace-preserving generator",
                                     smallest=float(np.min(np.abs(eta))))
    if k > 1 and not allow_degenerate:
        raise DegenerateKernelError(f"stationary subspace has dimension {k}", dim=k)

    kernel = la.orth(V[:, zero])
    if kernel.shape[1] > 1:
        coeffs = la.null_space((one @ kernel)[None, :])
        extra = kernel @ coeffs
    else:
        extra = np.zeros((d, 0), dtype=complex)
    X = np.hstack([m0[:, None], extra, V[:, ~zero]])
    eigenvalues = np.concatenate([np.zeros(1 + extra.shape[1], dtype=complex), eta[~zero]])

    try:
        Yh = la.inv(X)
    except (la.LinAlgError, ValueError) as exc:
        raise DefectiveSpectrumError(f"eigenvector matrix is singular: {exc}")
    Yh[0] = one
    residual = float(np.linalg.norm(S - (X * eigenvalues) @ Yh))
    if not np.isfinite(residual) or residual > tol * scale:
        raise DefectiveSpectrumError(
            f"reconstruction residual {residual:.3e} exceeds {tol:g} * ||S||",
            residual=residual, threshold=tol * scale,
        )
    logger.debug("spectral decomposition: d=%d kernel=%d residual=%.3e", d, X.shape[1] - len(eta[~zero]), residual)
    return Spectrum(
        eigenvalues=eigenvalues,
        right=X,
        left=Yh.conj().T,
        kernel_dim=1 + extra.shape[1],
        residual=residual,
    )
