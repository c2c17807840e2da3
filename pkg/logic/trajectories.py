"""
Stochastic-trajectory oracle for the QFPME.

Each step applies a Gaussian Kraus update for a measurement outcome z, one
Euler step of the signal-dependent Liouvillian (evaluated at the pre-step D),
and the low-pass filter D' = D + gamma (z - D) dt. Trajectories are processed
in vectorized batches, each batch with its own RNG stream.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt
import pandas as pd

from logic.errors import ConfigError, NormCollapseError
from logic.operators import ComplexMatrix, SuperOperator, devectorize, hermitize, superop_norm
from logic.qfpme import ModelSpec, vectorize_batch
from logic.statistics import SignalDistribution

logger = logging.getLogger(__name__)

INITIAL_SIGNAL_MODES = ("normal", "zero")
STEP_WARN = 0.05
QUANTILE_RANGE = (0.0005, 0.9995)


@dataclass(frozen=True)
class StepOperators:
    """Everything one trajectory step needs, precomputed from a model."""

    lindbladian: SuperOperator
    eigenvalues: np.ndarray
    eigenvectors: ComplexMatrix
    lam: float
    gamma: float
    feedback: tuple = ()

    @classmethod
    def from_model(cls, model: ModelSpec) -> "StepOperators":
        a, V = np.linalg.eigh(model.measured)
        feedback = tuple((ch.function, ch.strength * np.asarray(ch.superop, dtype=complex))
                         for ch in model.active_feedback)
        return cls(model.lindbladian(), a, V, model.lam, model.gamma, feedback)

    @property
    def measured(self) -> ComplexMatrix:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.conj().T


@dataclass(frozen=True)
class TrajectoryConfig:
    t_end: float
    n_traj: int = 5000
    dt: float | None = None
    seed: int = 0
    initial_state: ComplexMatrix | None = None
    initial_signal: str = "normal"
    sample_times: tuple[float, ...] = ()
    batch_size: int = 250
    threads: int = 1

    def __post_init__(self) -> None:
        if self.t_end < 0:
            raise ConfigError(f"t_end must be >= 0, got {self.t_end}")
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.initial_signal not in INITIAL_SIGNAL_MODES:
            raise ConfigError(
                f"initial_signal must be one of {list(INITIAL_SIGNAL_MODES)}, got '{self.initial_signal}'"
            )
        if self.batch_size < 1 or self.threads < 1:
            raise ConfigError("batch_size and threads must be >= 1")
        if any(t < 0 or t > self.t_end for t in self.sample_times):
            raise ConfigError("sample times must lie in [0, t_end]")

    def resolved_dt(self, model: ModelSpec) -> float:
        """Configured dt, or 1e-3 of the fastest model time scale."""
        if self.dt is not None:
            return self.dt
        rates = [model.gamma, model.lam, superop_norm(model.lindbladian())]
        return 1e-3 / max(r for r in rates if r > 0)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Final (rho, D) per trajectory plus D sampled at the configured times."""

    final_states: np.ndarray
    final_signal: np.ndarray
    sample_times: np.ndarray
    samples: np.ndarray
    dt: float
    seed: int

    @property
    def n_traj(self) -> int:
        return self.final_signal.shape[0]

    def signal_at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.sample_times - t)))
        if abs(self.sample_times[idx] - t) > 0.5 * self.dt:
            raise ConfigError(f"time {t} was not sampled", sampled=self.sample_times)
        return self.samples[:, idx]

    def histogram(self, edges: npt.ArrayLike, t: float | None = None) -> np.ndarray:
        """Density histogram of D over ``edges``."""
        values = self.final_signal if t is None else self.signal_at(t)
        density, _ = np.histogram(values, bins=edges, density=True)
        return density

    def conditioned_average(self, center: float, width: float) -> ComplexMatrix:
        """Mean final state over trajectories with |D - center| < width / 2."""
        mask = np.abs(self.final_signal - center) < 0.5 * width
        if not np.any(mask):
            raise ConfigError(f"no trajectory ends with D within {width / 2:g} of {center:g}")
        return self.final_states[mask].mean(axis=0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.samples, columns=[f"D(t={t:.6g})" for t in self.sample_times])
        frame.insert(0, "trajectory", np.arange(self.n_traj))
        return frame


@dataclass(frozen=True)
class HistogramComparison:
    total_variation: float
    ks_statistic: float
    standard_error: float
    n_samples: int
    edges: np.ndarray = field(repr=False)
    empirical: np.ndarray = field(repr=False)
    model: np.ndarray = field(repr=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "bin_lo": self.edges[:-1],
            "bin_hi": self.edges[1:],
            "empirical": self.empirical,
            "model": self.model,
        })


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _ops(model: ModelSpec | StepOperators) -> StepOperators:
    return model if isinstance(model, StepOperators) else StepOperators.from_model(model)


def trajectory_step(
    rho: npt.ArrayLike,
    D: npt.ArrayLike,
    model: ModelSpec | StepOperators,
    dt: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one step; works on a single (rho, D) or on batches of shape (n, R, R), (n,)."""
    ops = _ops(model)
    rho = np.asarray(rho, dtype=complex)
    D = np.asarray(D, dtype=float)
    single = rho.ndim == 2
    if single:
        rho, D = rho[None], D.reshape(1)
    n = rho.shape[0]
    a, V = ops.eigenvalues, ops.eigenvectors

    # outcome z ~ Normal(Tr(A rho), 1 / (4 lambda dt))
    rho_eig = V.conj().T @ rho @ V
    mean = np.real(np.einsum("i,nii->n", a, rho_eig))
    if ops.lam > 0:
        z = mean + rng.standard_normal(n) / math.sqrt(4.0 * ops.lam * dt)
        exponent = -ops.lam * dt * (z[:, None] - a[None, :]) ** 2
        kraus = np.exp(exponent - exponent.max(axis=1, keepdims=True))
        rho_eig = kraus[:, :, None] * rho_eig * kraus[:, None, :]
    else:
        z = mean
    rho = V @ rho_eig @ V.conj().T

    # Euler step of L(D) with the pre-step signal
    vecs = vectorize_batch(rho)
    drift = vecs @ ops.lindbladian.T
    for function, superop in ops.feedback:
        drift += function(D)[:, None] * (vecs @ superop.T)
    rho = hermitize(devectorize(vecs + dt * drift, rho.shape[1]))

    trace = np.real(np.trace(rho, axis1=1, axis2=2))
    collapsed = ~np.isfinite(trace) | (trace <= 1e-300)
    if np.any(collapsed):
        raise NormCollapseError("trajectory norm collapsed", indices=np.nonzero(collapsed)[0])
    rho = rho / trace[:, None, None]
    D_next = D + ops.gamma * (z - D) * dt
    if single:
        return rho[0], D_next[0]
    return rho, D_next


def _check_step_size(ops: StepOperators, dt: float) -> None:
    spread = float(np.max(np.abs(ops.eigenvalues))) ** 2
    if dt * ops.gamma > STEP_WARN:
        logger.warning("dt * gamma = %.3g exceeds %.2g; filter discretization is coarse", dt * ops.gamma, STEP_WARN)
    if dt * ops.lam * spread > STEP_WARN:
        logger.warning("dt * lambda |A|^2 = %.3g exceeds %.2g; Kraus update is coarse", dt * ops.lam * spread, STEP_WARN)


def _run_batch(
    ops: StepOperators,
    rho0: ComplexMatrix,
    n: int,
    offset: int,
    n_steps: int,
    dt: float,
    sample_steps: np.ndarray,
    sigma: float,
    initial_signal: str,
    seed: np.random.SeedSequence,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    rho = np.broadcast_to(rho0, (n,) + rho0.shape).copy()
    D = rng.normal(0.0, math.sqrt(sigma), n) if initial_signal == "normal" else np.zeros(n)
    samples = np.empty((n, sample_steps.size))
    for k in np.nonzero(sample_steps == 0)[0]:
        samples[:, k] = D
    for step in range(1, n_steps + 1):
        try:
            rho, D = trajectory_step(rho, D, ops, dt, rng)
        except NormCollapseError as exc:
            raise NormCollapseError(
                f"trajectory norm collapsed at step {step}",
                indices=[offset + int(i) for i in exc.details.get("indices", [])],
                time=step * dt,
            )
        for k in np.nonzero(sample_steps == step)[0]:
            samples[:, k] = D
    return rho, D, samples


def run_ensemble(config: TrajectoryConfig, model: ModelSpec) -> TrajectoryEnsemble:
    """Integrate ``config.n_traj`` independent trajectories.

    Batches of ``batch_size`` trajectories get RNG streams spawned from the seed,
    so the result depends on (seed, batch_size) but not on the thread count.
    """
    ops = StepOperators.from_model(model)
    dt = config.resolved_dt(model)
    n_steps = max(int(round(config.t_end / dt)), 0)
    if n_steps:
        dt = config.t_end / n_steps
    _check_step_size(ops, dt)
    rho0 = np.asarray(config.initial_state, dtype=complex) if config.initial_state is not None else _ground(model.R)
    if rho0.shape != (model.R, model.R):
        raise ConfigError(f"initial state shape {rho0.shape} does not match R={model.R}")
    times = tuple(config.sample_times) or (config.t_end,)
    sample_steps = np.array([int(round(t / dt)) if n_steps else 0 for t in times])
    sigma = model.sigma if model.lam > 0 else 0.0

    sizes = [min(config.batch_size, config.n_traj - start) for start in range(0, config.n_traj, config.batch_size)]
    offsets = np.cumsum([0] + sizes[:-1])
    seeds = np.random.SeedSequence(config.seed).spawn(len(sizes))
    logger.info("running %d trajectories in %d batches, %d steps of dt=%.3g", config.n_traj, len(sizes), n_steps, dt)

    def work(i: int):
        return _run_batch(ops, rho0, sizes[i], int(offsets[i]), n_steps, dt, sample_steps,
                          sigma, config.initial_signal, seeds[i])

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        results = list(pool.map(work, range(len(sizes))))

    return TrajectoryEnsemble(
        final_states=np.concatenate([r[0] for r in results]),
        final_signal=np.concatenate([r[1] for r in results]),
        sample_times=np.asarray(times, dtype=float),
        samples=np.concatenate([r[2] for r in results]),
        dt=dt,
        seed=config.seed,
    )


def _ground(R: int) -> ComplexMatrix:
    rho = np.zeros((R, R), dtype=complex)
    rho[0, 0] = 1.0
    return rho


# ---------------------------------------------------------------------------
# Histogram comparison
# ---------------------------------------------------------------------------

def comparison_edges(dist: SignalDistribution, bins: int = 20) -> np.ndarray:
    """Equal-width bins between the model's 0.05% and 99.95% quantiles, plus two overflow bins."""
    cdf = dist.cdf()
    lo, hi = np.interp(QUANTILE_RANGE, cdf, dist.grid)
    inner = np.linspace(lo, hi, bins + 1)
    return np.concatenate([[-np.inf], inner, [np.inf]])


def compare_histogram(
    ensemble: TrajectoryEnsemble | npt.ArrayLike,
    dist: SignalDistribution,
    bins: int = 20,
    t: float | None = None,
) -> HistogramComparison:
    """Total variation and Kolmogorov-Smirnov distance between trajectory samples and P(D)."""
    if isinstance(ensemble, TrajectoryEnsemble):
        samples = ensemble.final_signal if t is None else ensemble.signal_at(t)
    else:
        samples = np.asarray(ensemble, dtype=float).ravel()
    n = samples.size
    if n == 0:
        raise ConfigError("cannot compare an empty ensemble")

    edges = comparison_edges(dist, bins)
    cdf = dist.cdf()
    model_cdf = np.interp(edges, dist.grid, cdf, left=0.0, right=1.0)
    model_cdf[0], model_cdf[-1] = 0.0, 1.0
    model_mass = np.diff(model_cdf)
    counts, _ = np.histogram(samples, bins=edges)
    empirical = counts / n
    tv = 0.5 * float(np.sum(np.abs(empirical - model_mass)))

    x = np.sort(samples)
    F = np.interp(x, dist.grid, cdf, left=0.0, right=1.0)
    i = np.arange(1, n + 1)
    ks = float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))

    se = 0.5 * math.sqrt(edges.size - 1) / math.sqrt(n)
    return HistogramComparison(min(tv, 1.0), min(ks, 1.0), se, n, edges, empirical, model_mass)


def sample_distribution(dist: SignalDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF samples from a reconstructed distribution."""
    return np.interp(rng.random(n), dist.cdf(), dist.grid)
