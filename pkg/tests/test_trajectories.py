import dataclasses
import math

import numpy as np
import pytest
from scipy.stats import norm

from logic.errors import ConfigError
from logic.models import preset
from logic.qfpme import HermiteState, assemble_generator, evolve
from logic.statistics import SignalDistribution, reconstruct_distribution
from logic.trajectories import (
    StepOperators,
    TrajectoryConfig,
    compare_histogram,
    comparison_edges,
    run_ensemble,
    sample_distribution,
    trajectory_step,
)


def _gaussian_distribution(sigma=0.5):
    grid = np.linspace(-10, 10, 4001)
    return SignalDistribution(grid, norm(scale=math.sqrt(sigma)).pdf(grid), cutoff=20.0, N=1)


def test_step_keeps_states_normalized_and_hermitian():
    model = preset("driven_qubit")
    rng = np.random.default_rng(0)
    rho = np.broadcast_to(np.diag([1.0, 0.0]).astype(complex), (8, 2, 2)).copy()
    D = np.zeros(8)
    for _ in range(50):
        rho, D = trajectory_step(rho, D, model, 1e-3, rng)
    assert rho.shape == (8, 2, 2) and D.shape == (8,)
    assert np.allclose(np.trace(rho, axis1=1, axis2=2), 1.0)
    assert np.allclose(rho, np.conj(np.swapaxes(rho, 1, 2)))

    single, d = trajectory_step(np.eye(2) / 2, 0.0, model, 1e-3, rng)
    assert single.shape == (2, 2)
    assert np.ndim(d) == 0


def test_zero_filter_rate_freezes_signal():
    ops = dataclasses.replace(StepOperators.from_model(preset("driven_qubit")), gamma=0.0)
    rng = np.random.default_rng(1)
    _, D = trajectory_step(np.eye(2) / 2, np.array(0.3), ops, 1e-3, rng)
    assert D == 0.3


def test_unmeasured_step_is_deterministic():
    """With lambda = 0 the outcome equals <A> and only the Liouvillian acts."""
    model = preset("driven_qubit", lam=0.0)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    a = trajectory_step(rho0, 0.0, model, 1e-3, np.random.default_rng(2))
    b = trajectory_step(rho0, 0.0, model, 1e-3, np.random.default_rng(3))
    assert np.array_equal(a[0], b[0])
    assert a[1] == pytest.approx(2.0 * 1e-3)


def test_ensemble_is_reproducible_and_thread_independent():
    model = preset("driven_qubit")
    config = TrajectoryConfig(t_end=0.2, n_traj=40, dt=1e-3, seed=7, batch_size=10, sample_times=(0.0, 0.1, 0.2))
    first = run_ensemble(config, model)
    again = run_ensemble(dataclasses.replace(config, threads=3), model)
    assert np.array_equal(first.final_signal, again.final_signal)
    assert np.array_equal(first.samples, again.samples)
    other = run_ensemble(dataclasses.replace(config, seed=8), model)
    assert not np.array_equal(first.final_signal, other.final_signal)

    assert first.n_traj == 40
    assert np.array_equal(first.signal_at(0.2), first.final_signal)
    assert first.to_frame().shape == (40, 4)
    with pytest.raises(ConfigError):
        first.signal_at(0.15)


def test_zero_initial_signal():
    config = TrajectoryConfig(t_end=0.01, n_traj=5, dt=1e-3, initial_signal="zero", sample_times=(0.0, 0.01))
    ensemble = run_ensemble(config, preset("driven_qubit"))
    assert np.all(ensemble.signal_at(0.0) == 0.0)


def test_trajectory_config_validation():
    with pytest.raises(ConfigError):
        TrajectoryConfig(t_end=-1.0)
    with pytest.raises(ConfigError):
        TrajectoryConfig(t_end=1.0, n_traj=0)
    with pytest.raises(ConfigError):
        TrajectoryConfig(t_end=1.0, initial_signal="uniform")
    with pytest.raises(ConfigError):
        TrajectoryConfig(t_end=1.0, sample_times=(2.0,))
    with pytest.raises(ConfigError):
        run_ensemble(TrajectoryConfig(t_end=0.1, n_traj=2, initial_state=np.eye(3) / 3), preset("driven_qubit"))


def test_comparison_edges_cover_quantiles():
    edges = comparison_edges(_gaussian_distribution(), bins=20)
    assert edges.size == 23
    assert edges[0] == -np.inf and edges[-1] == np.inf
    assert edges[1] == pytest.approx(norm(scale=math.sqrt(0.5)).ppf(0.0005), abs=1e-2)


def test_histogram_distance_of_disjoint_supports_is_one():
    comparison = compare_histogram(np.full(1000, 100.0), _gaussian_distribution())
    assert comparison.total_variation == pytest.approx(1.0, abs=1e-3)
    assert comparison.ks_statistic == pytest.approx(1.0, abs=1e-3)


def test_samples_from_the_distribution_agree_with_it():
    dist = _gaussian_distribution()
    samples = sample_distribution(dist, 20000, np.random.default_rng(4))
    comparison = compare_histogram(samples, dist)
    assert comparison.total_variation < 0.03
    assert comparison.ks_statistic < 0.02
    assert comparison.n_samples == 20000
    assert comparison.to_frame().columns.tolist() == ["bin_lo", "bin_hi", "empirical", "model"]
    with pytest.raises(ConfigError):
        compare_histogram(np.array([]), dist)


@pytest.mark.slow
def test_frozen_qubit_signal_relaxes_to_noise_variance():
    """Without drive the qubit stays in |0>, so D becomes Normal(1, gamma / 8 lambda)."""
    model = preset("driven_qubit", omega=0.0)
    ensemble = run_ensemble(TrajectoryConfig(t_end=5.0, n_traj=2000, seed=5), model)
    assert ensemble.final_signal.mean() == pytest.approx(1.0, abs=0.07)
    assert ensemble.final_signal.var() == pytest.approx(model.sigma, rel=0.12)
    with pytest.raises(ConfigError):
        ensemble.conditioned_average(-40.0, 0.1)


FIGURE_TIMES = (math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2)


@pytest.fixture(scope="module")
def driven_ensemble():
    """Driven qubit from |0> with D(0) ~ Normal(0, sigma), 5000 trajectories sampled at FIGURE_TIMES."""
    model = preset("driven_qubit")
    config = TrajectoryConfig(t_end=FIGURE_TIMES[-1], n_traj=5000, seed=0, sample_times=FIGURE_TIMES)
    return model, run_ensemble(config, model)


@pytest.mark.slow
@pytest.mark.parametrize("t", FIGURE_TIMES)
def test_trajectories_match_evolved_distribution(driven_ensemble, t):
    model, ensemble = driven_ensemble
    gen = assemble_generator(model, 30)
    state = evolve(HermiteState.product(np.diag([1.0, 0.0]), gen.params), gen, t)
    comparison = compare_histogram(ensemble.signal_at(t), reconstruct_distribution(state))
    assert comparison.total_variation < 0.05
