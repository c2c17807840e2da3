from __future__ import annotations

import logging

import pandas as pd

from analytics.performance import truncation_health
from ingestion.config_loader import RunConfig
from logic.qfpme import ModelSpec
from logic.statistics import reconstruct_distribution
from logic.trajectories import TrajectoryConfig, TrajectoryEnsemble, compare_histogram, run_ensemble
from pipeline.common import TaskOutput, initial_state, signal_grid
from pipeline.dynamics import evolve_states

logger = logging.getLogger(__name__)


def simulate(cfg: RunConfig, model: ModelSpec, n_traj: int) -> TrajectoryEnsemble:
    e, t = cfg.evolve, cfg.trajectories
    config = TrajectoryConfig(
        t_end=max(e.times) if e.times else e.t_end,
        n_traj=n_traj,
        dt=t.dt,
        seed=cfg.seed,
        initial_state=initial_state(e.initial_state, model.R),
        initial_signal=e.initial_signal,
        sample_times=tuple(sorted(e.times)),
        batch_size=t.batch_size,
        threads=cfg.threads,
    )
    return run_ensemble(config, model)


def compare_with_evolution(cfg: RunConfig, model: ModelSpec, ensemble: TrajectoryEnsemble):
    """Histogram comparison against the evolved P(D) at every sample time."""
    times = list(ensemble.sample_times)
    states = evolve_states(cfg, model, times)
    comparisons = []
    for t, state in zip(times, states):
        dist = reconstruct_distribution(state, signal_grid(cfg, state), cfg.distribution.cutoff)
        comparisons.append((t, compare_histogram(ensemble, dist, cfg.trajectories.bins, t=t)))
    return comparisons, states


def run_trajectories(cfg: RunConfig) -> TaskOutput:
    """
    Stochastic-trajectory ensemble checked against the deterministic evolution.

    Tables
    ------
    histogram : t, bin_lo, bin_hi, empirical, model (probability per bin)
    comparison : t, total_variation, ks_statistic, standard_error
    samples : trajectory, D(t=...) per sample time
    """
    model = cfg.build_model()
    ensemble = simulate(cfg, model, cfg.trajectories.n_traj)
    comparisons, states = compare_with_evolution(cfg, model, ensemble)

    hist_frames, rows = [], []
    for t, cmp in comparisons:
        frame = cmp.to_frame()
        frame.insert(0, "t", t)
        hist_frames.append(frame)
        rows.append({
            "t": t,
            "total_variation": cmp.total_variation,
            "ks_statistic": cmp.ks_statistic,
            "standard_error": cmp.standard_error,
        })
    comparison = pd.DataFrame(rows)
    tables = {
        "histogram": pd.concat(hist_frames, ignore_index=True),
        "comparison": comparison,
        "samples": ensemble.to_frame(),
    }
    health = truncation_health(states[-1])
    health.update({"dt": ensemble.dt, "n_traj": ensemble.n_traj})
    summary = {"max_total_variation": float(comparison["total_variation"].max())}
    return TaskOutput(tables, health, summary)
