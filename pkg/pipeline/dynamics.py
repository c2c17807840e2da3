from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from analytics.performance import truncation_health
from ingestion.config_loader import RunConfig
from logic.qfpme import HermiteState, ModelSpec, assemble_generator, evolve_sampled
from logic.statistics import (
    reconstruct_distribution,
    signal_mean,
    signal_observable_covariance,
    signal_variance,
)
from pipeline.common import TaskOutput, initial_state, resolve_observable, signal_grid

logger = logging.getLogger(__name__)


def initial_hermite_state(cfg: RunConfig, model: ModelSpec) -> HermiteState:
    """rho(0) times the configured detector start: stationary noise ('normal') or D = 0 ('zero')."""
    e = cfg.evolve
    rho = initial_state(e.initial_state, model.R)
    params = model.basis(cfg.solver.N)
    if e.initial_signal == "zero":
        return HermiteState.delta(rho, params)
    return HermiteState.product(rho, params)


def evolve_states(cfg: RunConfig, model: ModelSpec, times) -> list[HermiteState]:
    gen = assemble_generator(model, cfg.solver.N)
    return evolve_sampled(initial_hermite_state(cfg, model), gen, times, cfg.evolve.tol)


def time_grid(cfg: RunConfig) -> np.ndarray:
    e = cfg.evolve
    return np.unique(np.concatenate([np.linspace(0.0, e.t_end, e.points), e.times]))


def run_evolve(cfg: RunConfig) -> TaskOutput:
    """
    Time evolution from the configured initial state.

    Tables
    ------
    observables : t, mean, variance, Cov(<name>) per configured observable
    distribution : t, D, P at each of evolve.times
    """
    model = cfg.build_model()
    times = time_grid(cfg)
    states = evolve_states(cfg, model, times)
    operators = {name: resolve_observable(name, model) for name in cfg.observables}

    rows = []
    for t, state in zip(times, states):
        row = {"t": t, "mean": signal_mean(state), "variance": signal_variance(state)}
        for name, B in operators.items():
            row[f"Cov({name})"] = signal_observable_covariance(state, B)
        rows.append(row)
    observables = pd.DataFrame(rows)

    frames = []
    clip = 0.0
    by_time = dict(zip(times, states))
    for t in cfg.evolve.times:
        state = by_time[t]
        dist = reconstruct_distribution(state, signal_grid(cfg, state), cfg.distribution.cutoff)
        clip = max(clip, dist.clip_mass)
        frame = dist.to_frame()
        frame.insert(0, "t", t)
        frames.append(frame)
    distribution = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["t", "D", "P"])

    health = truncation_health(states[-1])
    health["max_clip_mass"] = clip
    summary = {"t_end": float(times[-1]), "final": rows[-1]}
    return TaskOutput({"observables": observables, "distribution": distribution}, health, summary)
