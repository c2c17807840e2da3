from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd

from analytics.performance import merge_health, run_sweep
from ingestion.config_loader import RunConfig
from logic.operators import devectorize
from logic.qfpme import lindblad_spectrum, steady_state
from logic.statistics import (
    current_correlation,
    mutual_information,
    mutual_information_converged,
    reconstruct_distribution,
    signal_mean,
    signal_moment,
    signal_observable_covariance,
    signal_variance,
)
from pipeline.common import (
    TaskOutput,
    point_columns,
    reference_state,
    resolve_observable,
    signal_grid,
    solve_steady,
    sweep_points,
)

logger = logging.getLogger(__name__)

MAX_MOMENT = 4


def run_distribution(cfg: RunConfig) -> TaskOutput:
    """Stationary P(D) on the configured grid (columns D, P)."""
    model = cfg.build_model()
    state, health = solve_steady(cfg, model)
    dist = reconstruct_distribution(state, signal_grid(cfg, state), cfg.distribution.cutoff, model)
    health.update({"cutoff": dist.cutoff, "clip_mass": dist.clip_mass, "reconstruction": dist.method})
    peaks = dist.local_maxima()
    summary = {
        "mean": signal_mean(state),
        "variance": signal_variance(state),
        "grid_mean": dist.mean,
        "grid_variance": dist.variance,
        "peaks": peaks,
    }
    return TaskOutput({"distribution": dist.to_frame()}, health, summary)


def run_moments(cfg: RunConfig) -> TaskOutput:
    """Raw and central moments of D up to fourth order, plus Cov(D, B) per observable."""
    model = cfg.build_model()
    state, health = solve_steady(cfg, model)
    q_max = min(MAX_MOMENT, state.N - 1)
    raw = np.array([signal_moment(state, q) for q in range(q_max + 1)])
    mean = raw[1] if q_max >= 1 else 0.0
    central = [
        sum(
            math.comb(q, k) * raw[k] * (-mean) ** (q - k)
            for k in range(q + 1)
        )
        for q in range(q_max + 1)
    ]
    moments = pd.DataFrame({"q": np.arange(q_max + 1), "moment": raw, "central": central})
    covariances = pd.DataFrame({
        "observable": list(cfg.observables),
        "covariance": [signal_observable_covariance(state, resolve_observable(o, model)) for o in cfg.observables],
    })
    summary = {"moments": raw, "covariance": dict(zip(covariances["observable"], covariances["covariance"]))}
    return TaskOutput({"moments": moments, "observable_covariance": covariances}, health, summary)


def run_mutual_information(cfg: RunConfig) -> TaskOutput:
    """Steady-state mutual information over the configured sweep."""
    info = cfg.information

    def task(point: dict):
        model = cfg.build_model(**point)
        ref = reference_state(cfg, model.R)
        if info.converge:
            value, history = mutual_information_converged(
                lambda n: steady_state(model, n, cfg.solver.method, ref),
                cfg.solver.N,
                model=model,
                step=info.step,
                tol=info.tol,
                max_n=cfg.solver.max_n,
            )
            N = history[-1][0]
        else:
            state, _ = solve_steady(cfg, model)
            value, N = mutual_information(state, model=model), state.N
        return {**point_columns(model, point), "I": value, "N": N}

    frame = pd.DataFrame(run_sweep(task, sweep_points(cfg), cfg.threads))
    summary = {"max_I": float(frame["I"].max()), "min_I": float(frame["I"].min())}
    return TaskOutput({"mutual_information": frame}, {"N_max": int(frame["N"].max())}, summary)


def run_covariance(cfg: RunConfig) -> TaskOutput:
    """Cov(D, B) = <D B> - <D><B> for each configured observable over the sweep."""

    def task(point: dict):
        model = cfg.build_model(**point)
        state, health = solve_steady(cfg, model)
        row = point_columns(model, point)
        for name in cfg.observables:
            row[f"Cov({name})"] = signal_observable_covariance(state, resolve_observable(name, model))
        return row, health

    results = run_sweep(task, sweep_points(cfg), cfg.threads)
    frame = pd.DataFrame([r for r, _ in results])
    return TaskOutput({"covariance": frame}, merge_health([h for _, h in results]), {"points": len(frame)})


def run_correlation(cfg: RunConfig) -> TaskOutput:
    """Stationary two-time signal correlation C(tau) (columns tau, C)."""
    model = cfg.build_model()
    c = cfg.correlation
    lags = np.asarray(c.lags, dtype=float) if c.lags is not None else np.linspace(0.0, c.t_max, c.points)
    spectrum = lindblad_spectrum(model, reference_state(cfg, model.R))
    M0 = devectorize(spectrum.right[:, 0])
    curve = current_correlation(model, spectrum, M0, lags)
    health = {
        "biorthogonality_defect": spectrum.biorthogonality_defect(),
        "reconstruction_residual": spectrum.residual,
        "kernel_dim": spectrum.kernel_dim,
    }
    summary = {"C0": float(curve.values[0]) if lags.size and lags[0] == 0 else None}
    return TaskOutput({"correlation": curve.to_frame()}, health, summary)
