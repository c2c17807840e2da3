from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from analytics.performance import truncation_health
from ingestion.config_loader import RunConfig
from logic.errors import ConfigError
from logic.qfpme import assemble_generator, perturbative_steady, steady_state_full
from logic.statistics import fidelity
from pipeline.common import TaskOutput, reference_state

logger = logging.getLogger(__name__)


def run_perturb(cfg: RunConfig) -> TaskOutput:
    """
    Weak-feedback series against the exact steady state.

    The series is built once at the model's own feedback strength and then
    evaluated at every configured epsilon and truncation order J_c.

    Tables
    ------
    perturbation : epsilon, J_c, error, fidelity, P0_exact, P0_series
    """
    model = cfg.build_model()
    channels = model.active_feedback
    if not channels:
        raise ConfigError(f"perturb needs a model with active feedback; '{model.name}' has none")
    base = max(abs(ch.strength) for ch in channels)
    N = cfg.solver.N
    ref = reference_state(cfg, model.R)
    orders = sorted(set(cfg.perturb.orders))
    series = perturbative_steady(model, N, max(orders), ref)

    rows = []
    for eps in cfg.perturb.strengths:
        exact = steady_state_full(assemble_generator(model.with_feedback_scale(eps / base), N), ref)
        M_exact = exact.unconditional
        for J in orders:
            M = series.state(J, eps).unconditional
            rows.append({
                "epsilon": eps,
                "J_c": J,
                "error": float(np.linalg.norm(M - M_exact)),
                "fidelity": fidelity(M, M_exact),
                "P0_exact": float(M_exact[0, 0].real),
                "P0_series": float(M[0, 0].real),
            })
    frame = pd.DataFrame(rows)
    health = truncation_health(series.corrections[0])
    summary = {
        "epsilon_model": base,
        "P0_without_feedback": float(series.corrections[0].unconditional[0, 0].real),
    }
    return TaskOutput({"perturbation": frame}, health, summary)
