from __future__ import annotations

import numpy as np
import pandas as pd

from ingestion.config_loader import RunConfig
from logic.statistics import signal_coefficients, signal_mean, signal_moment, signal_variance
from pipeline.common import TaskOutput, solve_steady


def run_steady(cfg: RunConfig) -> TaskOutput:
    """
    Steady state of the configured model.

    Tables
    ------
    blocks : n, block_norm, c_n (trace of M_n)
    unconditional : row, col, re, im of M_0
    """
    model = cfg.build_model()
    state, health = solve_steady(cfg, model)

    blocks = pd.DataFrame({
        "n": np.arange(state.N),
        "block_norm": state.block_norms(),
        "c_n": signal_coefficients(state),
    })
    M0 = state.unconditional
    rows, cols = np.indices(M0.shape)
    unconditional = pd.DataFrame({
        "row": rows.ravel(),
        "col": cols.ravel(),
        "re": M0.real.ravel(),
        "im": M0.imag.ravel(),
    })

    summary = {
        "model": model.name,
        "N": state.N,
        "mean": signal_mean(state),
        "variance": signal_variance(state),
        "second_moment": signal_moment(state, 2),
        "ground_population": float(M0[0, 0].real),
    }
    return TaskOutput({"blocks": blocks, "unconditional": unconditional}, health, summary)
