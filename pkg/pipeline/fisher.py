from __future__ import annotations

import pandas as pd

from analytics.performance import run_sweep
from ingestion.config_loader import RunConfig
from logic.statistics import fisher_information
from pipeline.common import TaskOutput, point_columns, reference_state, sweep_points


def run_fisher(cfg: RunConfig) -> TaskOutput:
    """Classical Fisher information of the stationary P_mu(D) over the sweep (columns lambda, gamma, F_I)."""
    f = cfg.fisher

    def task(point: dict):
        model = cfg.build_model(**point)
        result = fisher_information(
            model,
            cfg.solver.N,
            grid_points=f.grid_points,
            check=f.check,
            tol=f.tol,
            reference=reference_state(cfg, model.R),
        )
        return {**point_columns(model, point), "F_I": result.value, "masked_mass": result.masked_mass}

    frame = pd.DataFrame(run_sweep(task, sweep_points(cfg), cfg.threads))
    health = {"N": cfg.solver.N, "grid_points": f.grid_points, "max_masked_mass": float(frame["masked_mass"].max())}
    summary = {"max_F_I": float(frame["F_I"].max())}
    return TaskOutput({"fisher": frame}, health, summary)
