from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from analytics.performance import truncation_health
from ingestion.config_loader import RunConfig
from logic.errors import ConfigError
from logic.operators import ComplexMatrix, SIGMA_X, SIGMA_Y, SIGMA_Z, spin_operators
from logic.qfpme import HermiteState, ModelSpec, converge_truncation, steady_state
from logic.statistics import default_grid, signal_variance

logger = logging.getLogger(__name__)


@dataclass
class TaskOutput:
    """Tables to write, health metrics for the header, and a JSON summary."""

    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    health: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    passed: bool = True


def reference_state(cfg: RunConfig, R: int) -> ComplexMatrix | None:
    """Maximally mixed reference for degenerate stationary subspaces, or None."""
    if cfg.solver.reference == "none":
        return None
    return np.eye(R, dtype=complex) / R


def initial_state(name: str, R: int) -> ComplexMatrix:
    rho = np.zeros((R, R), dtype=complex)
    if name == "ground":
        rho[0, 0] = 1.0
    else:
        rho[np.diag_indices(R)] = 1.0 / R
    return rho


def solve_steady(cfg: RunConfig, model: ModelSpec, N: int | None = None) -> tuple[HermiteState, dict]:
    """Steady state at the configured truncation, or with automatic N when solver.auto_n is set."""
    s = cfg.solver
    ref = reference_state(cfg, model.R)
    N = s.N if N is None else N

    def solve(n: int) -> HermiteState:
        return steady_state(model, n, s.method, ref)

    if not s.auto_n:
        state = solve(N)
        return state, truncation_health(state)
    state, history = converge_truncation(
        solve,
        N,
        observable=signal_variance,
        tail_tolerance=s.tail_tolerance,
        observable_tolerance=s.observable_tolerance,
        max_n=s.max_n,
    )
    return state, truncation_health(state, history)


def signal_grid(cfg: RunConfig, state: HermiteState) -> np.ndarray:
    d = cfg.distribution
    if d.d_min is not None:
        return np.linspace(d.d_min, d.d_max, d.points)
    return default_grid(state, d.points)


def resolve_observable(name: str, model: ModelSpec) -> ComplexMatrix:
    """'A' is the measured operator; sigma_x/y/z on a qubit; S_x/S_y/S_z on a chain."""
    if name == "A":
        return model.measured
    paulis = {"sigma_x": SIGMA_X, "sigma_y": SIGMA_Y, "sigma_z": SIGMA_Z}
    if name in paulis:
        if model.R != 2:
            raise ConfigError(f"observable '{name}' needs a qubit model, R={model.R}")
        return paulis[name]
    if name in ("S_x", "S_y", "S_z"):
        L = int(round(math.log2(model.R)))
        if 2**L != model.R:
            raise ConfigError(f"observable '{name}' needs R = 2^L, got R={model.R}")
        spins = spin_operators(L)
        return {"S_x": spins.Sx, "S_y": spins.Sy, "S_z": spins.Sz}[name]
    raise ConfigError(f"Unknown observable '{name}'. Expected A, sigma_x/y/z or S_x/y/z.")


def sweep_points(cfg: RunConfig) -> list[dict]:
    """Parameter overrides for every point of the configured sweep, lam varying fastest."""
    axes: list[tuple[str, list[float]]] = []
    for key, values in sorted(cfg.sweep.params.items()):
        axes.append((key, list(values)))
    if cfg.sweep.gamma:
        axes.append(("gamma", list(cfg.sweep.gamma)))
    if cfg.sweep.lam:
        axes.append(("lam", list(cfg.sweep.lam)))
    if not axes:
        return [{}]
    keys = [k for k, _ in axes]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in axes))]


def point_columns(model: ModelSpec, point: dict) -> dict:
    """Leading columns of a sweep row: the varied parameters plus lambda and gamma."""
    row = {"lambda": model.lam, "gamma": model.gamma}
    for key, value in point.items():
        if key not in ("lam", "gamma"):
            row[key] = value
    return row
