from __future__ import annotations

import logging
from dataclasses import replace
from typing import Callable

import numpy as np
import pandas as pd

from ingestion.config_loader import EvolveSection, ModelSection, RunConfig
from logic import formulas
from logic.errors import ConfigError
from logic.hermite import BasisParams, FeedbackFunction, alpha_matrix, alpha_quadrature, orthonormality_matrix
from logic.models import preset
from logic.operators import SIGMA_X, SIGMA_Z
from logic.qfpme import (
    HermiteState,
    assemble_generator,
    lindblad_spectrum,
    parameter_derivatives,
    steady_state_forward,
    steady_state_full,
    steady_state_spectral,
)
from logic.statistics import current_correlation, signal_mean, signal_observable_covariance, signal_variance
from pipeline.common import TaskOutput
from pipeline.trajectories import compare_with_evolution, simulate

logger = logging.getLogger(__name__)

QUBIT_POINTS = ((1.0, 0.5, 2.0), (1.0, 1.0, 1.0), (0.5, 0.5, 0.5), (2.0, 1.5, 3.0), (1.0, 2.0, 0.8))


def _row(check: str, case: str, value: float, expected: float, tolerance: float, relative: bool = True) -> dict:
    error = abs(value - expected)
    if relative:
        error /= max(abs(expected), 1e-300)
    return {
        "check": check,
        "case": case,
        "value": value,
        "expected": expected,
        "error": error,
        "tolerance": tolerance,
        "passed": bool(error < tolerance),
    }


def check_closed_form(cfg: RunConfig) -> list[dict]:
    rows = []
    for omega, lam, gamma in QUBIT_POINTS:
        case = f"omega={omega:g} lam={lam:g} gamma={gamma:g}"
        state = steady_state_forward(preset("driven_qubit", omega=omega, lam=lam, gamma=gamma), 20)
        rows += [
            _row("closed_form", f"Var(D) {case}", signal_variance(state),
                 formulas.driven_qubit_variance(omega, lam, gamma), 1e-8),
            _row("closed_form", f"Cov(sigma_z) {case}", signal_observable_covariance(state, SIGMA_Z),
                 formulas.driven_qubit_covariance(omega, lam, gamma), 1e-8),
            _row("closed_form", f"<D> {case}", signal_mean(state), 0.0, 1e-10, relative=False),
            _row("closed_form", f"Cov(sigma_x) {case}", signal_observable_covariance(state, SIGMA_X), 0.0, 1e-10,
                 relative=False),
        ]
    return rows


def check_solvers(cfg: RunConfig) -> list[dict]:
    rows = []
    cases = (("driven_qubit", {}, 20), ("ising", {"L": 2}, 12))
    for name, params, N in cases:
        model = preset(name, **params)
        ref = np.eye(model.R, dtype=complex) / model.R
        forward = steady_state_forward(model, N, ref)
        spectral = steady_state_spectral(model, N, reference=ref)
        full = steady_state_full(assemble_generator(model, N), ref)
        rows.append(_row("solvers", f"{name} forward/spectral", forward.max_block_deviation(spectral), 0.0, 1e-8,
                         relative=False))
        rows.append(_row("solvers", f"{name} forward/full", forward.max_block_deviation(full), 0.0, 1e-8,
                         relative=False))
    return rows


def check_correlation(cfg: RunConfig) -> list[dict]:
    omega, lam, gamma = QUBIT_POINTS[0]
    model = preset("driven_qubit", omega=omega, lam=lam, gamma=gamma)
    spectrum = lindblad_spectrum(model)
    M0 = steady_state_forward(model, 3).unconditional
    curve = current_correlation(model, spectrum, M0, [0.0, 50.0 / gamma])
    variance = formulas.driven_qubit_variance(omega, lam, gamma)
    return [
        _row("correlation", "C(0) = Var(D)", curve.values[0], variance, 1e-8),
        _row("correlation", "C(50/gamma) / C(0)", abs(curve.values[1]) / curve.values[0], 0.0, 1e-6,
             relative=False),
    ]


def check_thermal(cfg: RunConfig) -> list[dict]:
    kappa, n_B, lam = 0.01, 0.5, 0.5
    model = preset("thermal_feedback_qubit", kappa=kappa, n_B=n_B, lam=lam, g=0.0)
    P0 = float(steady_state_forward(model, 12).unconditional[0, 0].real)
    return [
        _row("thermal", "P0 closed form", P0, formulas.thermal_ground_population(kappa, n_B, lam), 1e-8),
        _row("thermal", "P0 ~ 0.505", P0, 0.505, 0.01, relative=False),
    ]


def check_derivative(cfg: RunConfig) -> list[dict]:
    delta = 1e-5
    N = 12
    model = preset("rabi_metrology")
    state = steady_state_forward(model, N)
    exact = parameter_derivatives(model, state)
    plus = steady_state_forward(model.shifted(delta), N).matrices
    minus = steady_state_forward(model.shifted(-delta), N).matrices
    fd = HermiteState(state.params, (plus - minus) / (2 * delta))
    return [_row("derivative", "dM/dmu vs central difference", exact.max_block_deviation(fd), 0.0, 1e-5,
                 relative=False)]


def check_hermite(cfg: RunConfig) -> list[dict]:
    params = BasisParams(0.25, 30)
    ortho = float(np.max(np.abs(orthonormality_matrix(params) - np.eye(params.N))))
    small = BasisParams(0.25, 12)
    heaviside = FeedbackFunction.heaviside()
    quad = alpha_quadrature(heaviside, small, heaviside.breakpoints)
    closed = alpha_matrix(heaviside, small)
    linear = FeedbackFunction.linear()
    lin_quad = alpha_quadrature(linear, small)
    return [
        _row("hermite", "orthonormality N=30", ortho, 0.0, 1e-10, relative=False),
        _row("hermite", "heaviside alpha N=12", float(np.max(np.abs(quad - closed))), 0.0, 1e-10, relative=False),
        _row("hermite", "linear alpha N=12", float(np.max(np.abs(lin_quad - alpha_matrix(linear, small)))), 0.0,
             1e-10, relative=False),
    ]


def check_trajectories(cfg: RunConfig) -> list[dict]:
    qubit = replace(
        cfg,
        model=ModelSection("driven_qubit", {"omega": 1.0, "lam": 0.5, "gamma": 2.0}),
        evolve=EvolveSection(initial_state="ground", initial_signal="normal"),
    )
    model = qubit.build_model()
    ensemble = simulate(qubit, model, cfg.validate.n_traj)
    comparisons, _ = compare_with_evolution(qubit, model, ensemble)
    return [
        _row("trajectories", f"TV at t={t:.6g}", cmp.total_variation, 0.0, cfg.validate.tv_limit, relative=False)
        for t, cmp in comparisons
    ]


CHECKS: dict[str, Callable[[RunConfig], list[dict]]] = {
    "closed_form": check_closed_form,
    "solvers": check_solvers,
    "correlation": check_correlation,
    "thermal": check_thermal,
    "derivative": check_derivative,
    "hermite": check_hermite,
    "trajectories": check_trajectories,
}


def run_validate(cfg: RunConfig) -> TaskOutput:
    """Built-in oracle suite; ``passed`` is False when any check misses its tolerance."""
    names = list(CHECKS) if cfg.validate.checks is None else list(cfg.validate.checks)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"Unknown validation check(s) {unknown}. Expected {list(CHECKS)}.")
    rows = []
    for name in names:
        logger.info("validate: %s", name)
        rows += CHECKS[name](cfg)
    frame = pd.DataFrame(rows)
    failed = frame.loc[~frame["passed"], "case"].tolist()
    for case in failed:
        logger.warning("validation failed: %s", case)
    summary = {"checks": len(frame), "failed": failed, "passed": not failed}
    return TaskOutput({"validation": frame}, {"checks": names}, summary, passed=not failed)
