from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from logic.errors import ConfigError
from logic.hermite import FeedbackFunction
from logic.operators import (
    MAX_DIM,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    build_liouvillian,
    hamiltonian,
    spin_operators,
)
from logic.qfpme import FeedbackChannel, ModelSpec

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamRange:
    default: float
    lo: float = -np.inf
    hi: float = np.inf
    lo_inclusive: bool = True
    integer: bool = False

    def check(self, preset: str, key: str, value: float) -> float:
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{preset}.{key} must be a number, got {value!r}")
        if not np.isfinite(value):
            raise ConfigError(f"{preset}.{key} must be finite, got {value}")
        below = value < self.lo or (value == self.lo and not self.lo_inclusive)
        if below or value > self.hi:
            bracket = "[" if self.lo_inclusive else "("
            raise ConfigError(
                f"{preset}.{key}={value} is outside {bracket}{self.lo}, {self.hi}]",
                preset=preset, key=key, value=value,
            )
        if self.integer:
            if value != int(value):
                raise ConfigError(f"{preset}.{key} must be an integer, got {value}")
            return int(value)
        return value


MAX_QUBITS = int(np.log2(MAX_DIM))


def _rate(default: float) -> ParamRange:
    return ParamRange(default, lo=0.0)


def _positive(default: float) -> ParamRange:
    return ParamRange(default, lo=0.0, lo_inclusive=False)


def _real(default: float) -> ParamRange:
    return ParamRange(default)


def _qubits(default: int) -> ParamRange:
    return ParamRange(default, lo=1, hi=MAX_QUBITS, integer=True)


@dataclass(frozen=True)
class ModelPreset:
    name: str
    params: Mapping[str, ParamRange]
    builder: Callable[..., ModelSpec]
    description: str = ""

    def resolve(self, overrides: Mapping[str, float]) -> dict:
        unknown = sorted(set(overrides) - set(self.params))
        if unknown:
            raise ConfigError(
                f"Unknown parameter(s) {unknown} for preset '{self.name}'. Expected {sorted(self.params)}.",
                preset=self.name, unknown=unknown,
            )
        values = {k: r.default for k, r in self.params.items()}
        values.update(overrides)
        return {k: self.params[k].check(self.name, k, v) for k, v in values.items()}

    def build(self, **overrides: float) -> ModelSpec:
        values = self.resolve(overrides)
        return self.builder(**values)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _driven_qubit(omega: float, lam: float, gamma: float, mu: float = 0.0, name: str = "driven_qubit") -> ModelSpec:
    drive = hamiltonian(SIGMA_X)
    return ModelSpec(
        name=name,
        liouvillian=lambda m: (omega + m) * drive,
        measured=SIGMA_Z,
        lam=lam,
        gamma=gamma,
        derivative=lambda m: drive,
        mu=mu,
        params={"omega": omega, "lam": lam, "gamma": gamma, "mu": mu},
    )


def _rabi_metrology(omega: float, lam: float, gamma: float, mu: float) -> ModelSpec:
    return _driven_qubit(omega, lam, gamma, mu, name="rabi_metrology")


def _ising(L: int, J: float, h: float, lam: float, gamma: float) -> ModelSpec:
    spins = spin_operators(L)
    coupling = sum((spins.z[j + 1] @ spins.z[j] for j in range(L - 1)), np.zeros((spins.dim,) * 2, dtype=complex))
    base = hamiltonian(J * coupling)
    field = hamiltonian(spins.Sx)
    return ModelSpec(
        name="ising",
        liouvillian=lambda m: base + (h + m) * field,
        measured=spins.Sz,
        lam=lam,
        gamma=gamma,
        derivative=lambda m: field,
        params={"L": L, "J": J, "h": h, "lam": lam, "gamma": gamma},
    )


def _lmg(L: int, h: float, lam: float, gamma: float) -> ModelSpec:
    spins = spin_operators(L)
    base = hamiltonian(-(spins.Sx @ spins.Sx) / L)
    field = hamiltonian(spins.Sz)
    return ModelSpec(
        name="lmg",
        liouvillian=lambda m: base + (h + m) * field,
        measured=spins.Sy,
        lam=lam,
        gamma=gamma,
        derivative=lambda m: field,
        params={"L": L, "h": h, "lam": lam, "gamma": gamma},
    )


def _thermal_feedback_qubit(kappa: float, n_B: float, g: float, lam: float, gamma: float) -> ModelSpec:
    L0 = build_liouvillian(
        np.zeros((2, 2)),
        [(kappa * n_B, SIGMA_PLUS), (kappa * (n_B + 1.0), SIGMA_MINUS)],
    )
    feedback = ()
    if g != 0:
        feedback = (FeedbackChannel(FeedbackFunction.linear(), hamiltonian(SIGMA_Y), g),)
    return ModelSpec(
        name="thermal_feedback_qubit",
        liouvillian=lambda m: L0,
        measured=SIGMA_X,
        lam=lam,
        gamma=gamma,
        feedback=feedback,
        params={"kappa": kappa, "n_B": n_B, "g": g, "lam": lam, "gamma": gamma},
    )


PRESETS: dict[str, ModelPreset] = {
    "driven_qubit": ModelPreset(
        "driven_qubit",
        {"omega": _real(1.0), "lam": _rate(0.5), "gamma": _positive(2.0)},
        _driven_qubit,
        "H = omega sigma_x, A = sigma_z",
    ),
    "rabi_metrology": ModelPreset(
        "rabi_metrology",
        {"omega": _real(0.4), "lam": _rate(1.0), "gamma": _positive(1.0), "mu": _real(0.0)},
        _rabi_metrology,
        "H = (omega + mu) sigma_x, A = sigma_z; mu is the estimated parameter",
    ),
    "ising": ModelPreset(
        "ising",
        {"L": _qubits(3), "J": _real(1.0), "h": _real(0.05), "lam": _rate(1.0), "gamma": _positive(2.0)},
        _ising,
        "H = J sum sz_{j+1} sz_j + h sum sx_i, A = S_z",
    ),
    "lmg": ModelPreset(
        "lmg",
        {"L": _qubits(4), "h": _real(0.1), "lam": _rate(1.0), "gamma": _positive(3.0)},
        _lmg,
        "H = -S_x^2 / L + h S_z, A = S_y",
    ),
    "thermal_feedback_qubit": ModelPreset(
        "thermal_feedback_qubit",
        {"kappa": _rate(0.01), "n_B": _rate(0.5), "g": _real(0.0), "lam": _rate(0.5), "gamma": _positive(4.0)},
        _thermal_feedback_qubit,
        "thermal qubit, A = sigma_x, feedback -i g D [sigma_y, .]",
    ),
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def preset(name: str, params: Mapping[str, float] | None = None, **overrides: float) -> ModelSpec:
    """Build one of the example models by name."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}'. Expected one of {preset_names()}.", preset=name)
    merged = dict(params or {})
    merged.update(overrides)
    model = PRESETS[name].build(**merged)
    logger.debug("built preset %s with %s", name, dict(model.params))
    return model
