import numpy as np
import pytest

from logic.errors import ConfigError
from logic.models import PRESETS, preset, preset_names
from logic.operators import SIGMA_Z, trace_row


def test_every_preset_builds_with_defaults():
    assert preset_names() == sorted(PRESETS)
    for name in preset_names():
        model = preset(name)
        assert model.name == name
        # every Liouvillian is trace preserving
        assert np.allclose(trace_row(model.R) @ model.lindbladian(), 0.0, atol=1e-12)


def test_driven_qubit_parameters():
    model = preset("driven_qubit", omega=2.0, lam=0.25)
    assert model.gamma == 2.0
    assert model.sigma == pytest.approx(2.0 / (8 * 0.25))
    assert np.array_equal(model.measured, SIGMA_Z)
    assert model.params == {"omega": 2.0, "lam": 0.25, "gamma": 2.0, "mu": 0.0}


def test_params_mapping_and_keywords_merge():
    model = preset("ising", {"L": 2, "h": 0.3}, h=0.4)
    assert model.R == 4
    assert model.params["h"] == 0.4
    assert isinstance(model.params["L"], int)


def test_unknown_preset_and_parameter():
    with pytest.raises(ConfigError) as excinfo:
        preset("heisenberg")
    assert "driven_qubit" in str(excinfo.value)
    with pytest.raises(ConfigError) as excinfo:
        preset("driven_qubit", beta=1.0)
    assert excinfo.value.details["unknown"] == ["beta"]


@pytest.mark.parametrize("name,overrides", [
    ("driven_qubit", {"lam": -0.1}),
    ("driven_qubit", {"gamma": 0.0}),
    ("driven_qubit", {"omega": float("nan")}),
    ("ising", {"L": 5}),
    ("ising", {"L": 2.5}),
    ("lmg", {"L": 0}),
    ("thermal_feedback_qubit", {"n_B": -1.0}),
    ("rabi_metrology", {"mu": "fast"}),
])
def test_out_of_range_parameters_are_rejected(name, overrides):
    with pytest.raises(ConfigError):
        preset(name, **overrides)


def test_thermal_feedback_channel_only_when_switched_on():
    assert preset("thermal_feedback_qubit").active_feedback == ()
    model = preset("thermal_feedback_qubit", g=0.2)
    (channel,) = model.active_feedback
    assert channel.strength == 0.2
    assert model.without_feedback().active_feedback == ()


def test_derivative_is_field_generator():
    model = preset("lmg")
    shifted = model.shifted(0.1)
    assert np.allclose(shifted.lindbladian() - model.lindbladian(), 0.1 * model.derivative(model.mu))
