from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Iterable

import yaml

from logic.errors import ConfigError
from logic.models import PRESETS, preset
from logic.qfpme import STEADY_METHODS, ModelSpec
from logic.trajectories import INITIAL_SIGNAL_MODES

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "config/settings.yaml"
CONFIG_HEADER = "# config: "
REFERENCE_MODES = ("mixed", "none")
INITIAL_STATES = ("ground", "mixed")


@dataclass(frozen=True)
class ModelSection:
    preset: str = "driven_qubit"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SolverSection:
    N: int = 40
    method: str = "auto"
    auto_n: bool = False
    tail_tolerance: float = 1e-8
    observable_tolerance: float = 1e-6
    max_n: int = 512
    reference: str = "mixed"


@dataclass(frozen=True)
class DistributionSection:
    points: int = 2001
    d_min: float | None = None
    d_max: float | None = None
    cutoff: float | None = None


@dataclass(frozen=True)
class CorrelationSection:
    lags: list | None = None
    t_max: float = 10.0
    points: int = 201


@dataclass(frozen=True)
class SweepSection:
    lam: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FisherSection:
    grid_points: int = 2001
    check: bool = True
    tol: float = 1e-3


@dataclass(frozen=True)
class InformationSection:
    converge: bool = True
    step: int = 4
    tol: float = 1e-4


@dataclass(frozen=True)
class PerturbSection:
    orders: list = field(default_factory=lambda: [0, 1, 2, 3])
    strengths: list = field(default_factory=lambda: [0.1, 0.2])


@dataclass(frozen=True)
class EvolveSection:
    t_end: float = math.pi / 2
    times: list = field(default_factory=lambda: [math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2])
    tol: float = 1e-8
    initial_state: str = "ground"
    initial_signal: str = "normal"
    points: int = 101


@dataclass(frozen=True)
class TrajectorySection:
    n_traj: int = 5000
    dt: float | None = None
    batch_size: int = 250
    bins: int = 20


@dataclass(frozen=True)
class ValidateSection:
    checks: list | None = None
    n_traj: int = 5000
    tv_limit: float = 0.05


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    prefix: str = ""
    xlsx: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    solver: SolverSection = field(default_factory=SolverSection)
    distribution: DistributionSection = field(default_factory=DistributionSection)
    correlation: CorrelationSection = field(default_factory=CorrelationSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    fisher: FisherSection = field(default_factory=FisherSection)
    information: InformationSection = field(default_factory=InformationSection)
    perturb: PerturbSection = field(default_factory=PerturbSection)
    evolve: EvolveSection = field(default_factory=EvolveSection)
    trajectories: TrajectorySection = field(default_factory=TrajectorySection)
    validate: ValidateSection = field(default_factory=ValidateSection)
    observables: list = field(default_factory=lambda: ["A"])
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical one-line JSON used in output headers."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def build_model(self, **overrides: float) -> ModelSpec:
        params = dict(self.model.params)
        params.update(overrides)
        return preset(self.model.preset, params)


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if is_dataclass(f.default_factory)}


# ---------------------------------------------------------------------------
# Building and validation
# ---------------------------------------------------------------------------

def _coerce(value: Any, default: Any, path: str) -> Any:
    """Bring a parsed YAML value to the type of the field's default."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false, got {value!r}", key=path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path} must be an integer, got {value!r}", key=path)
        if isinstance(value, int):
            return value
        try:
            number = float(value)
        except ValueError:
            raise ConfigError(f"{path} must be an integer, got {value!r}", key=path)
        if number != int(number):
            raise ConfigError(f"{path} must be an integer, got {value!r}", key=path)
        return int(number)
    if isinstance(default, float):
        # yaml 1.1 reads "1e-8" as a string
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path} must be a number, got {value!r}", key=path)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}", key=path)
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path} must be a list, got {value!r}", key=path)
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{path} must be a mapping, got {value!r}", key=path)
    return value


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{prefix or 'config'}' must be a mapping, got {type(data).__name__}")
    template = cls()
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        paths = [f"{prefix}{k}" for k in unknown]
        raise ConfigError(f"Unknown config key(s): {paths}", keys=paths)
    values = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        path = f"{prefix}{f.name}"
        if cls is RunConfig and f.name in SECTIONS:
            values[f.name] = _build(SECTIONS[f.name], data[f.name], path + ".")
        else:
            values[f.name] = _coerce(data[f.name], getattr(template, f.name), path)
    return replace(template, **values)


def _number_list(values: Iterable, path: str) -> list[float]:
    out = []
    for v in values:
        try:
            out.append(float(v))
        except (TypeError, ValueError):
            raise ConfigError(f"{path} entries must be numbers, got {v!r}", key=path)
    return out


def _optional_number(value: Any, path: str) -> float | None:
    if value is None:
        return None
    return _number_list([value], path)[0]


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.model.preset not in PRESETS:
        raise ConfigError(f"Unknown preset '{cfg.model.preset}'. Expected one of {sorted(PRESETS)}.")
    params = PRESETS[cfg.model.preset].resolve(cfg.model.params)

    s = cfg.solver
    if s.N < 1 or s.max_n < s.N:
        raise ConfigError(f"solver.N must be >= 1 and <= solver.max_n, got N={s.N}, max_n={s.max_n}")
    if s.method not in STEADY_METHODS:
        raise ConfigError(f"solver.method must be one of {list(STEADY_METHODS)}, got '{s.method}'")
    if s.reference not in REFERENCE_MODES:
        raise ConfigError(f"solver.reference must be one of {list(REFERENCE_MODES)}, got '{s.reference}'")
    if s.tail_tolerance <= 0 or s.observable_tolerance <= 0:
        raise ConfigError("solver tolerances must be > 0")

    d = replace(
        cfg.distribution,
        d_min=_optional_number(cfg.distribution.d_min, "distribution.d_min"),
        d_max=_optional_number(cfg.distribution.d_max, "distribution.d_max"),
        cutoff=_optional_number(cfg.distribution.cutoff, "distribution.cutoff"),
    )
    if d.points < 3:
        raise ConfigError(f"distribution.points must be >= 3, got {d.points}")
    if (d.d_min is None) != (d.d_max is None):
        raise ConfigError("distribution.d_min and distribution.d_max must be given together")
    if d.d_min is not None and d.d_min >= d.d_max:
        raise ConfigError("distribution.d_min must be below distribution.d_max")
    if d.cutoff is not None and d.cutoff <= 0:
        raise ConfigError("distribution.cutoff must be > 0")

    c = cfg.correlation
    lags = None if c.lags is None else _number_list(c.lags, "correlation.lags")
    if c.t_max < 0 or c.points < 1:
        raise ConfigError("correlation.t_max must be >= 0 and correlation.points >= 1")

    sweep = SweepSection(
        lam=_number_list(cfg.sweep.lam, "sweep.lam"),
        gamma=_number_list(cfg.sweep.gamma, "sweep.gamma"),
        params={k: _number_list(v if isinstance(v, list) else [v], f"sweep.params.{k}")
                for k, v in cfg.sweep.params.items()},
    )
    unknown = sorted(set(sweep.params) - set(PRESETS[cfg.model.preset].params))
    if unknown:
        raise ConfigError(f"sweep.params has unknown parameter(s) {unknown} for preset '{cfg.model.preset}'")

    if cfg.fisher.grid_points < 3 or cfg.fisher.tol <= 0:
        raise ConfigError("fisher.grid_points must be >= 3 and fisher.tol > 0")
    if cfg.information.step < 1 or cfg.information.tol <= 0:
        raise ConfigError("information.step must be >= 1 and information.tol > 0")

    orders = cfg.perturb.orders
    if not orders or any(not isinstance(j, int) or isinstance(j, bool) or j < 0 for j in orders):
        raise ConfigError(f"perturb.orders must be non-negative integers, got {orders}")
    strengths = _number_list(cfg.perturb.strengths, "perturb.strengths")

    e = cfg.evolve
    times = _number_list(e.times, "evolve.times")
    if e.t_end < 0 or any(t < 0 or t > e.t_end for t in times):
        raise ConfigError("evolve.times must lie in [0, evolve.t_end]")
    if e.initial_state not in INITIAL_STATES:
        raise ConfigError(f"evolve.initial_state must be one of {list(INITIAL_STATES)}, got '{e.initial_state}'")
    if e.initial_signal not in INITIAL_SIGNAL_MODES:
        raise ConfigError(
            f"evolve.initial_signal must be one of {list(INITIAL_SIGNAL_MODES)}, got '{e.initial_signal}'"
        )
    if e.tol <= 0:
        raise ConfigError("evolve.tol must be > 0")
    if e.points < 2:
        raise ConfigError(f"evolve.points must be >= 2, got {e.points}")
    if not cfg.observables or any(not isinstance(o, str) for o in cfg.observables):
        raise ConfigError(f"observables must be a non-empty list of names, got {cfg.observables}")

    t = replace(cfg.trajectories, dt=_optional_number(cfg.trajectories.dt, "trajectories.dt"))
    if t.n_traj < 1 or t.batch_size < 1 or t.bins < 1:
        raise ConfigError("trajectories.n_traj, batch_size and bins must be >= 1")
    if t.dt is not None and t.dt <= 0:
        raise ConfigError("trajectories.dt must be > 0")

    v = cfg.validate
    if v.n_traj < 1 or v.tv_limit <= 0:
        raise ConfigError("validate.n_traj must be >= 1 and validate.tv_limit > 0")

    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {cfg.seed}")
    if cfg.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {cfg.threads}")

    return replace(
        cfg,
        model=replace(cfg.model, params=params),
        distribution=d,
        correlation=replace(c, lags=lags),
        trajectories=t,
        sweep=sweep,
        perturb=replace(cfg.perturb, strengths=strengths),
        evolve=replace(e, times=times),
    )


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_header(path: Path) -> dict:
    """Config recorded in the header block of a previously written CSV."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            if line.startswith(CONFIG_HEADER):
                return json.loads(line[len(CONFIG_HEADER):])
    raise ConfigError(f"{path} has no '{CONFIG_HEADER.strip()}' header line")


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", path=str(path))
    if path.suffix.lower() == ".csv":
        return _read_header(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}", path=str(path))
    # JSON reports written by the CLI carry their config next to the results
    if isinstance(raw, dict) and "config" in raw and "results" in raw:
        raw = raw["config"]
    return raw or {}


def parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got '{item}'")
    key, text = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"--set has an empty key in '{item}'")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse --set value '{text}': {exc}")
    return parts, value


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    data = json.loads(json.dumps(raw))  # deep copy of plain data
    for item in overrides:
        parts, value = parse_override(item)
        node = data
        for p in parts[:-1]:
            child = node.setdefault(p, {})
            if not isinstance(child, dict):
                raise ConfigError(f"--set {'.'.join(parts)}: '{p}' is not a section")
            node = child
        node[parts[-1]] = value
    return data


def load_config(path: str | Path | None = DEFAULT_CONFIG, overrides: Iterable[str] = ()) -> RunConfig:
    """Read, override and validate one run configuration."""
    raw = read_config_file(path) if path is not None else {}
    raw = apply_overrides(raw, overrides)
    cfg = _validate(_build(RunConfig, raw, ""))
    logger.debug("resolved config: %s", cfg.to_json())
    return cfg


def config_from_dict(data: dict) -> RunConfig:
    return _validate(_build(RunConfig, data, ""))
