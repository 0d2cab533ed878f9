from __future__ import annotations

import configparser
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .classify import CriterionId
from .errors import ConfigError, GreenCritError
from .green import GreenRadialKernel, GridSpec, QuasiMetric, build_power_metric, build_snowflake_metric
from .profiles import MeasureProfile, VolumeProfile

logger = logging.getLogger(__name__)

THREADS_ENV = "GREENCRIT_THREADS"
SECTIONS = ("profile", "measure", "grid", "task", "run")

CRITERION_NAMES: Dict[str, CriterionId] = {
    "cond-int1": CriterionId.COND_INT1,
    "cond-int1a": CriterionId.COND_INT1A,
    "cond-int1b": CriterionId.COND_INT1B,
    "cond-int2": CriterionId.COND_INT2,
    "cond-1": CriterionId.COND_1,
    "cond-2": CriterionId.COND_2,
    "last-1": CriterionId.LAST_1,
    "last-2": CriterionId.LAST_2,
    "cond-m": CriterionId.COND_M,
    "cond-0": CriterionId.COND_0,
    "conjecture-1": CriterionId.CONJECTURE_1,
    "conjecture-2": CriterionId.CONJECTURE_2,
}


@dataclass
class ProfileSpec:
    family: str = "euclidean"
    params: Tuple[float, ...] = (3.0,)
    table: Optional[Path] = None


@dataclass
class MeasureSpec:
    family: str = "unit"
    params: Tuple[float, ...] = ()
    table: Optional[Path] = None


@dataclass
class KernelSpec:
    r_min: float = 1e-3
    r_max: float = 1e6
    nodes: int = 2048
    quad_rel_tol: float = 1e-10

    def grid(self) -> GridSpec:
        return GridSpec(self.r_min, self.r_max, self.nodes)


@dataclass
class TaskSpec:
    criterion: str = "cond-int1b"
    q: float = 4.0
    q_lo: float = 2.0
    q_hi: float = 5.0
    tol: float = 1e-3
    scan_points: int = 9
    r0: float = 1.0
    a: float = 1.0
    metric: str = "snowflake"
    gamma: Optional[float] = None
    gamma_tilde: Optional[float] = None
    alpha: Optional[float] = None
    center_samples: int = 8
    sigma_scale: float = 1.0
    max_iters: int = 10_000
    picard_tol: float = 1e-12
    suite: str = "full"
    trials: int = 500
    s_values: Tuple[float, ...] = (1.5, 2.0, 3.0)
    corrupt_symmetry: bool = False

    @property
    def criterion_id(self) -> CriterionId:
        return parse_criterion(self.criterion)


@dataclass
class RunConfig:
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    grid: KernelSpec = field(default_factory=KernelSpec)
    task: TaskSpec = field(default_factory=TaskSpec)
    seed: int = 42
    output_dir: Path = Path("outputs")
    name: Optional[str] = None
    source: Optional[str] = None


def parse_criterion(name: str) -> CriterionId:
    key = name.strip()
    if key.lower() in CRITERION_NAMES:
        return CRITERION_NAMES[key.lower()]
    for criterion in CriterionId:
        if criterion.value.lower() == key.lower():
            return criterion
    raise ConfigError(f"unknown criterion '{name}'")


def _locate(path: Optional[Path], section: str, key: str) -> Optional[int]:
    """Line number of ``key`` inside ``[section]`` of an INI file."""
    if path is None or not path.exists():
        return None
    current = None
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
        elif current == section and "=" in line and line.split("=", 1)[0].strip().lower() == key:
            return number
    return None


class _Reader:
    def __init__(self, values: Dict[str, Dict[str, str]], path: Optional[Path], origins: Dict[Tuple[str, str], str]) -> None:
        self.values = values
        self.path = path
        self.origins = origins

    def error(self, section: str, key: str, message: str) -> ConfigError:
        origin = self.origins.get((section, key))
        if origin is not None:
            return ConfigError(f"{section}.{key}: {message}", origin)
        return ConfigError(f"{section}.{key}: {message}", str(self.path) if self.path else None, _locate(self.path, section, key))

    def raw(self, section: str, key: str) -> Optional[str]:
        return self.values.get(section, {}).get(key)

    def text(self, section: str, key: str, default: Optional[str]) -> Optional[str]:
        value = self.raw(section, key)
        return default if value is None or value.strip() == "" else value.strip()

    def number(self, section: str, key: str, default: Optional[float]) -> Optional[float]:
        value = self.raw(section, key)
        if value is None or value.strip() == "":
            return default
        try:
            return float(value)
        except ValueError:
            raise self.error(section, key, f"expected a number, got '{value}'") from None

    def integer(self, section: str, key: str, default: int) -> int:
        value = self.raw(section, key)
        if value is None or value.strip() == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise self.error(section, key, f"expected an integer, got '{value}'") from None

    def numbers(self, section: str, key: str, default: Tuple[float, ...]) -> Tuple[float, ...]:
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return tuple(float(item) for item in value.replace(";", ",").split(",") if item.strip())
        except ValueError:
            raise self.error(section, key, f"expected comma-separated numbers, got '{value}'") from None

    def flag(self, section: str, key: str, default: bool) -> bool:
        value = self.raw(section, key)
        if value is None:
            return default
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise self.error(section, key, f"expected a boolean, got '{value}'")


def _read_file(path: Path) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open(encoding="utf-8") as handle:
            parser.read_file(handle)
    except FileNotFoundError:
        raise ConfigError("config file not found", str(path)) from None
    except configparser.ParsingError as error:
        line = error.errors[0][0] if error.errors else None
        raise ConfigError("malformed line", str(path), line) from None
    except configparser.Error as error:
        raise ConfigError(str(error).splitlines()[0], str(path), getattr(error, "lineno", None)) from None
    values: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        name = section.lower()
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", str(path), _locate(path, name, ""))
        values[name] = dict(parser.items(section))
    return values


def parse_override(text: str) -> Tuple[str, str, str]:
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override '{text}' must look like section.key=value", "<override>")
    target, value = text.split("=", 1)
    section, key = target.strip().lower().split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"override '{text}' names an unknown section", "<override>")
    return section, key.strip(), value.strip()


def shorthand_overrides(
    criterion: Optional[str] = None,
    profile: Optional[str] = None,
    measure: Optional[str] = None,
    q: Optional[float] = None,
) -> List[str]:
    """``--profile family:p1,p2`` style flags rewritten as section.key=value overrides."""
    overrides: List[str] = []
    if criterion is not None:
        overrides.append(f"task.criterion={criterion}")
    for section, spec in (("profile", profile), ("measure", measure)):
        if spec is None:
            continue
        family, _, params = spec.partition(":")
        overrides.append(f"{section}.family={family}")
        overrides.append(f"{section}.params={params}")
    if q is not None:
        overrides.append(f"task.q={q}")
    return overrides


def load_run_config(path: Optional[Path] = None, overrides: Sequence[str] = ()) -> RunConfig:
    values: Dict[str, Dict[str, str]] = {} if path is None else _read_file(path)
    origins: Dict[Tuple[str, str], str] = {}
    for text in overrides:
        section, key, value = parse_override(text)
        values.setdefault(section, {})[key] = value
        origins[(section, key)] = "<override>"
    reader = _Reader(values, path, origins)
    _reject_unknown_keys(reader)
    config = _build(reader)
    config.source = None if path is None else str(path)
    _validate(config, reader)
    return config


_KNOWN_KEYS = {
    "profile": {"family", "params", "table"},
    "measure": {"family", "params", "table"},
    "grid": {spec.name for spec in fields(KernelSpec)},
    "task": {spec.name for spec in fields(TaskSpec)},
    "run": {"seed", "output_dir", "name"},
}


def _reject_unknown_keys(reader: _Reader) -> None:
    for section, entries in reader.values.items():
        for key in entries:
            if key not in _KNOWN_KEYS[section]:
                raise reader.error(section, key, "unknown key")


def _build(reader: _Reader) -> RunConfig:
    defaults = TaskSpec()
    grid_defaults = KernelSpec()
    table = reader.text("profile", "table", None)
    measure_table = reader.text("measure", "table", None)
    task = TaskSpec(
        criterion=reader.text("task", "criterion", defaults.criterion),
        q=reader.number("task", "q", defaults.q),
        q_lo=reader.number("task", "q_lo", defaults.q_lo),
        q_hi=reader.number("task", "q_hi", defaults.q_hi),
        tol=reader.number("task", "tol", defaults.tol),
        scan_points=reader.integer("task", "scan_points", defaults.scan_points),
        r0=reader.number("task", "r0", defaults.r0),
        a=reader.number("task", "a", defaults.a),
        metric=reader.text("task", "metric", defaults.metric).lower(),
        gamma=reader.number("task", "gamma", None),
        gamma_tilde=reader.number("task", "gamma_tilde", None),
        alpha=reader.number("task", "alpha", None),
        center_samples=reader.integer("task", "center_samples", defaults.center_samples),
        sigma_scale=reader.number("task", "sigma_scale", defaults.sigma_scale),
        max_iters=reader.integer("task", "max_iters", defaults.max_iters),
        picard_tol=reader.number("task", "picard_tol", defaults.picard_tol),
        suite=reader.text("task", "suite", defaults.suite).lower(),
        trials=reader.integer("task", "trials", defaults.trials),
        s_values=reader.numbers("task", "s_values", defaults.s_values),
        corrupt_symmetry=reader.flag("task", "corrupt_symmetry", defaults.corrupt_symmetry),
    )
    return RunConfig(
        profile=ProfileSpec(
            reader.text("profile", "family", "euclidean").lower(),
            reader.numbers("profile", "params", (3.0,)),
            Path(table) if table else None,
        ),
        measure=MeasureSpec(
            reader.text("measure", "family", "unit").lower(),
            reader.numbers("measure", "params", ()),
            Path(measure_table) if measure_table else None,
        ),
        grid=KernelSpec(
            reader.number("grid", "r_min", grid_defaults.r_min),
            reader.number("grid", "r_max", grid_defaults.r_max),
            reader.integer("grid", "nodes", grid_defaults.nodes),
            reader.number("grid", "quad_rel_tol", grid_defaults.quad_rel_tol),
        ),
        task=task,
        seed=reader.integer("run", "seed", 42),
        output_dir=Path(reader.text("run", "output_dir", "outputs")),
        name=reader.text("run", "name", None),
    )


PROFILE_ARITY = {"euclidean": (1, 1), "power": (2, 2), "powerlog": (2, 3), "two_regime": (2, 2), "tabulated": (0, 0)}
MEASURE_ARITY = {"unit": (0, 0), "radial_power": (2, 2), "tabulated": (0, 0)}


def _validate(config: RunConfig, reader: _Reader) -> None:
    profile = config.profile
    if profile.family not in PROFILE_ARITY:
        raise reader.error("profile", "family", f"unknown volume family '{profile.family}'")
    low, high = PROFILE_ARITY[profile.family]
    if not low <= len(profile.params) <= high and profile.family != "tabulated":
        raise reader.error("profile", "params", f"{profile.family} takes {low} to {high} parameters, got {len(profile.params)}")
    if profile.family == "tabulated" and profile.table is None:
        raise reader.error("profile", "table", "tabulated profiles need a table path")
    measure = config.measure
    if measure.family not in MEASURE_ARITY:
        raise reader.error("measure", "family", f"unknown measure family '{measure.family}'")
    if measure.family == "radial_power" and len(measure.params) != 2:
        raise reader.error("measure", "params", "radial_power takes c,m")
    if measure.family == "tabulated" and measure.table is None:
        raise reader.error("measure", "table", "tabulated densities need a table path")
    grid = config.grid
    if not 0 < grid.r_min < grid.r_max:
        raise reader.error("grid", "r_max", f"need 0 < r_min < r_max, got [{grid.r_min}, {grid.r_max}]")
    if grid.nodes < 8:
        raise reader.error("grid", "nodes", f"need at least 8 nodes, got {grid.nodes}")
    if grid.quad_rel_tol <= 0:
        raise reader.error("grid", "quad_rel_tol", "must be positive")
    task = config.task
    for key in ("q", "q_lo", "q_hi"):
        if not getattr(task, key) > 1:
            raise reader.error("task", key, f"q must exceed 1, got {getattr(task, key)}")
    if task.q_lo >= task.q_hi:
        raise reader.error("task", "q_hi", f"scan bracket is empty: [{task.q_lo}, {task.q_hi}]")
    try:
        parse_criterion(task.criterion)
    except ConfigError:
        raise reader.error("task", "criterion", f"unknown criterion '{task.criterion}'") from None
    if task.metric not in ("snowflake", "power"):
        raise reader.error("task", "metric", f"unknown metric '{task.metric}'")
    if task.a <= 0:
        raise reader.error("task", "a", "must be positive")
    if task.scan_points < 2:
        raise reader.error("task", "scan_points", "need at least 2 points")


def build_volume(spec: ProfileSpec) -> VolumeProfile:
    from .storage import read_profile_table

    params = spec.params
    try:
        if spec.family == "euclidean":
            return VolumeProfile.euclidean(params[0])
        if spec.family == "power":
            return VolumeProfile.power(params[0], params[1])
        if spec.family == "powerlog":
            k = int(params[2]) if len(params) > 2 else 1
            return VolumeProfile.power_log(params[0], params[1], k)
        if spec.family == "two_regime":
            return VolumeProfile.two_regime(params[0], params[1])
        if spec.family == "tabulated":
            radii, volumes = read_profile_table(spec.table)
            return VolumeProfile.tabulated(radii, volumes)
    except IndexError:
        raise ConfigError(f"{spec.family} profile is missing parameters") from None
    except GreenCritError as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(f"profile: {error}") from error
    raise ConfigError(f"unknown volume family '{spec.family}'")


def build_measure(spec: MeasureSpec, volume: VolumeProfile) -> MeasureProfile:
    from .storage import read_profile_table

    if spec.family == "unit":
        return MeasureProfile.unit()
    try:
        if spec.family == "radial_power":
            return MeasureProfile.radial_power(spec.params[0], spec.params[1], volume.inner_exponent)
        if spec.family == "tabulated":
            radii, densities = read_profile_table(spec.table)
            return MeasureProfile.tabulated(radii, densities)
    except GreenCritError as error:
        raise ConfigError(f"measure: {error}") from error
    raise ConfigError(f"unknown measure family '{spec.family}'")


def build_kernel(config: RunConfig, volume: VolumeProfile) -> GreenRadialKernel:
    return GreenRadialKernel(volume, config.grid.quad_rel_tol)


def build_metric(task: TaskSpec, volume: VolumeProfile) -> QuasiMetric:
    n = volume.inner_exponent
    gamma = task.gamma if task.gamma is not None else volume.tail_exponent - 2.0
    if task.metric == "power":
        return build_power_metric(gamma)
    gamma_tilde = task.gamma_tilde if task.gamma_tilde is not None else max(gamma, n - 2.0)
    return build_snowflake_metric(gamma, n, gamma_tilde)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        count = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'") from None
    if count < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    return count
