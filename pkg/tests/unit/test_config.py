import math
from pathlib import Path

import numpy as np
import pytest

from src.pipelines.greencrit.classify import CriterionId
from src.pipelines.greencrit.config import (
    THREADS_ENV,
    MeasureSpec,
    ProfileSpec,
    TaskSpec,
    build_measure,
    build_metric,
    build_volume,
    load_run_config,
    parse_criterion,
    parse_override,
    shorthand_overrides,
    thread_count,
)
from src.pipelines.greencrit.errors import ConfigError
from src.pipelines.greencrit.green import MetricKind
from src.pipelines.greencrit.profiles import MeasureFamily, VolumeFamily, VolumeProfile

SAMPLE_INI = """[profile]
family = two_regime
params = 3, 4

[task]
criterion = cond-1
q = 4.5
metric = snowflake

[grid]
nodes = 512

[run]
name = sample
"""


def write_ini(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_a_file() -> None:
    config = load_run_config()
    assert config.profile.family == "euclidean"
    assert config.profile.params == (3.0,)
    assert config.measure.family == "unit"
    assert config.grid.nodes == 2048
    assert config.grid.r_min == pytest.approx(1e-3)
    assert config.task.criterion_id is CriterionId.COND_INT1B
    assert config.seed == 42
    assert config.source is None


def test_load_ini_file(tmp_path: Path) -> None:
    path = write_ini(tmp_path / "run.ini", SAMPLE_INI)
    config = load_run_config(path)
    assert config.profile.family == "two_regime"
    assert config.profile.params == (3.0, 4.0)
    assert config.task.criterion_id is CriterionId.COND_1
    assert config.task.q == pytest.approx(4.5)
    assert config.grid.nodes == 512
    assert config.name == "sample"
    assert config.source == str(path)


def test_bad_value_reports_file_and_line(tmp_path: Path) -> None:
    path = write_ini(tmp_path / "run.ini", SAMPLE_INI.replace("q = 4.5", "q = four"))
    with pytest.raises(ConfigError) as excinfo:
        load_run_config(path)
    assert excinfo.value.line == 7
    assert str(excinfo.value).startswith(f"{path}:7: task.q")


def test_unknown_section_and_key(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="unknown section"):
        load_run_config(write_ini(tmp_path / "a.ini", "[solver]\nq = 2\n"))
    with pytest.raises(ConfigError, match="unknown key"):
        load_run_config(write_ini(tmp_path / "b.ini", "[task]\nexponent = 2\n"))


def test_malformed_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError):
        load_run_config(write_ini(tmp_path / "c.ini", "[task]\nthis line has no separator\n"))
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "missing.ini")


def test_overrides_win_over_the_file(tmp_path: Path) -> None:
    path = write_ini(tmp_path / "run.ini", SAMPLE_INI)
    config = load_run_config(path, ["task.q=6", "grid.nodes=64", "task.corrupt_symmetry=yes"])
    assert config.task.q == pytest.approx(6.0)
    assert config.grid.nodes == 64
    assert config.task.corrupt_symmetry is True


def test_override_errors_name_the_override() -> None:
    with pytest.raises(ConfigError, match="<override>"):
        load_run_config(overrides=["task.q=abc"])
    with pytest.raises(ConfigError):
        parse_override("q=2")
    with pytest.raises(ConfigError):
        parse_override("solver.q=2")
    assert parse_override("Task.Q = 3") == ("task", "q", "3")


@pytest.mark.parametrize("override", ["task.q=1", "task.q_lo=0.5", "task.q_lo=5"])
def test_exponents_are_validated(override: str) -> None:
    with pytest.raises(ConfigError):
        load_run_config(overrides=[override])


@pytest.mark.parametrize(
    "override",
    ["grid.nodes=4", "grid.r_min=1e7", "profile.family=power", "measure.family=radial_power", "task.metric=cosine"],
)
def test_invalid_settings(override: str) -> None:
    with pytest.raises(ConfigError):
        load_run_config(overrides=[override])


def test_shorthand_overrides() -> None:
    overrides = shorthand_overrides("cond-int1", "powerlog:1,4,1", "radial_power:1,1", 3.5)
    assert overrides == [
        "task.criterion=cond-int1",
        "profile.family=powerlog",
        "profile.params=1,4,1",
        "measure.family=radial_power",
        "measure.params=1,1",
        "task.q=3.5",
    ]
    config = load_run_config(overrides=overrides)
    assert config.profile.params == (1.0, 4.0, 1.0)
    assert config.measure.params == (1.0, 1.0)


@pytest.mark.parametrize(
    "name, expected",
    [("cond-int1b", CriterionId.COND_INT1B), ("CondInt2", CriterionId.COND_INT2), ("LAST-2", CriterionId.LAST_2)],
)
def test_parse_criterion(name: str, expected: CriterionId) -> None:
    assert parse_criterion(name) is expected


def test_parse_criterion_rejects_unknown_names() -> None:
    with pytest.raises(ConfigError):
        parse_criterion("cond-9")


def test_build_volume_and_measure() -> None:
    volume = build_volume(ProfileSpec("powerlog", (1.0, 4.0, 2.0)))
    assert volume.family is VolumeFamily.POWER_LOG
    measure = build_measure(MeasureSpec("radial_power", (1.0, 1.0)), VolumeProfile.euclidean(3))
    assert measure.density_family is MeasureFamily.RADIAL_POWER
    with pytest.raises(ConfigError):
        build_measure(MeasureSpec("radial_power", (1.0, -3.0)), VolumeProfile.euclidean(3))
    with pytest.raises(ConfigError):
        build_volume(ProfileSpec("power", (1.0,)))


def test_build_tabulated_volume(tmp_path: Path) -> None:
    radii = np.geomspace(1e-2, 1e3, 50)
    lines = ["r,volume"] + [f"{r!r},{4 * math.pi / 3 * r**3!r}" for r in radii]
    table = tmp_path / "volume.csv"
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    volume = build_volume(ProfileSpec("tabulated", (), table))
    assert volume.family is VolumeFamily.TABULATED
    assert volume.volume(1.0) == pytest.approx(4 * math.pi / 3, rel=1e-6)


def test_build_metric_defaults() -> None:
    volume = VolumeProfile.two_regime(3, 4)
    snowflake = build_metric(TaskSpec(), volume)
    assert snowflake.kind is MetricKind.SNOWFLAKE
    assert snowflake.params["gamma"] == pytest.approx(2.0)
    assert snowflake.exponent == pytest.approx(2.0)
    power = build_metric(TaskSpec(metric="power", gamma=1.5), volume)
    assert power.kind is MetricKind.POWER_OF_DISTANCE
    assert power.exponent == pytest.approx(1.5)


def test_thread_count(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert thread_count() == 1
    monkeypatch.setenv(THREADS_ENV, "4")
    assert thread_count() == 4
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        thread_count()
