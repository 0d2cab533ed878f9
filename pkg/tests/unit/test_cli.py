from pathlib import Path
from typing import Dict, List

import pytest

from src.pipelines.greencrit.classify import Verdict
from src.pipelines.greencrit.cli import build_parser, main, selected_checks, verdict_exit_code
from src.pipelines.greencrit.errors import ConfigError
from src.pipelines.greencrit.storage import read_table

SMALL_GRID = ["--override", "grid.nodes=512"]


def run(tmp_path: Path, *args: str) -> int:
    return main([*args, "--output-dir", str(tmp_path)])


def read_report(path: Path) -> Dict[str, str]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return dict(line.split(": ", 1) for line in lines if not line.startswith("note:"))


@pytest.mark.parametrize(
    "verdict, code",
    [(Verdict.FINITE, 0), (Verdict.BOUNDED, 0), (Verdict.DIVERGENT, 1), (Verdict.UNBOUNDED, 1), (Verdict.INCONCLUSIVE, 2)],
)
def test_verdict_exit_code(verdict: Verdict, code: int) -> None:
    assert verdict_exit_code(verdict) == code


def test_parser_requires_a_command() -> None:
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["report", "--q", "3", "--override", "task.r0=2", "--override", "run.seed=1"])
    assert args.q == 3.0
    assert args.override == ["task.r0=2", "run.seed=1"]


def test_report_finite_and_divergent(tmp_path: Path) -> None:
    assert run(tmp_path, "report", "--criterion", "cond-int1b", "--profile", "euclidean:3", "--q", "4") == 0
    report = read_report(tmp_path / "report_cond-int1b.txt")
    assert report["criterion_id"] == "CondInt1b"
    assert report["verdict"] == "Finite"
    samples = read_table(tmp_path / "report_cond-int1b_samples.csv")
    assert list(samples.columns) == ["r", "integrand"]
    assert run(tmp_path, "report", "--criterion", "cond-int1b", "--profile", "euclidean:3", "--q", "2") == 1
    assert read_report(tmp_path / "report_cond-int1b.txt")["verdict"] == "Divergent"


def test_report_log_critical_profile(tmp_path: Path) -> None:
    code = run(tmp_path, "report", "--criterion", "cond-int1b", "--profile", "powerlog:1,4,1", "--q", "2", "--override", "run.name=powerlog")
    assert code == 1
    report = read_report(tmp_path / "powerlog.txt")
    assert float(report["tail_slope"]) == pytest.approx(-1.0, abs=1e-3)


def test_report_exploratory_label(tmp_path: Path) -> None:
    code = run(tmp_path, "report", "--criterion", "conjecture-2", "--profile", "power:1,4")
    assert code == 1
    assert read_report(tmp_path / "report_conjecture-2.txt")["label"] == "EXPLORATORY"


def test_scan_finds_the_critical_exponent(tmp_path: Path) -> None:
    code = run(tmp_path, "scan", "--criterion", "cond-int1b", "--profile", "euclidean:3", "--override", "task.q_lo=2", "--override", "task.q_hi=5")
    assert code == 0
    report = read_report(tmp_path / "scan_cond-int1b.txt")
    assert float(report["q_critical"]) == pytest.approx(3.0, abs=1e-3)
    grid = read_table(tmp_path / "scan_cond-int1b.csv")
    assert list(grid.columns) == ["q", "verdict"]
    assert grid["verdict"].iloc[0] == "Divergent"
    assert grid["verdict"].iloc[-1] == "Finite"


def test_scan_without_a_switch(tmp_path: Path) -> None:
    code = run(tmp_path, "scan", "--criterion", "cond-int1b", "--override", "task.q_lo=3.5", "--override", "task.q_hi=5")
    assert code == 3


def test_solve_above_the_threshold(tmp_path: Path) -> None:
    assert run(tmp_path, "solve", "--profile", "euclidean:3", "--q", "4", *SMALL_GRID) == 0
    report = read_report(tmp_path / "solve.txt")
    assert report["converged"] == "true"
    assert report["monotonicity_violations"] == "0"
    trace = read_table(tmp_path / "solve_trace.csv")
    assert list(trace.columns) == ["iter", "sup_change", "max_u"]
    assert len(trace) == int(report["iterations"])
    kernel = read_table(tmp_path / "solve_kernel.csv")
    assert list(kernel.columns) == ["rho", "weight_mu", "weight_sigma"]
    assert len(kernel) == 512
    assert (tmp_path / "solve_matrix.csv").exists()


def test_solve_below_the_threshold_is_refused(tmp_path: Path) -> None:
    assert run(tmp_path, "solve", "--profile", "euclidean:3", "--q", "2", *SMALL_GRID) == 1
    assert not (tmp_path / "solve.txt").exists()


def test_solve_with_zero_sigma(tmp_path: Path) -> None:
    assert run(tmp_path, "solve", "--q", "2", "--override", "task.sigma_scale=0", *SMALL_GRID) == 0
    report = read_report(tmp_path / "solve.txt")
    assert report["iterations"] == "1"


def test_verify_full_suite(tmp_path: Path) -> None:
    assert run(tmp_path, "verify", "--override", "grid.nodes=256", "--override", "task.trials=50") == 0
    report = read_report(tmp_path / "verify.txt")
    assert list(report) == list(selected_checks("full"))
    assert all(value.startswith("PASS") for value in report.values())
    assert (tmp_path / "verify_moser.csv").exists()
    assert len(read_table(tmp_path / "verify_kernel.csv")) == 256
    assert read_report(tmp_path / "verify_metric.txt")["kind"] == "Snowflake"


def test_verify_detects_broken_symmetry(tmp_path: Path) -> None:
    overrides: List[str] = ["--override", "grid.nodes=64", "--override", "task.suite=invariants", "--override", "task.corrupt_symmetry=true"]
    assert run(tmp_path, "verify", *overrides) == 1
    value = read_report(tmp_path / "verify.txt")["invariants"]
    assert value.startswith("FAIL")
    assert "symmetry" in value


def test_verify_moser_reference(tmp_path: Path) -> None:
    assert run(tmp_path, "verify", "--q", "2", "--override", "grid.nodes=64", "--override", "task.suite=moser") == 0
    assert "lower_bound=0.353553" in read_report(tmp_path / "verify.txt")["moser"]


def test_selected_checks() -> None:
    assert selected_checks("harnack, 3g") == ["harnack", "3g"]
    with pytest.raises(ConfigError):
        selected_checks("harnack,bogus")


def test_missing_config_file(tmp_path: Path) -> None:
    assert run(tmp_path, "report", "--config", str(tmp_path / "absent.ini")) == 5
