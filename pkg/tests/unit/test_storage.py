import math
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
import pytest

from src.pipelines.greencrit.classify import Bracket, CriterionId, CriterionReport, Verdict
from src.pipelines.greencrit.errors import ConfigError
from src.pipelines.greencrit.green import GreenRadialKernel, GridSpec, discretize
from src.pipelines.greencrit.profiles import MeasureProfile, VolumeProfile
from src.pipelines.greencrit.solver import IterationTrace, moser_constants
from src.pipelines.greencrit.storage import (
    format_value,
    read_profile_table,
    read_table,
    write_criterion_report,
    write_kernel,
    write_moser,
    write_report,
    write_scan,
    write_trace,
)


def read_report(path: Path) -> Dict[str, str]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return dict(line.split(": ", 1) for line in lines if not line.startswith("note:"))


def read_notes(path: Path) -> List[str]:
    return [line[len("note: ") :] for line in path.read_text(encoding="utf-8").splitlines() if line.startswith("note: ")]


def test_read_table_missing_file(tmp_path: Path) -> None:
    assert read_table(tmp_path / "missing.csv").empty


@pytest.mark.parametrize(
    "value, text",
    [(True, "true"), (math.inf, "inf"), (-math.inf, "-inf"), (math.nan, "nan"), (None, "none"), (0.1, "0.1"), (np.float64(2.5), "2.5")],
)
def test_format_value(value: object, text: str) -> None:
    assert format_value(value) == text


def test_report_round_trip_keeps_notes(tmp_path: Path) -> None:
    path = tmp_path / "nested" / "report.txt"
    write_report(path, [("verdict", "Finite"), ("tail_slope", -2.0), ("constant_estimate", math.inf)], ["first", "second: with colon"])
    assert read_report(path) == {"verdict": "Finite", "tail_slope": "-2", "constant_estimate": "inf"}
    assert read_notes(path) == ["first", "second: with colon"]


def test_criterion_report_layout(tmp_path: Path) -> None:
    report = CriterionReport(
        CriterionId.COND_INT2,
        1.5,
        -3.0,
        Verdict.BOUNDED,
        0.25,
        Bracket.UPPER,
        lower_value=0.125,
        upper_value=0.25,
        exploratory=True,
        notes=["upper bracket"],
    )
    path = tmp_path / "report.txt"
    write_criterion_report(path, report)
    lines = path.read_text(encoding="utf-8").splitlines()
    keys = [line.split(":", 1)[0] for line in lines]
    assert keys == [
        "criterion_id",
        "verdict",
        "truncated_value",
        "tail_slope",
        "constant_estimate",
        "bracket",
        "lower_value",
        "upper_value",
        "label",
        "note",
    ]
    assert read_report(path)["label"] == "EXPLORATORY"


def test_trace_and_moser_tables(tmp_path: Path) -> None:
    trace = IterationTrace(sup_changes=[0.5, 1e-13], max_values=[1.0, 1.25])
    write_trace(tmp_path / "trace.csv", trace)
    frame = read_table(tmp_path / "trace.csv")
    assert list(frame.columns) == ["iter", "sup_change", "max_u"]
    assert frame["iter"].tolist() == [1, 2]
    write_moser(tmp_path / "moser.csv", moser_constants(2.0, 10))
    moser = read_table(tmp_path / "moser.csv")
    assert list(moser.columns) == ["j", "partial"]
    assert len(moser) == 10


def test_scan_table(tmp_path: Path) -> None:
    write_scan(tmp_path / "scan.csv", [(2.0, "Divergent"), (4.0, "Finite")])
    assert (tmp_path / "scan.csv").read_text(encoding="utf-8") == "q,verdict\n2,Divergent\n4,Finite\n"


def test_kernel_tables(tmp_path: Path) -> None:
    dk = discretize(GreenRadialKernel(VolumeProfile.euclidean(3)), MeasureProfile.unit(), GridSpec(1.0, 128.0, 8))
    write_kernel(tmp_path / "kernel.csv", tmp_path / "matrix.csv", dk)
    nodes = read_table(tmp_path / "kernel.csv")
    assert list(nodes.columns) == ["rho", "weight_mu", "weight_sigma"]
    np.testing.assert_allclose(nodes["rho"], dk.radii, rtol=1e-11)
    matrix = pd.read_csv(tmp_path / "matrix.csv", header=None).to_numpy()
    assert matrix.shape == (8, 8)
    np.testing.assert_allclose(matrix, dk.matrix, rtol=1e-11)
    write_kernel(tmp_path / "nodes_only.csv", None, dk)
    assert len(read_table(tmp_path / "nodes_only.csv")) == 8


def test_read_profile_table(tmp_path: Path) -> None:
    good = tmp_path / "good.csv"
    good.write_text("r,volume\n1,2\n2,16\n4,128\n", encoding="utf-8")
    radii, values = read_profile_table(good)
    np.testing.assert_array_equal(radii, [1.0, 2.0, 4.0])
    np.testing.assert_array_equal(values, [2.0, 16.0, 128.0])
    bad = tmp_path / "bad.csv"
    bad.write_text("r,volume\n1,2\n2,16\n2,128\n", encoding="utf-8")
    with pytest.raises(ConfigError) as excinfo:
        read_profile_table(bad)
    assert excinfo.value.line == 4
    with pytest.raises(ConfigError):
        read_profile_table(tmp_path / "absent.csv")
