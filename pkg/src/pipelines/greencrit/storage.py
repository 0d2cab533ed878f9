from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError

FLOAT_FORMAT = "%.12g"


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return FLOAT_FORMAT % value
    if value is None:
        return "none"
    return str(value)


def write_report(path: Path, entries: Sequence[Tuple[str, Any]], notes: Iterable[str] = ()) -> None:
    """Fixed-order ``key: value`` text report followed by ``note:`` lines."""
    lines = [f"{key}: {format_value(value)}" for key, value in entries]
    lines.extend(f"note: {note}" for note in notes)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def report_entries(report: Any) -> List[Tuple[str, Any]]:
    entries: List[Tuple[str, Any]] = list(report.fields())
    if report.lower_value is not None:
        entries.append(("lower_value", report.lower_value))
    if report.upper_value is not None:
        entries.append(("upper_value", report.upper_value))
    if report.exploratory:
        entries.append(("label", "EXPLORATORY"))
    return entries


def write_criterion_report(path: Path, report: Any) -> None:
    write_report(path, report_entries(report), report.notes)


def write_table(path: Path, frame: pd.DataFrame, header: bool = True) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, header=header, lineterminator="\n", float_format=FLOAT_FORMAT)


def read_table(path: Path) -> pd.DataFrame:
    if not path.exists():
        return pd.DataFrame()
    return pd.read_csv(path)


def read_profile_table(path: Optional[Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Two numeric columns (r, value) with strictly increasing r."""
    if path is None:
        raise ConfigError("tabulated profile needs a table path")
    if not path.exists():
        raise ConfigError("table file not found", str(path))
    frame = read_table(path)
    if frame.shape[1] != 2:
        raise ConfigError(f"expected two columns, got {frame.shape[1]}", str(path))
    try:
        data = frame.astype(float).to_numpy()
    except ValueError:
        raise ConfigError("table must be numeric", str(path)) from None
    radii = data[:, 0]
    if np.any(np.diff(radii) <= 0):
        bad = int(np.argmax(np.diff(radii) <= 0)) + 3
        raise ConfigError("radii must be strictly increasing", str(path), bad)
    return radii, data[:, 1]


def write_samples(path: Path, samples: Optional[Tuple[np.ndarray, np.ndarray]]) -> None:
    radii, values = samples if samples is not None else (np.empty(0), np.empty(0))
    write_table(path, pd.DataFrame({"r": radii, "integrand": values}))


def write_kernel(path: Path, matrix_path: Optional[Path], dk: Any) -> None:
    write_table(path, pd.DataFrame({"rho": dk.radii, "weight_mu": dk.weights_mu, "weight_sigma": dk.weights_sigma}))
    if matrix_path is not None:
        write_table(matrix_path, pd.DataFrame(dk.matrix), header=False)


def write_trace(path: Path, trace: Any) -> None:
    write_table(path, pd.DataFrame(trace.rows(), columns=["iter", "sup_change", "max_u"]))


def write_moser(path: Path, constants: Any) -> None:
    write_table(path, pd.DataFrame(constants.rows(), columns=["j", "partial"]))


def write_scan(path: Path, grid: Sequence[Tuple[float, str]]) -> None:
    write_table(path, pd.DataFrame(list(grid), columns=["q", "verdict"]))


def write_solution(path: Path, radii: np.ndarray, values: np.ndarray) -> None:
    write_table(path, pd.DataFrame({"rho": radii, "u": values}))


def write_metric_report(path: Path, metric: Any) -> None:
    write_report(path, metric.report_fields())
