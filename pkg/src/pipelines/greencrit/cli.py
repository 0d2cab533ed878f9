from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import storage
from .classify import CriterionId, CriterionReport, Verdict
from .config import (
    RunConfig,
    build_kernel,
    build_measure,
    build_metric,
    build_volume,
    load_run_config,
    shorthand_overrides,
    thread_count,
)
from .criteria import (
    StepFunction,
    conjecture2_integral,
    critical_exponent,
    evaluate,
    hardy_check,
    hardy_integrated_check,
)
from .errors import ConfigError, GreenCritError, NonConvergenceError, PicardDivergenceError
from .green import DiscreteKernel, count_quasi_triangle_violations, discretize, estimate_3g_constant
from .profiles import VolumeProfile, check_nonparabolic
from .solver import (
    SUPERSOLUTION_TOLERANCE,
    FieldKind,
    PicardConfig,
    SolutionField,
    build_m,
    check_supersolution,
    harnack_check,
    lem_r_check,
    level_set_bound_check,
    moser_constants,
    picard_iterate,
    safe_datum,
    weighted_norm_check,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
KERNEL_CRITERIA = (CriterionId.LAST_1, CriterionId.LAST_2, CriterionId.COND_M)
METRIC_CRITERIA = (CriterionId.COND_1, CriterionId.COND_2)
SUITE = ("invariants", "lem_r", "weighted_norm", "harnack", "level_set", "moser", "hardy", "quasi_metric", "3g")
HARDY_EXPONENTS = (0.25, 0.5, 0.75)
HARDY_TRIALS = 200
TRIPLES = 10_000
MATRIX_EXPORT_NODES = 512


def verdict_exit_code(verdict: Verdict) -> int:
    if verdict.is_positive:
        return 0
    if verdict.is_negative:
        return 1
    return 2


def _stem(config: RunConfig, default: str) -> str:
    return config.name or default


def _kernel_for(config: RunConfig, volume: VolumeProfile) -> DiscreteKernel:
    measure = build_measure(config.measure, volume)
    dk = discretize(build_kernel(config, volume), measure, config.grid.grid())
    if config.task.sigma_scale != 1.0:
        dk = dk.scaled_sigma(config.task.sigma_scale)
    return dk


def _export_kernel(config: RunConfig, dk: DiscreteKernel, stem: str) -> None:
    matrix_path = None
    if dk.size <= MATRIX_EXPORT_NODES:
        matrix_path = config.output_dir / f"{stem}_matrix.csv"
    else:
        logger.info("kernel matrix with %d nodes not exported (limit %d)", dk.size, MATRIX_EXPORT_NODES)
    storage.write_kernel(config.output_dir / f"{stem}_kernel.csv", matrix_path, dk)


def criterion_params(config: RunConfig, criterion: CriterionId) -> Dict[str, Any]:
    task = config.task
    volume = build_volume(config.profile)
    params: Dict[str, Any] = {
        "volume": volume,
        "measure": build_measure(config.measure, volume),
        "r0": task.r0,
        "center_samples": task.center_samples,
        "gamma": task.gamma_tilde,
        "a": task.a,
    }
    if criterion in METRIC_CRITERIA:
        params["metric"] = build_metric(task, volume)
    if criterion in KERNEL_CRITERIA:
        params["dk"] = _kernel_for(config, volume)
    return params


def run_criterion(config: RunConfig) -> CriterionReport:
    task = config.task
    criterion = task.criterion_id
    params = criterion_params(config, criterion)
    volume = params["volume"]
    if criterion is CriterionId.COND_0:
        return check_nonparabolic(volume, task.r0)
    if criterion is CriterionId.CONJECTURE_2:
        alpha = task.alpha if task.alpha is not None else volume.tail_exponent
        return conjecture2_integral(volume, alpha, task.r0)
    return evaluate(criterion, task.q, params)


def cmd_report(config: RunConfig) -> int:
    report = run_criterion(config)
    stem = _stem(config, f"report_{config.task.criterion}")
    storage.write_criterion_report(config.output_dir / f"{stem}.txt", report)
    storage.write_samples(config.output_dir / f"{stem}_samples.csv", report.samples)
    print(f"{report.criterion_id.value}: {report.verdict.value} (tail_slope {storage.format_value(report.tail_slope)})")
    return verdict_exit_code(report.verdict)


def cmd_scan(config: RunConfig) -> int:
    task = config.task
    criterion = task.criterion_id
    params = criterion_params(config, criterion)
    grid = np.linspace(task.q_lo, task.q_hi, task.scan_points)

    def verdict_at(q: float) -> Verdict:
        return evaluate(criterion, float(q), params).verdict

    with ThreadPoolExecutor(max_workers=thread_count()) as executor:
        verdicts = list(tqdm(executor.map(verdict_at, grid), total=len(grid), desc=f"Scanning {task.criterion}", unit="q"))
    for q, verdict in zip(grid, verdicts):
        logger.info("%s q=%.4f: %s", criterion.value, q, verdict.value)
    rows = [(float(q), verdict.value) for q, verdict in zip(grid, verdicts)]
    stem = _stem(config, f"scan_{task.criterion}")
    storage.write_scan(config.output_dir / f"{stem}.csv", rows)
    scan = critical_exponent(criterion, params, task.q_lo, task.q_hi, task.tol)
    entries: List[Tuple[str, Any]] = [
        ("criterion_id", criterion.value),
        ("q_lo", task.q_lo),
        ("q_hi", task.q_hi),
        ("tol", task.tol),
        ("inconclusive", len(scan.inconclusive)),
        ("q_critical", scan.q_critical),
    ]
    storage.write_report(config.output_dir / f"{stem}.txt", entries)
    print(f"{criterion.value}: q_critical {storage.format_value(scan.q_critical)}")
    return 0


def _solve_datum(dk: DiscreteKernel, q: float, a: float) -> SolutionField:
    if not np.any(dk.weights_sigma > 0):
        return SolutionField(build_m(dk, a).values, FieldKind.DATUM, 1.0)
    return safe_datum(dk, q, a)


def cmd_solve(config: RunConfig) -> int:
    task = config.task
    volume = build_volume(config.profile)
    dk = _kernel_for(config, volume)
    stem = _stem(config, "solve")
    _export_kernel(config, dk, stem)
    datum = _solve_datum(dk, task.q, task.a)
    try:
        solution, trace = picard_iterate(dk, task.q, datum, PicardConfig(task.max_iters, task.picard_tol, safe=True))
    except (PicardDivergenceError, NonConvergenceError) as error:
        if error.trace is not None:
            storage.write_trace(config.output_dir / f"{stem}_trace.csv", error.trace)
        raise
    residual = check_supersolution(dk, solution, task.q)
    peak = float(np.max(solution.values))
    storage.write_solution(config.output_dir / f"{stem}.csv", dk.radii, solution.values)
    storage.write_trace(config.output_dir / f"{stem}_trace.csv", trace)
    entries: List[Tuple[str, Any]] = [
        ("kind", solution.kind.value),
        ("q", task.q),
        ("a", task.a),
        ("epsilon", datum.epsilon),
        ("datum_scale", trace.datum_scale),
        ("iterations", trace.iterations),
        ("converged", trace.converged),
        ("monotonicity_violations", trace.monotonicity_violations),
        ("residual", residual),
        ("max_u", peak),
    ]
    storage.write_report(config.output_dir / f"{stem}.txt", entries)
    passed = residual >= -SUPERSOLUTION_TOLERANCE * peak
    print(f"solve: {'supersolution' if passed else 'residual ' + storage.format_value(residual)} after {trace.iterations} iterations")
    return 0 if passed else 1


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


class VerifySuite:
    """Lemma checks on one discrete kernel; each returns (passed, detail)."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.task = config.task
        self.volume = build_volume(config.profile)
        self.dk = _kernel_for(config, self.volume)
        self.stem = _stem(config, "verify")

    @property
    def omega(self) -> np.ndarray:
        return build_m(self.dk, self.task.a).values ** self.task.q * self.dk.weights_sigma

    def invariants(self) -> Tuple[bool, str]:
        dk = self.dk
        if self.task.corrupt_symmetry:
            matrix = dk.matrix.copy()
            matrix[0, -1] *= 1.5
            dk = dk.with_matrix(matrix)
        failed = dk.check_invariants()
        if failed:
            return False, ", ".join(failed)
        return True, f"{dk.size} nodes"

    def lem_r(self) -> Tuple[bool, str]:
        details = []
        passed = True
        scale = float(np.max(self.dk.apply(self.dk.weights_sigma)))
        for s in self.task.s_values:
            slack = lem_r_check(self.dk, s)
            ok = slack >= -1e-9 * scale**s
            passed = passed and ok
            details.append(f"s={s:g} slack={slack:.6g}")
        return passed, "; ".join(details)

    def weighted_norm(self) -> Tuple[bool, str]:
        worst, constant = weighted_norm_check(self.dk, self.task.q, self.omega, self.task.trials, self.config.seed)
        return worst <= constant * (1 + 1e-8), f"worst={worst:.6g} constant={constant:.6g}"

    def harnack(self) -> Tuple[bool, str]:
        ratio = harnack_check(self.dk, self.omega, self.task.a)
        return ratio > 0, f"min ratio={ratio:.6g}"

    def level_set(self) -> Tuple[bool, str]:
        check = level_set_bound_check(self.dk, self.task.q, self.task.a)
        detail = f"violations={check.gp_violations} observed_c={check.observed_c:.6g} reference_ratio={check.reference_ratio:.6g}"
        return check.passed, detail

    def moser(self) -> Tuple[bool, str]:
        constants = moser_constants(self.task.q)
        storage.write_moser(self.config.output_dir / f"{self.stem}_moser.csv", constants)
        settled = abs(constants.partial[-1] - constants.partial[-2]) < 1e-8
        above = constants.limit_estimate >= constants.lower_bound * (1 - 1e-9)
        return settled and above, f"limit_estimate={constants.limit_estimate:.6f} lower_bound={constants.lower_bound:.6f}"

    def hardy(self) -> Tuple[bool, str]:
        rng = np.random.default_rng(self.config.seed)
        worst = 0.0
        for _ in range(HARDY_TRIALS):
            pieces = int(rng.integers(1, 12))
            breaks = tuple(np.cumsum(np.exp(rng.uniform(-3.0, 3.0, pieces))))
            values = tuple(np.sort(np.exp(rng.uniform(-4.0, 4.0, pieces)))[::-1])
            phi = StepFunction(breaks, values)
            start = float(breaks[0]) * float(rng.uniform(0.1, 2.0))
            for s in HARDY_EXPONENTS:
                for lhs, rhs, _ in (hardy_check(phi, s, start), hardy_integrated_check(phi, s, start)):
                    if rhs > 0:
                        worst = max(worst, lhs / rhs)
                    elif lhs > 0:
                        worst = math.inf
        return worst <= 1 + 1e-9, f"worst lhs/rhs={worst:.6g} over {HARDY_TRIALS} step functions"

    def quasi_metric(self) -> Tuple[bool, str]:
        metric = build_metric(self.task, self.volume)
        storage.write_metric_report(self.config.output_dir / f"{self.stem}_metric.txt", metric)
        violations = count_quasi_triangle_violations(metric, TRIPLES, self.config.seed)
        return violations == 0, f"kind={metric.kind.value} kappa={metric.kappa:.6g} violations={violations}"

    def three_g(self) -> Tuple[bool, str]:
        kernel = self.dk.kernel
        kappa = estimate_3g_constant(kernel.values)
        return math.isfinite(kappa) and kappa >= 1, f"kappa={kappa:.6g}"

    def checks(self) -> Dict[str, Callable[[], Tuple[bool, str]]]:
        return {
            "invariants": self.invariants,
            "lem_r": self.lem_r,
            "weighted_norm": self.weighted_norm,
            "harnack": self.harnack,
            "level_set": self.level_set,
            "moser": self.moser,
            "hardy": self.hardy,
            "quasi_metric": self.quasi_metric,
            "3g": self.three_g,
        }


def selected_checks(suite: str) -> List[str]:
    if suite in ("full", "all"):
        return list(SUITE)
    names = [name.strip() for name in suite.split(",") if name.strip()]
    unknown = [name for name in names if name not in SUITE]
    if unknown:
        raise ConfigError(f"task.suite: unknown checks {', '.join(unknown)}")
    return names


def cmd_verify(config: RunConfig) -> int:
    names = selected_checks(config.task.suite)
    suite = VerifySuite(config)
    _export_kernel(config, suite.dk, suite.stem)
    checks = suite.checks()
    results: List[CheckResult] = []
    for name in tqdm(names, desc="Verifying", unit="check"):
        try:
            passed, detail = checks[name]()
        except GreenCritError as error:
            passed, detail = False, str(error)
        result = CheckResult(name, passed, detail)
        if not passed:
            tqdm.write(f"Check '{name}' failed: {detail}")
        logger.info(result.line())
        results.append(result)
    for result in results:
        print(result.line())
    storage.write_report(
        config.output_dir / f"{suite.stem}.txt",
        [(result.name, f"{'PASS' if result.passed else 'FAIL'} {result.detail}") for result in results],
    )
    return 0 if all(result.passed for result in results) else 1


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "report": cmd_report,
    "scan": cmd_scan,
    "solve": cmd_solve,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greencrit", description="Existence criteria for u = G(u^q dsigma) + h on model manifolds.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="INI run configuration.")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE", help="Override one config value.")
    common.add_argument("--criterion", default=None, help="Criterion name, e.g. cond-int1b.")
    common.add_argument("--profile", default=None, metavar="FAMILY:P1,P2", help="Volume profile, e.g. euclidean:3.")
    common.add_argument("--measure", default=None, metavar="FAMILY:P1,P2", help="Density of sigma, e.g. radial_power:1,-1.")
    common.add_argument("--q", type=float, default=None, help="Nonlinearity exponent q > 1.")
    common.add_argument("--output-dir", type=Path, default=None, help="Directory for report and CSV files.")
    common.add_argument("--log-level", default="WARNING", help="Logging level (default WARNING).")
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("report", parents=[common], help="Evaluate one criterion.")
    subparsers.add_parser("scan", parents=[common], help="Locate the critical exponent of a criterion.")
    subparsers.add_parser("solve", parents=[common], help="Construct a solution by delta-scaled (safe-regime) Picard iteration.")
    subparsers.add_parser("verify", parents=[common], help="Run the lemma verification suite.")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING), format=LOG_FORMAT)
    overrides = shorthand_overrides(args.criterion, args.profile, args.measure, args.q) + list(args.override)
    if args.output_dir is not None:
        overrides.append(f"run.output_dir={args.output_dir}")
    try:
        config = load_run_config(args.config, overrides)
        return COMMANDS[args.command](config)
    except GreenCritError as error:
        logger.error("%s failed: %s", args.command, error)
        print(f"error: {error}", file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
