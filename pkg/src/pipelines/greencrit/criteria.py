from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .classify import (
    Bracket,
    ClassifierConfig,
    CriterionId,
    CriterionReport,
    IntegralClassification,
    SupConfig,
    TailForm,
    Verdict,
    classify_integral,
    classify_sup,
    decide_slope,
    fit_tail_slope,
    sup_grid,
    with_r_max,
)
from .errors import BracketError, DivergenceError, PreconditionError
from .green import DiscreteKernel, GreenRadialKernel, MetricKind, QuasiMetric
from .profiles import (
    MeasureFamily,
    MeasureProfile,
    SigmaBallTable,
    VolumeProfile,
    is_parabolic,
    sigma_ball_form,
    sigma_ball_values,
)
from .quadrature import GAUSS_ORDER, gauss_nodes, integrate_to_infinity, log_grid

logger = logging.getLogger(__name__)

LOCAL_DECADES = 12
LOCAL_PER_DECADE = 16
COND2_REACH = 1e6


def _require_q(q: float) -> None:
    if not q > 1:
        raise PreconditionError(f"q must exceed 1, got {q}")


def _require_r0(r0: float) -> None:
    if not r0 > 0:
        raise PreconditionError(f"r0 must be positive, got {r0}")


def _integral_report(criterion: CriterionId, result: IntegralClassification, exploratory: bool = False) -> CriterionReport:
    return CriterionReport(
        criterion,
        result.value,
        result.slope,
        result.verdict,
        exploratory=exploratory,
        samples=(result.radii, result.values),
    )


def _local_ratio_diverges(measure: MeasureProfile) -> bool:
    return measure.density_family is MeasureFamily.RADIAL_POWER and measure.m_exponent <= -2.0


def _volume_values(volume: VolumeProfile, r: np.ndarray) -> np.ndarray:
    return np.asarray(volume.volume(r), dtype=float)


def _times(*forms: Optional[TailForm]) -> Optional[TailForm]:
    if any(form is None for form in forms):
        return None
    result = TailForm(0.0)
    for form in forms:
        result = result.times(form)
    return result


def eval_cond_int1(
    volume: VolumeProfile,
    measure: MeasureProfile,
    q: float,
    r0: float = 1.0,
    config: Optional[ClassifierConfig] = None,
) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    kernel = GreenRadialKernel(volume)
    cfg = with_r_max(config, volume.support_max)

    def integrand(r: np.ndarray) -> np.ndarray:
        return kernel.values(r) ** (q - 1) * sigma_ball_values(volume, measure, r) / _volume_values(volume, r) * r

    volume_form = volume.asymptotic_form
    form = _times(
        kernel.form.raised(q - 1),
        sigma_ball_form(volume, measure),
        None if volume_form is None else volume_form.inverse(),
        TailForm(1.0),
    )
    report = _integral_report(CriterionId.COND_INT1, classify_integral(integrand, r0, form, cfg))
    if _local_ratio_diverges(measure):
        report.verdict = Verdict.DIVERGENT
        report.notes.append(
            f"density exponent m={measure.m_exponent:g} makes the centred local integral diverge; no constant bounds it"
        )
    logger.info("CondInt1 q=%g: %s (slope %.4f)", q, report.verdict.value, report.tail_slope)
    return report


def eval_cond_int1a(volume: VolumeProfile, q: float, r0: float = 1.0, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    kernel = GreenRadialKernel(volume)
    cfg = with_r_max(config, volume.support_max)

    def integrand(r: np.ndarray) -> np.ndarray:
        return kernel.values(r) ** (q - 1) * r

    form = kernel.form.raised(q - 1).shifted(1.0)
    report = _integral_report(CriterionId.COND_INT1A, classify_integral(integrand, r0, form, cfg))
    logger.info("CondInt1a q=%g: %s", q, report.verdict.value)
    return report


def _cond_int1b_form(volume: VolumeProfile, q: float) -> Optional[TailForm]:
    volume_form = volume.asymptotic_form
    if volume_form is None:
        return None
    return volume_form.raised(-(q - 1)).shifted(2 * q - 1)


def _power_volume_integral(
    criterion: CriterionId,
    volume: VolumeProfile,
    q: float,
    r0: float,
    config: Optional[ClassifierConfig],
    exploratory: bool,
) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    if is_parabolic(volume):
        raise DivergenceError(f"{volume.family.value} profile is parabolic")
    cfg = with_r_max(config, volume.support_max)

    def integrand(r: np.ndarray) -> np.ndarray:
        return r ** (2 * q - 1) / _volume_values(volume, r) ** (q - 1)

    return _integral_report(criterion, classify_integral(integrand, r0, _cond_int1b_form(volume, q), cfg), exploratory)


def eval_cond_int1b(volume: VolumeProfile, q: float, r0: float = 1.0, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    report = _power_volume_integral(CriterionId.COND_INT1B, volume, q, r0, config, False)
    logger.info("CondInt1b q=%g: %s (slope %.4f)", q, report.verdict.value, report.tail_slope)
    return report


def conjecture1_integral(volume: VolumeProfile, q: float, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    report = _power_volume_integral(CriterionId.CONJECTURE_1, volume, q, 1.0, config, True)
    report.notes.append("exploratory: divergence is conjectured, not proved, to exclude solutions")
    return report


def conjecture2_integral(volume: VolumeProfile, alpha: float, r0: float = 1.0, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    if alpha <= 2:
        raise PreconditionError(f"alpha must exceed 2, got {alpha}")
    _require_r0(r0)
    kernel = GreenRadialKernel(volume)
    exponent = alpha / (alpha - 2)
    cfg = with_r_max(config, volume.support_max)

    def integrand(r: np.ndarray) -> np.ndarray:
        return kernel.values(r) ** exponent * np.asarray(volume.surface_density(r), dtype=float)

    form = _times(kernel.form.raised(exponent), volume.derivative_form)
    report = _integral_report(CriterionId.CONJECTURE_2, classify_integral(integrand, r0, form, cfg), exploratory=True)
    report.notes.append("exploratory: the predicted verdict is Divergent")
    return report


def _metric_for_pushforward(metric: QuasiMetric) -> None:
    if metric.kind is MetricKind.INVERSE_R:
        raise PreconditionError("d~-ball criteria need a snowflake or power-of-distance metric")


def _metric_reach(metric: QuasiMetric, volume: VolumeProfile) -> float:
    if volume.support_max == math.inf:
        return math.inf
    return float(metric.distance(np.array([volume.support_max]))[0])


def eval_cond1(
    volume: VolumeProfile,
    measure: MeasureProfile,
    metric: QuasiMetric,
    q: float,
    r0: float = 1.0,
    gamma: Optional[float] = None,
    config: Optional[ClassifierConfig] = None,
) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    _metric_for_pushforward(metric)
    exponent = metric.exponent if gamma is None else gamma
    cfg = with_r_max(config, _metric_reach(metric, volume))

    def integrand(t: np.ndarray) -> np.ndarray:
        return sigma_ball_values(volume, measure, metric.radius_of(t)) / t ** (exponent * q + 1)

    ball_form = sigma_ball_form(volume, measure)
    form = None
    if ball_form is not None:
        form = TailForm(ball_form.power / metric.far_exponent, ball_form.log_power, ball_form.loglog_power)
        form = form.shifted(-(exponent * q + 1))
    report = _integral_report(CriterionId.COND_1, classify_integral(integrand, r0, form, cfg))
    logger.info("Cond1 q=%g: %s (slope %.4f)", q, report.verdict.value, report.tail_slope)
    return report


def _local_nodes() -> Tuple[np.ndarray, np.ndarray]:
    """Nodes u and weights on (0, 1] for integrals of the form int_0^r f(s) ds = r int_0^1 f(ru) du."""
    edges = log_grid(10.0**-LOCAL_DECADES, 1.0, LOCAL_PER_DECADE)
    return gauss_nodes(edges)


def _inner_piece(values: np.ndarray, s_nodes: np.ndarray) -> np.ndarray:
    """Power-law estimate of the integral below the first s node, row-wise; inf when it diverges."""
    first, second = values[..., 0], values[..., GAUSS_ORDER]
    s0, s1 = s_nodes[..., 0], s_nodes[..., GAUSS_ORDER]
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.log((second * s1) / (first * s0)) / np.log(s1 / s0)
        piece = np.where(first > 0, first * s0 / slope, 0.0)
    return np.where((first > 0) & ~(slope > 0), np.inf, piece)


@dataclass
class SupBracket:
    radii: np.ndarray
    lower: np.ndarray
    upper: Optional[np.ndarray]
    notes: List[str] = field(default_factory=list)


def _bracketed_local_sup(
    volume: VolumeProfile,
    measure: MeasureProfile,
    radii: np.ndarray,
    ball_radius: Callable[[np.ndarray], np.ndarray],
    centred: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    off_centre: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float], np.ndarray],
    center_samples: int,
) -> SupBracket:
    """Centred lower bracket and annulus upper bracket of sup_x int_0^r f(sigma(B(x, s))) ds."""
    if center_samples < 1:
        raise PreconditionError(f"center_samples must be positive, got {center_samples}")
    u_nodes, u_weights = _local_nodes()
    s_nodes = radii[:, None] * u_nodes[None, :]
    weights = radii[:, None] * u_weights[None, :]
    ball = np.asarray(ball_radius(s_nodes), dtype=float)
    outer = np.asarray(ball_radius(radii), dtype=float)
    table = SigmaBallTable(volume, measure, float(ball.min()), 2.0 * float(outer.max()))
    values = centred(s_nodes, ball, table(ball))
    lower = np.sum(values * weights, axis=1) + _inner_piece(values, s_nodes)
    homogeneity = volume.homogeneity_constant
    notes: List[str] = []
    if homogeneity is None:
        notes.append("profile is not homogeneous: only the centred lower bracket is available")
        return SupBracket(radii, lower, None, notes)
    upper = lower.copy()
    for theta in np.linspace(0.0, 1.0, center_samples):
        centre = theta * outer[:, None]
        annulus = table(centre + ball) - table(np.maximum(centre - ball, 0.0))
        density_cap = measure.max_density(np.maximum(centre - ball, 0.0), centre + ball)
        values = off_centre(s_nodes, ball, annulus, density_cap, homogeneity)
        candidate = np.sum(values * weights, axis=1) + _inner_piece(values, s_nodes)
        upper = np.maximum(upper, candidate)
    notes.append(f"upper bracket from the homogeneous volume bound D={homogeneity:g} over {center_samples} centres")
    return SupBracket(radii, lower, upper, notes)


def _sup_report(
    criterion: CriterionId,
    bracket: SupBracket,
    normaliser: np.ndarray,
    config: Optional[SupConfig],
) -> CriterionReport:
    radii = bracket.radii
    lower_ratio = bracket.lower / normaliser
    lower_verdict, lower_constant, lower_slope = classify_sup(radii, lower_ratio, config)
    if bracket.upper is None:
        report = CriterionReport(
            criterion,
            float(np.max(bracket.lower)),
            lower_slope,
            lower_verdict,
            lower_constant,
            Bracket.LOWER,
            lower_value=lower_constant,
            notes=list(bracket.notes),
            samples=(radii, lower_ratio),
        )
        return report
    upper_ratio = bracket.upper / normaliser
    upper_verdict, upper_constant, upper_slope = classify_sup(radii, upper_ratio, config)
    # the centred value bounds the sup from below
    if lower_verdict is Verdict.UNBOUNDED:
        verdict, constant, slope, side = Verdict.UNBOUNDED, lower_constant, lower_slope, Bracket.LOWER
    elif upper_verdict is Verdict.BOUNDED:
        verdict, constant, slope, side = Verdict.BOUNDED, upper_constant, upper_slope, Bracket.UPPER
    else:
        verdict, constant, slope, side = Verdict.INCONCLUSIVE, upper_constant, upper_slope, Bracket.UPPER
    return CriterionReport(
        criterion,
        float(np.max(bracket.upper)),
        slope,
        verdict,
        constant,
        side,
        lower_value=lower_constant,
        upper_value=upper_constant,
        notes=list(bracket.notes),
        samples=(radii, upper_ratio if side is Bracket.UPPER else lower_ratio),
    )


def eval_cond_int2(
    volume: VolumeProfile,
    measure: MeasureProfile,
    q: float,
    r0: float = 1.0,
    center_samples: int = 8,
    r_hi: Optional[float] = None,
    config: Optional[SupConfig] = None,
) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    kernel = GreenRadialKernel(volume)
    upper_radius = min(r_hi or r0 * 1e4, volume.support_max / 2)
    radii = sup_grid(r0, upper_radius, config)

    def centred(s: np.ndarray, ball: np.ndarray, mass: np.ndarray) -> np.ndarray:
        return mass / _volume_values(volume, ball) * s

    def off_centre(s: np.ndarray, ball: np.ndarray, annulus: np.ndarray, cap: np.ndarray, homogeneity: float) -> np.ndarray:
        return np.minimum(annulus * homogeneity / _volume_values(volume, ball), cap) * s

    bracket = _bracketed_local_sup(volume, measure, radii, np.asarray, centred, off_centre, center_samples)
    if _local_ratio_diverges(measure):
        bracket.notes.append(f"density exponent m={measure.m_exponent:g} makes the local integral diverge")
    report = _sup_report(CriterionId.COND_INT2, bracket, kernel.values(radii) ** -(q - 1), config)
    logger.info("CondInt2 q=%g: %s (%s, C=%.6g)", q, report.verdict.value, report.bracket.value, report.constant_estimate)
    return report


def eval_cond2(
    volume: VolumeProfile,
    measure: MeasureProfile,
    metric: QuasiMetric,
    q: float,
    r0: float = 1.0,
    center_samples: int = 8,
    gamma: Optional[float] = None,
    r_hi: Optional[float] = None,
    config: Optional[SupConfig] = None,
) -> CriterionReport:
    _require_q(q)
    _require_r0(r0)
    _metric_for_pushforward(metric)
    exponent = metric.exponent if gamma is None else gamma
    reach = math.inf
    if volume.support_max < math.inf:
        reach = float(metric.distance(np.array([volume.support_max / 2]))[0])
    radii = sup_grid(r0, min(r_hi or r0 * COND2_REACH, reach), config)

    def centred(s: np.ndarray, ball: np.ndarray, mass: np.ndarray) -> np.ndarray:
        return mass / s ** (exponent + 1)

    def off_centre(s: np.ndarray, ball: np.ndarray, annulus: np.ndarray, cap: np.ndarray, homogeneity: float) -> np.ndarray:
        return np.minimum(annulus, cap * homogeneity * _volume_values(volume, ball)) / s ** (exponent + 1)

    bracket = _bracketed_local_sup(volume, measure, radii, metric.radius_of, centred, off_centre, center_samples)
    report = _sup_report(CriterionId.COND_2, bracket, radii ** (exponent * (q - 1)), config)
    logger.info("Cond2 q=%g: %s (%s, C=%.6g)", q, report.verdict.value, report.bracket.value, report.constant_estimate)
    return report


def small_scale_integral(volume: VolumeProfile, measure: MeasureProfile, metric: QuasiMetric, gamma: Optional[float] = None) -> float:
    _metric_for_pushforward(metric)
    exponent = metric.exponent if gamma is None else gamma
    u_nodes, u_weights = _local_nodes()
    ball = metric.radius_of(u_nodes)
    mass = sigma_ball_values(volume, measure, ball)
    values = mass / u_nodes ** (exponent + 1)
    return float(values @ u_weights + _inner_piece(values, u_nodes))


def _tail_check(
    dk: DiscreteKernel,
    values: np.ndarray,
    form: Optional[TailForm],
    config: Optional[ClassifierConfig],
) -> Tuple[float, Verdict, float]:
    """Slope, verdict and extrapolated integral beyond r_max of a per-node radial integrand."""
    top = dk.radii >= dk.r_max / 10 * (1 - 1e-12)
    slope = fit_tail_slope(dk.radii[top], values[top], form)
    verdict = decide_slope(slope, form, config)
    tail = math.inf
    if verdict is Verdict.FINITE:
        tail = float(values[-1] * dk.r_max / (-slope - 1.0))
    return slope, verdict, tail


def _node_density(dk: DiscreteKernel) -> np.ndarray:
    return np.asarray(dk.measure.density(dk.radii), dtype=float) * np.asarray(
        dk.kernel.profile.surface_density(dk.radii), dtype=float
    )


def _density_form(dk: DiscreteKernel) -> Optional[TailForm]:
    return _times(dk.measure.asymptotic_form, dk.kernel.profile.derivative_form)


def _require_cap(dk: DiscreteKernel, a: float) -> None:
    if not a > 0:
        raise PreconditionError(f"a must be positive, got {a}")
    if not dk.green_values[-1] < 1.0 / a:
        raise PreconditionError(f"grid end r_max={dk.r_max:g} is too small: R(r_max) must be below 1/a")


def capped_green(dk: DiscreteKernel, a: float) -> np.ndarray:
    return np.minimum(dk.green_values, 1.0 / a)


def eval_last1(dk: DiscreteKernel, q: float, a: float, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    _require_q(q)
    _require_cap(dk, a)
    m = capped_green(dk, a)
    grid_sum = float(np.sum(m**q * dk.weights_sigma))
    density = _node_density(dk)
    form = _times(dk.kernel.form.raised(q), _density_form(dk))
    slope, verdict, tail = _tail_check(dk, m**q * density, form, config)
    value = grid_sum + tail if math.isfinite(tail) else grid_sum
    report = CriterionReport(CriterionId.LAST_1, value, slope, verdict)
    report.samples = (dk.radii, m**q * density)
    logger.info("Last1 q=%g: %s (slope %.4f)", q, verdict.value, slope)
    return report


def default_level_grid(dk: DiscreteKernel, a: float, config: Optional[SupConfig] = None) -> np.ndarray:
    """Levels r > a whose level sets A(o, r) are nonempty and end inside the grid."""
    cfg = config or SupConfig()
    lo = max(1.01 * a, 1.01 / dk.green_values[0])
    hi = 1.0 / (1.01 * dk.green_values[-1])
    return sup_grid(lo, hi, cfg)


def eval_last2(
    dk: DiscreteKernel,
    q: float,
    a: float,
    r_grid: Optional[Sequence[float]] = None,
    config: Optional[SupConfig] = None,
) -> CriterionReport:
    _require_q(q)
    _require_cap(dk, a)
    levels = default_level_grid(dk, a, config) if r_grid is None else np.asarray(r_grid, dtype=float)
    if np.any(levels <= a):
        raise PreconditionError(f"every level r must exceed a={a:g}")
    potentials = dk.level_set_potentials()
    sups = np.zeros_like(levels)
    notes: List[str] = []
    for index, level in enumerate(levels):
        size = dk.level_set_size(level)
        if size == 0:
            continue
        column = potentials[:, size - 1]
        best = int(np.argmax(column))
        sups[index] = column[best]
        if dk.radii[best] > 2 * dk.radii[size - 1]:
            notes.append(f"maximiser at rho={dk.radii[best]:.4g} lies outside twice the level-set radius for r={level:.4g}")
    if notes:
        logger.warning("Last2: %d levels have a far maximiser", len(notes))
    ratios = sups / levels ** (q - 1)
    verdict, constant, slope = classify_sup(levels, ratios, config)
    report = CriterionReport(CriterionId.LAST_2, float(np.max(sups)), slope, verdict, constant, notes=notes)
    report.samples = (levels, ratios)
    logger.info("Last2 q=%g: %s (C=%.6g)", q, verdict.value, constant)
    return report


@dataclass
class CondMResult:
    report: CriterionReport
    potential: np.ndarray
    tail: float


def cond_m_potential(dk: DiscreteKernel, q: float, a: float, config: Optional[ClassifierConfig] = None) -> CondMResult:
    """t = G(m^q dsigma) on the grid plus the constant contribution of the sigma-mass beyond r_max."""
    _require_q(q)
    _require_cap(dk, a)
    m = capped_green(dk, a)
    density = _node_density(dk)
    form = _times(dk.kernel.form.raised(q + 1), _density_form(dk))
    slope, tail_verdict, tail = _tail_check(dk, dk.green_values ** (q + 1) * density, form, config)
    potential = dk.potential(m**q)
    if tail_verdict is not Verdict.FINITE:
        verdict = Verdict.UNBOUNDED if tail_verdict is Verdict.DIVERGENT else Verdict.INCONCLUSIVE
        report = CriterionReport(CriterionId.COND_M, math.inf, slope, verdict, math.inf)
        report.notes.append("the potential of the sigma-mass beyond the grid diverges")
        return CondMResult(report, potential, tail)
    total = potential + tail
    ratios = total / m
    verdict, constant, _ = classify_sup(dk.radii, ratios)
    report = CriterionReport(CriterionId.COND_M, float(np.max(total)), slope, verdict, constant)
    report.samples = (dk.radii, ratios)
    return CondMResult(report, total, tail)


def eval_cond_m(dk: DiscreteKernel, q: float, a: float, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    result = cond_m_potential(dk, q, a, config)
    logger.info("CondM q=%g: %s (C=%.6g)", q, result.report.verdict.value, result.report.constant_estimate)
    return result.report


Evaluator = Callable[[float, Dict[str, Any]], CriterionReport]


def _unit(params: Dict[str, Any]) -> MeasureProfile:
    return params.get("measure") or MeasureProfile.unit()


EVALUATORS: Dict[CriterionId, Evaluator] = {
    CriterionId.COND_INT1: lambda q, p: eval_cond_int1(p["volume"], _unit(p), q, p.get("r0", 1.0)),
    CriterionId.COND_INT1A: lambda q, p: eval_cond_int1a(p["volume"], q, p.get("r0", 1.0)),
    CriterionId.COND_INT1B: lambda q, p: eval_cond_int1b(p["volume"], q, p.get("r0", 1.0)),
    CriterionId.COND_INT2: lambda q, p: eval_cond_int2(p["volume"], _unit(p), q, p.get("r0", 1.0), p.get("center_samples", 8)),
    CriterionId.COND_1: lambda q, p: eval_cond1(p["volume"], _unit(p), p["metric"], q, p.get("r0", 1.0), p.get("gamma")),
    CriterionId.COND_2: lambda q, p: eval_cond2(
        p["volume"], _unit(p), p["metric"], q, p.get("r0", 1.0), p.get("center_samples", 8), p.get("gamma")
    ),
    CriterionId.LAST_1: lambda q, p: eval_last1(p["dk"], q, p["a"]),
    CriterionId.LAST_2: lambda q, p: eval_last2(p["dk"], q, p["a"]),
    CriterionId.COND_M: lambda q, p: eval_cond_m(p["dk"], q, p["a"]),
    CriterionId.CONJECTURE_1: lambda q, p: conjecture1_integral(p["volume"], q),
}


def evaluate(criterion_id: CriterionId, q: float, params: Dict[str, Any]) -> CriterionReport:
    try:
        evaluator = EVALUATORS[criterion_id]
    except KeyError:
        raise PreconditionError(f"criterion {criterion_id.value} does not take an exponent q") from None
    return evaluator(q, params)


@dataclass
class ExponentScan:
    criterion_id: CriterionId
    q_lo: float
    q_hi: float
    q_critical: float
    verdict_map: List[Tuple[float, Verdict]] = field(default_factory=list)
    inconclusive: List[float] = field(default_factory=list)


def critical_exponent(
    criterion_id: CriterionId,
    params: Dict[str, Any],
    q_lo: float,
    q_hi: float,
    tol: float = 1e-3,
) -> ExponentScan:
    """Bisection for the q where the verdict switches between its negative and positive values."""
    if not 1 < q_lo < q_hi:
        raise PreconditionError(f"scan bracket must satisfy 1 < q_lo < q_hi, got [{q_lo}, {q_hi}]")
    if tol <= 0:
        raise PreconditionError(f"tol must be positive, got {tol}")
    history: List[Tuple[float, Verdict]] = []
    low_verdict = evaluate(criterion_id, q_lo, params).verdict
    high_verdict = evaluate(criterion_id, q_hi, params).verdict
    history.extend([(q_lo, low_verdict), (q_hi, high_verdict)])
    if Verdict.INCONCLUSIVE in (low_verdict, high_verdict) or low_verdict.is_positive == high_verdict.is_positive:
        raise BracketError(
            f"{criterion_id.value} verdicts at q={q_lo:g} ({low_verdict.value}) and q={q_hi:g} ({high_verdict.value}) do not bracket a switch"
        )
    positive_high = high_verdict.is_positive
    inconclusive: List[float] = []
    lo, hi = q_lo, q_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        verdict = evaluate(criterion_id, mid, params).verdict
        history.append((mid, verdict))
        logger.debug("bisection %s q=%.6f: %s", criterion_id.value, mid, verdict.value)
        if verdict is Verdict.INCONCLUSIVE:
            inconclusive.append(mid)
            moves_high = positive_high
        else:
            moves_high = verdict.is_positive == positive_high
        if moves_high:
            hi = mid
        else:
            lo = mid
    scan = ExponentScan(criterion_id, q_lo, q_hi, 0.5 * (lo + hi), sorted(history), inconclusive)
    logger.info("critical exponent of %s: %.6f", criterion_id.value, scan.q_critical)
    return scan


@dataclass(frozen=True)
class StepFunction:
    """Non-increasing step function: values[k] on [breaks[k-1], breaks[k]) with breaks[-1] = 0, zero after the last break."""

    breaks: Tuple[float, ...]
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        breaks = np.asarray(self.breaks, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if breaks.ndim != 1 or breaks.shape != values.shape or breaks.size == 0:
            raise PreconditionError("step function needs matching non-empty breaks and values")
        if breaks[0] <= 0 or np.any(np.diff(breaks) <= 0):
            raise PreconditionError("step breaks must be positive and strictly increasing")
        if np.any(values < 0):
            raise PreconditionError("step values must be non-negative")
        if np.any(np.diff(values) > 0):
            raise PreconditionError("step function must be non-increasing")

    def __call__(self, t: float) -> float:
        index = int(np.searchsorted(np.asarray(self.breaks), t, side="right"))
        return self.values[index] if index < len(self.values) else 0.0

    def pieces(self, lower: float) -> List[Tuple[float, float, float]]:
        result = []
        start = 0.0
        for end, value in zip(self.breaks, self.values):
            if end > lower:
                result.append((max(start, lower), end, value))
            start = end
        return result


DecreasingFunction = Union[StepFunction, Callable[[float], float]]


def hardy_constant(s: float) -> float:
    return s * 2.0 ** (1 - s) * max((4.0 / 3.0) ** (1 - s), 3.0**s / (2 * s))


def _require_exponent(s: float) -> None:
    if not 0 < s < 1:
        raise PreconditionError(f"s must lie in (0, 1), got {s}")


def _check_decreasing(phi: Callable[[float], float], lower: float) -> None:
    samples = np.geomspace(max(lower, 1e-6), max(lower, 1e-6) * 1e6, 200)
    values = np.array([phi(float(t)) for t in samples])
    if np.any(values < 0) or np.any(np.diff(values) > 1e-12 * np.max(np.abs(values))):
        raise PreconditionError("phi must be non-negative and non-increasing")


def _moment(phi: DecreasingFunction, lower: float, power: float, exponent: float) -> float:
    if isinstance(phi, StepFunction):
        total = 0.0
        for start, end, value in phi.pieces(lower):
            if value > 0:
                total += value**power * (end ** (exponent + 1) - start ** (exponent + 1)) / (exponent + 1)
        return total
    return integrate_to_infinity(lambda t: phi(t) ** power * t**exponent, lower)


def hardy_check(phi: DecreasingFunction, s: float, r: float) -> Tuple[float, float, float]:
    """Both sides of (int_r phi t dt)^s <= C(s) (int_r phi^s t^(2s-1) dt + r^(2s) phi(r)^s)."""
    _require_exponent(s)
    if r <= 0:
        raise PreconditionError(f"r must be positive, got {r}")
    if not isinstance(phi, StepFunction):
        _check_decreasing(phi, r)
    constant = hardy_constant(s)
    lhs = _moment(phi, r, 1.0, 1.0) ** s
    rhs = constant * (_moment(phi, r, s, 2 * s - 1) + r ** (2 * s) * phi(r) ** s)
    return lhs, rhs, constant


def hardy_integrated_check(phi: DecreasingFunction, s: float, a: float) -> Tuple[float, float, float]:
    """Both sides of int_a (int_r phi t dt)^s r dr <= C int_a phi^s t^(2s+1) dt, C = 3 C(s) / 2."""
    _require_exponent(s)
    if a <= 0:
        raise PreconditionError(f"a must be positive, got {a}")
    constant = 1.5 * hardy_constant(s)
    rhs = constant * _moment(phi, a, s, 2 * s + 1)
    if isinstance(phi, StepFunction):
        lhs = 0.0
        pieces = phi.pieces(a)
        beyond = 0.0
        for start, end, value in reversed(pieces):
            total_at_start = beyond + value * (end**2 - start**2) / 2
            level = beyond + value * end**2 / 2
            if value > 0:
                lhs += ((level - value * start**2 / 2) ** (s + 1) - (level - value * end**2 / 2) ** (s + 1)) / (value * (s + 1))
            else:
                lhs += beyond**s * (end**2 - start**2) / 2
            beyond = total_at_start
        return lhs, rhs, constant
    _check_decreasing(phi, a)

    def outer(r: float) -> float:
        return _moment(phi, r, 1.0, 1.0) ** s * r

    lhs = integrate_to_infinity(outer, a, 1e-8)
    return lhs, rhs, constant
