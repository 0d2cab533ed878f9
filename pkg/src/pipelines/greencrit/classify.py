from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .errors import PreconditionError
from .quadrature import ArrayFunction, fit_log_slope, integrate_grid

logger = logging.getLogger(__name__)

EXPONENT_TOLERANCE = 1e-9


class Verdict(str, Enum):
    FINITE = "Finite"
    DIVERGENT = "Divergent"
    BOUNDED = "Bounded"
    UNBOUNDED = "Unbounded"
    INCONCLUSIVE = "Inconclusive"

    @property
    def is_positive(self) -> bool:
        return self in (Verdict.FINITE, Verdict.BOUNDED)

    @property
    def is_negative(self) -> bool:
        return self in (Verdict.DIVERGENT, Verdict.UNBOUNDED)


class Bracket(str, Enum):
    EXACT = "Exact"
    UPPER = "UpperBound"
    LOWER = "LowerBound"


class CriterionId(str, Enum):
    COND_INT1 = "CondInt1"
    COND_INT1A = "CondInt1a"
    COND_INT2 = "CondInt2"
    COND_INT1B = "CondInt1b"
    COND_1 = "Cond1"
    COND_2 = "Cond2"
    LAST_1 = "Last1"
    LAST_2 = "Last2"
    COND_M = "CondM"
    COND_0 = "Cond0"
    CONJECTURE_1 = "Conjecture1"
    CONJECTURE_2 = "Conjecture2"


@dataclass(frozen=True)
class TailForm:
    """Asymptotic shape r^power (ln r)^log_power (ln ln r)^loglog_power of an integrand."""

    power: float
    log_power: float = 0.0
    loglog_power: float = 0.0

    def times(self, other: "TailForm") -> "TailForm":
        return TailForm(
            self.power + other.power,
            self.log_power + other.log_power,
            self.loglog_power + other.loglog_power,
        )

    def raised(self, exponent: float) -> "TailForm":
        return TailForm(self.power * exponent, self.log_power * exponent, self.loglog_power * exponent)

    def inverse(self) -> "TailForm":
        return self.raised(-1.0)

    def shifted(self, power: float) -> "TailForm":
        return TailForm(self.power + power, self.log_power, self.loglog_power)

    def log_factor(self, radii: np.ndarray) -> np.ndarray:
        logs = np.log(np.maximum(radii, math.e))
        loglogs = np.log(np.maximum(logs, math.e))
        return logs**self.log_power * loglogs**self.loglog_power

    def integrable_at_infinity(self) -> bool:
        if self.power < -1.0 - EXPONENT_TOLERANCE:
            return True
        if self.power > -1.0 + EXPONENT_TOLERANCE:
            return False
        if self.log_power < -1.0 - EXPONENT_TOLERANCE:
            return True
        if self.log_power > -1.0 + EXPONENT_TOLERANCE:
            return False
        return self.loglog_power < -1.0 - EXPONENT_TOLERANCE


@dataclass
class ClassifierConfig:
    r_max: float = 1e6
    threshold: float = -1.0
    margin: float = 0.05
    per_decade: int = 16
    fit_points: int = 33


@dataclass
class SupConfig:
    per_decade: int = 64
    growth_tolerance: float = 0.01
    decades: int = 2
    slope_tolerance: float = 1e-3


@dataclass
class CriterionReport:
    criterion_id: CriterionId
    truncated_value: float
    tail_slope: float
    verdict: Verdict
    constant_estimate: float = math.nan
    bracket: Bracket = Bracket.EXACT
    lower_value: Optional[float] = None
    upper_value: Optional[float] = None
    exploratory: bool = False
    notes: List[str] = field(default_factory=list)
    samples: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    def fields(self) -> List[Tuple[str, object]]:
        return [
            ("criterion_id", self.criterion_id.value),
            ("verdict", self.verdict.value),
            ("truncated_value", self.truncated_value),
            ("tail_slope", self.tail_slope),
            ("constant_estimate", self.constant_estimate),
            ("bracket", self.bracket.value),
        ]


@dataclass
class IntegralClassification:
    value: float
    slope: float
    verdict: Verdict
    radii: np.ndarray
    values: np.ndarray


def decide_slope(slope: float, form: Optional[TailForm], config: Optional[ClassifierConfig] = None) -> Verdict:
    cfg = config or ClassifierConfig()
    if slope < cfg.threshold - cfg.margin:
        return Verdict.FINITE
    if slope > cfg.threshold + cfg.margin:
        return Verdict.DIVERGENT
    if form is not None and not form.integrable_at_infinity():
        return Verdict.DIVERGENT
    logger.warning("tail slope %.4f lies within the classification margin", slope)
    return Verdict.INCONCLUSIVE


def fit_tail_slope(radii: np.ndarray, values: np.ndarray, form: Optional[TailForm]) -> float:
    if form is not None:
        values = values / form.log_factor(radii)
    return fit_log_slope(radii, values)


def classify_integral(
    integrand: ArrayFunction,
    r0: float,
    form: Optional[TailForm] = None,
    config: Optional[ClassifierConfig] = None,
) -> IntegralClassification:
    """Truncated value on ``[r0, r_max]`` and the convergence verdict of the improper integral."""
    cfg = config or ClassifierConfig()
    if not 0 < r0 < cfg.r_max / 10:
        raise PreconditionError(f"r0 must lie in (0, r_max/10), got {r0} with r_max {cfg.r_max}")
    value = integrate_grid(integrand, r0, cfg.r_max, cfg.per_decade)
    top = np.geomspace(cfg.r_max / 10, cfg.r_max, cfg.fit_points)
    samples = np.asarray(integrand(top), dtype=float)
    slope = fit_tail_slope(top, samples, form)
    verdict = decide_slope(slope, form, cfg)
    return IntegralClassification(value, slope, verdict, top, samples)


def with_r_max(config: Optional[ClassifierConfig], r_max: float) -> ClassifierConfig:
    cfg = config or ClassifierConfig()
    if r_max < cfg.r_max:
        return replace(cfg, r_max=r_max)
    return cfg


def sup_grid(r_lo: float, r_hi: float, config: Optional[SupConfig] = None) -> np.ndarray:
    cfg = config or SupConfig()
    if not 0 < r_lo < r_hi / 10.0**cfg.decades:
        raise PreconditionError(f"sup grid needs at least {cfg.decades} decades, got [{r_lo}, {r_hi}]")
    count = int(math.ceil(math.log10(r_hi / r_lo) * cfg.per_decade)) + 1
    return np.geomspace(r_lo, r_hi, count)


def decade_growth(radii: np.ndarray, values: np.ndarray, config: Optional[SupConfig] = None) -> List[float]:
    """Per-decade growth factors of the running maximum over the top decades."""
    cfg = config or SupConfig()
    running = np.maximum.accumulate(np.asarray(values, dtype=float))
    top = radii[-1]
    growth: List[float] = []
    upper_index = len(radii) - 1
    for decade in range(1, cfg.decades + 1):
        lower_index = int(np.searchsorted(radii, top / 10.0**decade * (1 + 1e-12), side="right")) - 1
        lower_index = max(lower_index, 0)
        below, above = running[lower_index], running[upper_index]
        if below <= 0:
            growth.append(math.inf if above > 0 else 1.0)
        else:
            growth.append(float(above / below))
        upper_index = lower_index
    return growth


def classify_sup(radii: np.ndarray, ratios: np.ndarray, config: Optional[SupConfig] = None) -> Tuple[Verdict, float, float]:
    """Verdict, constant estimate and top-decade slope for a sup-type ratio sampled on ``radii``."""
    cfg = config or SupConfig()
    ratios = np.asarray(ratios, dtype=float)
    constant = float(np.max(ratios))
    top = radii >= radii[-1] / 10
    slope = fit_log_slope(radii[top], ratios[top])
    if not math.isfinite(constant):
        return Verdict.UNBOUNDED, constant, slope
    growth = decade_growth(radii, ratios, cfg)
    if max(growth) < 1 + cfg.growth_tolerance:
        if slope > cfg.slope_tolerance:
            # running maximum pinned by an earlier peak
            logger.info("flat running maximum but top-decade slope %.4g: treating as unbounded", slope)
            return Verdict.UNBOUNDED, constant, slope
        return Verdict.BOUNDED, constant, slope
    if min(growth) >= 1 + cfg.growth_tolerance:
        return Verdict.UNBOUNDED, constant, slope
    logger.warning("running maximum growth %s is mixed across the top decades", growth)
    return Verdict.INCONCLUSIVE, constant, slope
