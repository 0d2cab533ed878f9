from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .classify import SupConfig, Verdict
from .criteria import cond_m_potential, default_level_grid
from .errors import (
    ConstructionRefusedError,
    NonConvergenceError,
    NumericalFailureError,
    PicardDivergenceError,
    PreconditionError,
)
from .green import DiscreteKernel

logger = logging.getLogger(__name__)

SUPERSOLUTION_TOLERANCE = 1e-8
MONOTONE_TOLERANCE = 1e-12


class FieldKind(str, Enum):
    CAPPED_GREEN = "CappedGreen"
    EPSILON_M = "EpsilonM"
    DATUM = "Datum"
    PICARD_LIMIT = "PicardLimit"
    SUPERSOLUTION = "Supersolution"


@dataclass
class SolutionField:
    values: np.ndarray
    kind: FieldKind
    epsilon: float = math.nan

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise PreconditionError(f"{self.kind.value} field must be finite and strictly positive")


@dataclass
class IterationTrace:
    sup_changes: List[float] = field(default_factory=list)
    max_values: List[float] = field(default_factory=list)
    monotonicity_violations: int = 0
    converged: bool = False
    diverged: bool = False
    datum_scale: float = 1.0

    @property
    def iterations(self) -> int:
        return len(self.sup_changes)

    def rows(self) -> List[Tuple[int, float, float]]:
        return [(index + 1, change, peak) for index, (change, peak) in enumerate(zip(self.sup_changes, self.max_values))]


@dataclass
class PicardConfig:
    max_iters: int = 10_000
    tol: float = 1e-12
    divergence_factor: float = 1e12
    safe: bool = False


def _require_q(q: float) -> None:
    if not q > 1:
        raise PreconditionError(f"q must exceed 1, got {q}")


def build_m(dk: DiscreteKernel, a: float) -> SolutionField:
    """m = min(G(., o), 1/a) on the grid."""
    if not a > 0:
        raise PreconditionError(f"a must be positive, got {a}")
    return SolutionField(np.minimum(dk.green_values, 1.0 / a), FieldKind.CAPPED_GREEN)


def epsilon_from_constant(constant: float, q: float) -> float:
    _require_q(q)
    if not 0 < constant < math.inf:
        raise PreconditionError(f"cond-m constant must be positive and finite, got {constant}")
    return constant ** (-1.0 / (q - 1))


def _bounded_constant(dk: DiscreteKernel, q: float, a: float) -> float:
    report = cond_m_potential(dk, q, a).report
    if report.verdict is not Verdict.BOUNDED:
        raise ConstructionRefusedError(
            f"cond-m is {report.verdict.value} for q={q:g}: no solution of the form eps*m is available"
        )
    return report.constant_estimate


def epsilon_solution(dk: DiscreteKernel, q: float, a: float, tolerance: float = SUPERSOLUTION_TOLERANCE) -> SolutionField:
    """u = eps m with eps = C^(-1/(q-1)), C the cond-m constant."""
    if not tolerance >= 0:
        raise PreconditionError(f"tolerance must be non-negative, got {tolerance}")
    constant = _bounded_constant(dk, q, a)
    epsilon = epsilon_from_constant(constant, q)
    field_ = SolutionField(epsilon * build_m(dk, a).values, FieldKind.EPSILON_M, epsilon)
    residual = check_supersolution(dk, field_, q)
    if residual < -tolerance * float(np.max(field_.values)):
        raise NumericalFailureError(
            f"eps*m with eps={epsilon:.6g} fails the supersolution check by {residual:.3g}", partial_estimate=residual
        )
    logger.info("eps-solution: C=%.6g eps=%.6g residual=%.3g", constant, epsilon, residual)
    return field_


def safe_datum(dk: DiscreteKernel, q: float, a: float) -> SolutionField:
    """h = eps' m with eps' = ((q-1) C)^(-1/(q-1)), so that G(h^q dsigma) <= h / (q-1)."""
    constant = _bounded_constant(dk, q, a)
    epsilon = ((q - 1) * constant) ** (-1.0 / (q - 1))
    return SolutionField(epsilon * build_m(dk, a).values, FieldKind.DATUM, epsilon)


def datum_scale(q: float) -> float:
    return ((q - 1) / q) ** (q / (q - 1))


def picard_iterate(
    dk: DiscreteKernel,
    q: float,
    h: SolutionField,
    config: Optional[PicardConfig] = None,
) -> Tuple[SolutionField, IterationTrace]:
    """Iterates u <- G(u^q dsigma) + h~ from u = h~, with h~ = delta h in the safe regime."""
    _require_q(q)
    cfg = config or PicardConfig()
    datum = h.values
    trace = IterationTrace()
    if cfg.safe:
        load = dk.potential(datum**q)
        if np.any(load > datum / (q - 1) * (1 + 1e-12)):
            raise PreconditionError("datum violates G(h^q dsigma) <= h/(q-1); the safe regime does not apply")
        trace.datum_scale = datum_scale(q)
    scaled = trace.datum_scale * datum
    ceiling = cfg.divergence_factor * float(np.max(datum))
    current = scaled.copy()
    for iteration in range(1, cfg.max_iters + 1):
        updated = dk.potential(current**q) + scaled
        peak = float(np.max(updated))
        change = float(np.max(np.abs(updated - current))) / peak
        if np.any(updated < current - MONOTONE_TOLERANCE * peak):
            trace.monotonicity_violations += 1
        trace.sup_changes.append(change)
        trace.max_values.append(peak)
        logger.debug("picard %d: change %.3e max %.6g", iteration, change, peak)
        if not math.isfinite(peak) or peak > ceiling:
            trace.diverged = True
            raise PicardDivergenceError(f"picard iterate exceeded {ceiling:.3g} at step {iteration}", trace=trace)
        current = updated
        if change < cfg.tol:
            trace.converged = True
            logger.info("picard converged in %d iterations", iteration)
            return SolutionField(current, FieldKind.PICARD_LIMIT), trace
    raise NonConvergenceError(f"picard iteration did not converge in {cfg.max_iters} steps", trace=trace)


def check_supersolution(dk: DiscreteKernel, u: SolutionField, q: float) -> float:
    """min_i (u_i - G(u^q dsigma)_i); non-negative certifies a discrete supersolution."""
    return float(np.min(u.values - dk.potential(u.values**q)))


def harnack_check(dk: DiscreteKernel, omega_weights: np.ndarray, a: float) -> float:
    """min_i (G omega)_i / m_i."""
    omega = np.asarray(omega_weights, dtype=float)
    if omega.shape != dk.radii.shape or np.any(omega < 0) or not np.any(omega > 0):
        raise PreconditionError("omega must be a non-negative, nonzero weight vector on the grid")
    return float(np.min(dk.apply(omega) / build_m(dk, a).values))


def lem_r_check(dk: DiscreteKernel, s: float, sigma_weights: Optional[np.ndarray] = None) -> float:
    """min_i (s G[(G sigma)^(s-1) dsigma]_i - (G sigma)_i^s)."""
    if not s > 1:
        raise PreconditionError(f"s must exceed 1, got {s}")
    weights = dk.weights_sigma if sigma_weights is None else np.asarray(sigma_weights, dtype=float)
    potential = dk.apply(weights)
    right = s * dk.apply(potential ** (s - 1) * weights)
    return float(np.min(right - potential**s))


def _random_density(rng: np.random.Generator, size: int) -> np.ndarray:
    """Log-uniform positive values on a random sparse support."""
    keep = rng.uniform(0.05, 1.0)
    mask = rng.random(size) < keep
    if not np.any(mask):
        mask[rng.integers(size)] = True
    return np.where(mask, np.exp(rng.uniform(-5.0, 5.0, size)), 0.0)


def _norm(values: np.ndarray, weights: np.ndarray, power: float) -> float:
    return float(np.sum(np.abs(values) ** power * weights)) ** (1.0 / power)


def weighted_norm_check(
    dk: DiscreteKernel,
    q: float,
    omega_weights: np.ndarray,
    trials: int = 500,
    seed: int = 0,
) -> Tuple[float, float]:
    """Worst observed ratio of both weighted norm inequalities and the constant s c^((s-1)/s)."""
    _require_q(q)
    omega = np.asarray(omega_weights, dtype=float)
    sigma = dk.weights_sigma
    potential = dk.apply(omega)
    support = potential > 0
    if not np.any(support):
        raise PreconditionError("omega has zero potential on the grid")
    load = dk.apply(potential**q * sigma)
    hypothesis = float(np.max(load[support] / potential[support]))
    if not math.isfinite(hypothesis):
        raise PreconditionError("G[(G omega)^q dsigma] <= c G omega fails on the grid")
    s = q / (q - 1)
    constant = s * hypothesis ** ((s - 1) / s)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        f = _random_density(rng, dk.size)
        g = _random_density(rng, dk.size)
        f_norm = _norm(f, sigma, s)
        g_norm = _norm(g, omega, q)
        if f_norm > 0:
            worst = max(worst, _norm(dk.apply(f * sigma), omega, s) / f_norm)
        if g_norm > 0:
            worst = max(worst, _norm(dk.apply(g * omega), sigma, q) / g_norm)
    if worst > constant * (1 + 1e-8):
        logger.warning("weighted norm ratio %.6g exceeds the constant %.6g", worst, constant)
    return worst, constant


@dataclass
class MoserConstants:
    q: float
    j_max: int
    partial: List[float]
    limit_estimate: float
    lower_bound: float

    def rows(self) -> List[Tuple[int, float]]:
        return [(index + 1, value) for index, value in enumerate(self.partial)]


def moser_lower_bound(q: float) -> float:
    return 1.0 / (q ** ((q - 1) ** -2) * (q / (q - 1)) ** (1.0 / (q * (q - 1))))


def moser_constants(q: float, j_max: int = 60) -> MoserConstants:
    """c(j,q)^(q^-j) for j = 1..j_max, accumulated in log space."""
    _require_q(q)
    if j_max < 2:
        raise PreconditionError(f"j_max must be at least 2, got {j_max}")
    log_q = math.log(q)
    log_partial = 0.0
    partial = [1.0]
    for k in range(1, j_max):
        # log(1 + q + ... + q^k) = log((q^(k+1) - 1) / (q - 1))
        log_sum = (k + 1) * log_q + math.log1p(-(q ** -(k + 1))) - math.log(q - 1)
        log_partial -= math.exp(-(1 + k) * log_q) * log_sum
        partial.append(math.exp(log_partial))
    return MoserConstants(q, j_max, partial, partial[-1], moser_lower_bound(q))


@dataclass
class LevelSetCheck:
    levels: np.ndarray
    cond_m_constant: float
    gp_violations: int
    observed_c: float
    moser_reference: float

    @property
    def passed(self) -> bool:
        return self.gp_violations == 0 and math.isfinite(self.observed_c)

    @property
    def reference_ratio(self) -> float:
        return self.observed_c / self.moser_reference


def level_set_bound_check(
    dk: DiscreteKernel,
    q: float,
    a: float,
    r_grid: Optional[Sequence[float]] = None,
    config: Optional[SupConfig] = None,
) -> LevelSetCheck:
    """Checks G sigma_A <= C r^q m and reports c in G sigma_A <= c r^(q-1) for the level sets A(o, r)."""
    _require_q(q)
    report = cond_m_potential(dk, q, a).report
    if report.verdict is not Verdict.BOUNDED:
        raise PreconditionError(f"cond-m is {report.verdict.value}; the level-set bounds need a finite constant")
    constant = report.constant_estimate
    levels = default_level_grid(dk, a, config) if r_grid is None else np.asarray(r_grid, dtype=float)
    if np.any(levels < a):
        raise PreconditionError(f"levels must be at least a={a:g}")
    m = build_m(dk, a).values
    potentials = dk.level_set_potentials()
    violations = 0
    observed = 0.0
    for level in levels:
        size = dk.level_set_size(level)
        if size == 0:
            continue
        column = potentials[:, size - 1]
        violations += int(np.count_nonzero(column > constant * level**q * m * (1 + 1e-12)))
        observed = max(observed, float(np.max(column)) / level ** (q - 1))
    moser = moser_constants(q)
    reference = constant ** (1.0 / (q - 1)) * constant ** (1.0 / q) / moser.limit_estimate
    logger.info("level sets: %d violations, observed c %.6g (reference %.6g)", violations, observed, reference)
    return LevelSetCheck(levels, constant, violations, observed, reference)


def check_domination(dk: DiscreteKernel, f_weights: np.ndarray, h: np.ndarray) -> bool:
    """If G f <= h on supp f then G f <= h everywhere."""
    f = np.asarray(f_weights, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(f < 0):
        raise PreconditionError("f must be non-negative")
    potential = dk.apply(f)
    support = f > 0
    tolerance = 1e-12 * float(np.max(np.abs(h)))
    if np.any(potential[support] > h[support] + tolerance):
        return True
    return bool(np.all(potential <= h + tolerance))
