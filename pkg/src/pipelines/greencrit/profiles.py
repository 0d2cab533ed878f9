from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gamma as gamma_function

from .classify import ClassifierConfig, CriterionId, CriterionReport, TailForm, classify_integral, with_r_max
from .errors import OutOfRangeError, PreconditionError
from .quadrature import cumulative_from_bottom, integrate, refine_edges

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

FD_RELATIVE_STEP = 1e-6
LOG_THRESHOLD = math.e
LOGLOG_THRESHOLD = math.e**math.e


class VolumeFamily(str, Enum):
    POWER = "power"
    POWER_LOG = "powerlog"
    EUCLIDEAN = "euclidean"
    TWO_REGIME = "two_regime"
    TABULATED = "tabulated"


class MeasureFamily(str, Enum):
    UNIT = "unit"
    RADIAL_POWER = "radial_power"
    TABULATED = "tabulated"


def unit_ball_volume(n: float) -> float:
    return float(math.pi ** (n / 2) / gamma_function(n / 2 + 1))


def _as_array(r: ArrayLike) -> Tuple[np.ndarray, bool]:
    array = np.asarray(r, dtype=float)
    return array, array.ndim == 0


def _restore(values: np.ndarray, scalar: bool) -> ArrayLike:
    if scalar:
        return float(values)
    return values


@dataclass(frozen=True, eq=False)
class VolumeProfile:
    """Radial volume growth r -> mu(B(o, r)) of a model manifold."""

    family: VolumeFamily
    params: Tuple[float, ...] = ()
    tail_exponent: float = math.nan
    log_powers: Tuple[float, ...] = ()
    table_r: Optional[np.ndarray] = field(default=None, repr=False)
    table_v: Optional[np.ndarray] = field(default=None, repr=False)
    _interpolant: Optional[PchipInterpolator] = field(default=None, repr=False)

    @classmethod
    def power(cls, c: float, alpha: float) -> "VolumeProfile":
        if c <= 0 or alpha <= 0:
            raise PreconditionError(f"power profile needs c > 0 and alpha > 0, got c={c}, alpha={alpha}")
        return cls(VolumeFamily.POWER, (float(c), float(alpha)), float(alpha))

    @classmethod
    def power_log(cls, c: float, alpha: float, k: int = 1) -> "VolumeProfile":
        if c <= 0 or alpha <= 0:
            raise PreconditionError(f"powerlog profile needs c > 0 and alpha > 0, got c={c}, alpha={alpha}")
        if int(k) not in (1, 2) or k != int(k):
            raise PreconditionError(f"powerlog closed forms exist for k = 1 and k = 2 only, got k={k}; tabulate higher k")
        p = (alpha - 2.0) / 2.0
        powers = (p,) if int(k) == 1 else (p, p)
        return cls(VolumeFamily.POWER_LOG, (float(c), float(alpha), float(int(k))), float(alpha), powers)

    @classmethod
    def euclidean(cls, n: float) -> "VolumeProfile":
        if n <= 0:
            raise PreconditionError(f"dimension must be positive, got {n}")
        return cls(VolumeFamily.EUCLIDEAN, (float(n),), float(n))

    @classmethod
    def two_regime(cls, n: float, alpha: float) -> "VolumeProfile":
        if n <= 0 or alpha <= 0:
            raise PreconditionError(f"two-regime profile needs n > 0 and alpha > 0, got n={n}, alpha={alpha}")
        return cls(VolumeFamily.TWO_REGIME, (float(n), float(alpha)), float(alpha))

    @classmethod
    def tabulated(cls, radii: np.ndarray, volumes: np.ndarray) -> "VolumeProfile":
        radii = np.asarray(radii, dtype=float)
        volumes = np.asarray(volumes, dtype=float)
        if radii.ndim != 1 or radii.shape != volumes.shape or radii.size < 4:
            raise PreconditionError("tabulated profile needs matching one-dimensional arrays with at least 4 rows")
        if radii[0] <= 0 or np.any(np.diff(radii) <= 0):
            raise PreconditionError("tabulated radii must be positive and strictly increasing")
        if volumes[0] <= 0 or np.any(np.diff(volumes) <= 0):
            raise PreconditionError("tabulated volumes must be positive and strictly increasing")
        interpolant = PchipInterpolator(np.log(radii), np.log(volumes), extrapolate=False)
        top = radii >= radii[-1] / 10
        if np.count_nonzero(top) < 2:
            top = slice(-2, None)
        slope, _ = np.polyfit(np.log(radii[top]), np.log(volumes[top]), 1)
        return cls(VolumeFamily.TABULATED, (), float(slope), (), radii, volumes, interpolant)

    @property
    def is_closed_form(self) -> bool:
        return self.family is not VolumeFamily.TABULATED

    @property
    def support_min(self) -> float:
        return 0.0 if self.table_r is None else float(self.table_r[0])

    @property
    def support_max(self) -> float:
        return math.inf if self.table_r is None else float(self.table_r[-1])

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        if self.family is VolumeFamily.TWO_REGIME:
            return (1.0,)
        if self.family is VolumeFamily.POWER_LOG:
            return (LOG_THRESHOLD,) if len(self.log_powers) == 1 else (LOG_THRESHOLD, LOGLOG_THRESHOLD)
        return ()

    @property
    def inner_exponent(self) -> float:
        """Exponent of the volume growth as r -> 0."""
        if self.family in (VolumeFamily.EUCLIDEAN, VolumeFamily.TWO_REGIME):
            return self.params[0]
        if self.family in (VolumeFamily.POWER, VolumeFamily.POWER_LOG):
            return self.params[1]
        slope = np.log(self.table_v[1] / self.table_v[0]) / np.log(self.table_r[1] / self.table_r[0])
        return float(slope)

    @property
    def homogeneity_constant(self) -> Optional[float]:
        """Bound D with V(s)/D <= mu(B(x, s)) <= D V(s) for every centre, or None."""
        if self.family is VolumeFamily.EUCLIDEAN:
            return 1.0
        if self.family is VolumeFamily.TWO_REGIME:
            return 2.0 ** max(self.params)
        return None

    @property
    def asymptotic_form(self) -> Optional[TailForm]:
        if not self.is_closed_form:
            return None
        powers = self.log_powers + (0.0,) * (2 - len(self.log_powers))
        return TailForm(self.tail_exponent, powers[0], powers[1])

    @property
    def derivative_form(self) -> Optional[TailForm]:
        form = self.asymptotic_form
        return None if form is None else form.shifted(-1.0)

    def volume(self, r: ArrayLike) -> ArrayLike:
        radii, scalar = _as_array(r)
        if np.any(radii < 0):
            raise PreconditionError("radius must be non-negative")
        return _restore(self._volume(radii), scalar)

    def surface_density(self, r: ArrayLike) -> ArrayLike:
        radii, scalar = _as_array(r)
        if np.any(radii <= 0):
            raise PreconditionError("surface density needs r > 0")
        return _restore(self._surface_density(radii), scalar)

    def _volume(self, radii: np.ndarray) -> np.ndarray:
        family = self.family
        if family is VolumeFamily.POWER:
            c, alpha = self.params
            return c * radii**alpha
        if family is VolumeFamily.EUCLIDEAN:
            (n,) = self.params
            return unit_ball_volume(n) * radii**n
        if family is VolumeFamily.TWO_REGIME:
            n, alpha = self.params
            return np.where(radii <= 1.0, radii**n, radii**alpha)
        if family is VolumeFamily.POWER_LOG:
            c, alpha, _ = self.params
            logs = np.log(np.maximum(radii, LOG_THRESHOLD))
            values = c * radii**alpha * logs ** self.log_powers[0]
            if len(self.log_powers) == 2:
                values = values * np.log(np.maximum(logs, math.e)) ** self.log_powers[1]
            return values
        return self._tabulated_volume(radii)

    def _tabulated_volume(self, radii: np.ndarray) -> np.ndarray:
        lo, hi = self.table_r[0], self.table_r[-1]
        positive = radii > 0
        if np.any((radii[positive] < lo * (1 - 1e-12)) | (radii[positive] > hi * (1 + 1e-12))):
            raise OutOfRangeError(f"radius outside tabulated range [{lo:g}, {hi:g}]")
        values = np.zeros_like(radii)
        clipped = np.clip(radii[positive], lo, hi)
        values[positive] = np.exp(self._interpolant(np.log(clipped)))
        return values

    def _surface_density(self, radii: np.ndarray) -> np.ndarray:
        family = self.family
        if family is VolumeFamily.POWER:
            c, alpha = self.params
            return c * alpha * radii ** (alpha - 1)
        if family is VolumeFamily.EUCLIDEAN:
            (n,) = self.params
            return n * unit_ball_volume(n) * radii ** (n - 1)
        if family is VolumeFamily.TWO_REGIME:
            n, alpha = self.params
            return np.where(radii <= 1.0, n * radii ** (n - 1), alpha * radii ** (alpha - 1))
        if family is VolumeFamily.POWER_LOG:
            c, alpha, _ = self.params
            p = self.log_powers[0]
            logs = np.log(np.maximum(radii, LOG_THRESHOLD))
            active = radii > LOG_THRESHOLD
            factor = alpha + np.where(active, p / logs, 0.0)
            values = c * radii ** (alpha - 1) * logs**p
            if len(self.log_powers) == 2:
                loglogs = np.log(np.maximum(logs, math.e))
                deep = radii > LOGLOG_THRESHOLD
                factor = factor + np.where(deep, p / (logs * loglogs), 0.0)
                values = values * loglogs**p
            return values * factor
        lo, hi = self.table_r[0], self.table_r[-1]
        step = FD_RELATIVE_STEP * radii
        left = np.clip(radii - step, lo, hi)
        right = np.clip(radii + step, lo, hi)
        return (self._tabulated_volume(right) - self._tabulated_volume(left)) / (right - left)


@dataclass(frozen=True, eq=False)
class MeasureProfile:
    """Radial density Phi of sigma with respect to mu."""

    density_family: MeasureFamily = MeasureFamily.UNIT
    c: float = 1.0
    m_exponent: Optional[float] = None
    table_r: Optional[np.ndarray] = field(default=None, repr=False)
    table_phi: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def unit(cls) -> "MeasureProfile":
        return cls()

    @classmethod
    def radial_power(cls, c: float, m: float, dimension: Optional[float] = None) -> "MeasureProfile":
        if c <= 0:
            raise PreconditionError(f"density coefficient must be positive, got {c}")
        if dimension is not None and m <= -dimension:
            raise PreconditionError(f"density exponent m={m} is not locally integrable in dimension {dimension}")
        return cls(MeasureFamily.RADIAL_POWER, float(c), float(m))

    @classmethod
    def tabulated(cls, radii: np.ndarray, densities: np.ndarray) -> "MeasureProfile":
        radii = np.asarray(radii, dtype=float)
        densities = np.asarray(densities, dtype=float)
        if radii.ndim != 1 or radii.shape != densities.shape or radii.size < 2:
            raise PreconditionError("tabulated density needs matching one-dimensional arrays")
        if np.any(np.diff(radii) <= 0):
            raise PreconditionError("tabulated density radii must be strictly increasing")
        if np.any(densities < 0):
            raise PreconditionError("density must be non-negative")
        return cls(MeasureFamily.TABULATED, 1.0, None, radii, densities)

    def scaled(self, factor: float) -> "MeasureProfile":
        if self.density_family is MeasureFamily.TABULATED:
            return MeasureProfile(MeasureFamily.TABULATED, 1.0, None, self.table_r, self.table_phi * factor)
        exponent = 0.0 if self.m_exponent is None else self.m_exponent
        return MeasureProfile(MeasureFamily.RADIAL_POWER, self.c * factor, exponent)

    @property
    def is_unit(self) -> bool:
        return self.density_family is MeasureFamily.UNIT

    @property
    def asymptotic_form(self) -> Optional[TailForm]:
        if self.density_family is MeasureFamily.UNIT:
            return TailForm(0.0)
        if self.density_family is MeasureFamily.RADIAL_POWER:
            return TailForm(self.m_exponent)
        return None

    @property
    def origin_exponent(self) -> float:
        """Exponent of Phi as r -> 0 (zero when Phi is bounded and positive there)."""
        if self.density_family is MeasureFamily.RADIAL_POWER:
            return self.m_exponent
        return 0.0

    def density(self, r: ArrayLike) -> ArrayLike:
        radii, scalar = _as_array(r)
        if self.density_family is MeasureFamily.UNIT:
            values = np.ones_like(radii)
        elif self.density_family is MeasureFamily.RADIAL_POWER:
            with np.errstate(divide="ignore"):
                values = self.c * radii**self.m_exponent
        else:
            values = np.interp(radii, self.table_r, self.table_phi)
        return _restore(values, scalar)

    def max_density(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """Upper bound for Phi on the radial interval [lower, upper] (elementwise)."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if self.density_family is MeasureFamily.UNIT:
            return np.ones(np.broadcast(lower, upper).shape)
        if self.density_family is MeasureFamily.RADIAL_POWER:
            m = self.m_exponent
            if m >= 0:
                return self.c * upper**m
            with np.errstate(divide="ignore"):
                return np.where(lower > 0, self.c * np.maximum(lower, 0.0) ** m, np.inf)
        return np.full(np.broadcast(lower, upper).shape, float(np.max(self.table_phi)))


def volume(profile: VolumeProfile, r: ArrayLike) -> ArrayLike:
    return profile.volume(r)


def surface_density(profile: VolumeProfile, r: ArrayLike) -> ArrayLike:
    return profile.surface_density(r)


def _require_integrable(volume_profile: VolumeProfile, measure: MeasureProfile) -> None:
    if measure.density_family is MeasureFamily.RADIAL_POWER and measure.m_exponent <= -volume_profile.inner_exponent:
        raise PreconditionError(
            f"density exponent m={measure.m_exponent} is not integrable against volume growth "
            f"r^{volume_profile.inner_exponent:g} at the origin"
        )


def _inner_mass(volume_profile: VolumeProfile, measure: MeasureProfile) -> float:
    if volume_profile.is_closed_form:
        return 0.0
    start = volume_profile.support_min
    return float(measure.density(start)) * float(volume_profile.volume(start))


def sigma_ball(volume_profile: VolumeProfile, measure: MeasureProfile, r: float, rel_tol: float = 1e-10) -> float:
    """sigma(B(o, r)) as the integral of Phi dV over [0, r]."""
    if r < 0:
        raise PreconditionError(f"radius must be non-negative, got {r}")
    if measure.is_unit:
        return float(volume_profile.volume(r))
    _require_integrable(volume_profile, measure)
    if r == 0:
        return 0.0

    def integrand(s: float) -> float:
        return float(measure.density(s)) * float(volume_profile.surface_density(s))

    start = volume_profile.support_min
    return _inner_mass(volume_profile, measure) + integrate(integrand, start, r, rel_tol, volume_profile.breakpoints)


def sigma_ball_values(volume_profile: VolumeProfile, measure: MeasureProfile, radii: np.ndarray) -> np.ndarray:
    """Vectorized sigma(B(o, r)) for an array of positive radii."""
    radii = np.asarray(radii, dtype=float)
    if measure.is_unit:
        return np.asarray(volume_profile.volume(radii), dtype=float)
    _require_integrable(volume_profile, measure)
    flat = radii.ravel()
    edges = refine_edges(flat, 64, volume_profile.breakpoints)
    base = sigma_ball(volume_profile, measure, float(edges[0]))

    def integrand(s: np.ndarray) -> np.ndarray:
        return np.asarray(measure.density(s)) * np.asarray(volume_profile.surface_density(s))

    cumulative = base + cumulative_from_bottom(integrand, edges)
    return cumulative[np.searchsorted(edges, flat)].reshape(radii.shape)


def sigma_ball_form(volume_profile: VolumeProfile, measure: MeasureProfile) -> Optional[TailForm]:
    volume_form = volume_profile.asymptotic_form
    density_form = measure.asymptotic_form
    if volume_form is None or density_form is None:
        return None
    if measure.is_unit:
        return volume_form
    growth = volume_form.power + density_form.power
    if growth > 0:
        return volume_form.times(density_form)
    if growth == 0:
        return TailForm(0.0, 1.0)
    return TailForm(0.0)


class SigmaBallTable:
    """Log-log monotone interpolation of r -> sigma(B(o, r)) over a fixed radial window."""

    def __init__(self, volume_profile: VolumeProfile, measure: MeasureProfile, r_lo: float, r_hi: float, per_decade: int = 64) -> None:
        self.volume_profile = volume_profile
        self.measure = measure
        self._exact = measure.is_unit
        lo = max(r_lo, volume_profile.support_min) if volume_profile.support_min > 0 else r_lo
        hi = min(r_hi, volume_profile.support_max)
        count = int(math.ceil(math.log10(hi / lo) * per_decade)) + 1
        self.radii = np.geomspace(lo, hi, count)
        values = sigma_ball_values(volume_profile, measure, self.radii)
        self._log_values = np.log(np.maximum(values, np.finfo(float).tiny))
        self._interpolant = PchipInterpolator(np.log(self.radii), self._log_values, extrapolate=True)
        self._inner_slope = float(
            (self._log_values[1] - self._log_values[0]) / (np.log(self.radii[1]) - np.log(self.radii[0]))
        )

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self._exact:
            inside = np.clip(r, 0.0, self.volume_profile.support_max)
            return np.asarray(self.volume_profile.volume(np.maximum(inside, 0.0)), dtype=float)
        values = np.zeros_like(r)
        positive = r > 0
        values[positive] = np.exp(self.log_values(r[positive]))
        return values

    def log_values(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self._exact:
            return np.log(np.asarray(self.volume_profile.volume(r), dtype=float))
        logs = np.log(r)
        result = self._interpolant(logs)
        below = r < self.radii[0]
        if np.any(below):
            result = np.where(below, self._log_values[0] + self._inner_slope * (logs - np.log(self.radii[0])), result)
        return result


def check_doubling(profile: VolumeProfile, r_min: float, r_max: float, samples: int) -> float:
    if not 0 < r_min < r_max:
        raise PreconditionError(f"doubling check needs 0 < r_min < r_max, got [{r_min}, {r_max}]")
    if samples < 2:
        raise PreconditionError(f"doubling check needs at least 2 samples, got {samples}")
    radii = np.geomspace(r_min, r_max, samples)
    ratios = np.asarray(profile.volume(2 * radii)) / np.asarray(profile.volume(radii))
    return float(np.max(ratios))


def parabolic_form(profile: VolumeProfile) -> Optional[TailForm]:
    """Tail shape of t / V(t), whose integrability at infinity is non-parabolicity."""
    form = profile.asymptotic_form
    return None if form is None else form.inverse().shifted(1.0)


def is_parabolic(profile: VolumeProfile) -> bool:
    form = parabolic_form(profile)
    if form is not None:
        return not form.integrable_at_infinity()
    return profile.tail_exponent <= 2.0


def check_nonparabolic(profile: VolumeProfile, r0: float, config: Optional[ClassifierConfig] = None) -> CriterionReport:
    if r0 <= 0:
        raise PreconditionError(f"r0 must be positive, got {r0}")
    cfg = with_r_max(config, profile.support_max)

    def integrand(t: np.ndarray) -> np.ndarray:
        return t / np.asarray(profile.volume(t))

    result = classify_integral(integrand, r0, parabolic_form(profile), cfg)
    logger.info("non-parabolicity of %s: %s (slope %.4f)", profile.family.value, result.verdict.value, result.slope)
    return CriterionReport(
        CriterionId.COND_0,
        result.value,
        result.slope,
        result.verdict,
        samples=(result.radii, result.values),
    )
