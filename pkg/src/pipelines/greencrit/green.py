from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .classify import TailForm
from .errors import DivergenceError, NumericalFailureError, OutOfRangeError, PreconditionError
from .profiles import MeasureProfile, VolumeFamily, VolumeProfile, is_parabolic
from .quadrature import cumulative_from_top, integrate, integrate_to_infinity, refine_edges

logger = logging.getLogger(__name__)

DistanceFunction = Callable[[np.ndarray], np.ndarray]

TAIL_SLOPE_TOLERANCE = 0.1
BRACKET_STEPS = 1000
PURE_POWER_FAMILIES = (VolumeFamily.POWER, VolumeFamily.EUCLIDEAN)


class TailMode(str, Enum):
    ANALYTIC = "analytic"
    NUMERIC_FIT = "numeric_fit"


def fit_table_exponent(profile: VolumeProfile) -> float:
    """Volume exponent from the last two decades of a table; the two decade slopes must agree."""
    radii, volumes = profile.table_r, profile.table_v
    top = radii[-1]
    if radii[0] > top / 100:
        return profile.tail_exponent
    slopes = []
    for upper in (top, top / 10):
        mask = (radii >= upper / 10 * (1 - 1e-12)) & (radii <= upper * (1 + 1e-12))
        if np.count_nonzero(mask) < 2:
            return profile.tail_exponent
        slope, _ = np.polyfit(np.log(radii[mask]), np.log(volumes[mask]), 1)
        slopes.append(float(slope))
    if abs(slopes[0] - slopes[1]) > TAIL_SLOPE_TOLERANCE:
        raise NumericalFailureError(
            f"tabulated volume tail is unstable: decade slopes {slopes[1]:.4f} and {slopes[0]:.4f}",
            partial_estimate=slopes[0],
        )
    return slopes[0]


class GreenRadialKernel:
    """R(rho), the integral of t / V(t) over [rho, infinity), used as the normalised Green kernel G(x, o)."""

    def __init__(
        self,
        profile: VolumeProfile,
        quad_rel_tol: float = 1e-10,
        tail_mode: Optional[TailMode] = None,
    ) -> None:
        if quad_rel_tol <= 0:
            raise PreconditionError(f"quad_rel_tol must be positive, got {quad_rel_tol}")
        self.profile = profile
        self.quad_rel_tol = quad_rel_tol
        if tail_mode is None:
            tail_mode = TailMode.ANALYTIC if profile.is_closed_form else TailMode.NUMERIC_FIT
        if tail_mode is TailMode.ANALYTIC and not profile.is_closed_form:
            raise PreconditionError("analytic tails need a closed-form volume profile")
        self.tail_mode = tail_mode
        if profile.is_closed_form:
            if is_parabolic(profile):
                raise DivergenceError(f"{profile.family.value} profile is parabolic: the Green kernel is infinite")
            self.tail_exponent = profile.tail_exponent
            self.log_powers = profile.log_powers
        else:
            self.tail_exponent = fit_table_exponent(profile)
            self.log_powers = ()
            if self.tail_exponent <= 2.0:
                raise DivergenceError(f"fitted volume exponent {self.tail_exponent:.4f} does not exceed 2")

    def __repr__(self) -> str:
        return f"GreenRadialKernel({self.profile.family.value}, {self.profile.params}, tail={self.tail_mode.value})"

    @property
    def form(self) -> TailForm:
        powers = tuple(-p for p in self.log_powers) + (0.0,) * (2 - len(self.log_powers))
        return TailForm(2.0 - self.tail_exponent, powers[0], powers[1])

    def _integrand(self, t: np.ndarray) -> np.ndarray:
        return t / np.asarray(self.profile.volume(t), dtype=float)

    def _crossover(self, rho: float) -> float:
        family = self.profile.family
        if family in PURE_POWER_FAMILIES:
            return rho
        if family is VolumeFamily.TWO_REGIME:
            return max(rho, 1.0)
        if family is VolumeFamily.POWER_LOG:
            return max(10.0 * rho, max(self.profile.breakpoints))
        return max(rho, self.profile.support_max)

    def _tail(self, start: float) -> float:
        profile = self.profile
        alpha = self.tail_exponent
        if profile.family is VolumeFamily.POWER_LOG:
            c = profile.params[0]
            powers = self.log_powers

            def integrand(u: float) -> float:
                exponent = (2.0 - alpha) * u - math.log(c) - powers[0] * math.log(max(u, 1.0))
                if len(powers) == 2:
                    exponent -= powers[1] * math.log(math.log(max(u, math.e)))
                return math.exp(exponent)

            return integrate_to_infinity(integrand, math.log(start), self.quad_rel_tol)
        if profile.family is VolumeFamily.TABULATED and start < profile.support_max:
            raise PreconditionError("tabulated tails start at the end of the table")
        return start**2 / (float(self._extended_volume(start)) * (alpha - 2.0))

    def _extended_volume(self, r: np.ndarray) -> np.ndarray:
        """Volume with a power-law continuation past the end of a table."""
        profile = self.profile
        r = np.asarray(r, dtype=float)
        if profile.is_closed_form:
            return np.asarray(profile.volume(r), dtype=float)
        top = profile.support_max
        v_top = float(profile.volume(top))
        inside = np.minimum(r, top)
        values = np.asarray(profile.volume(inside), dtype=float)
        return np.where(r > top, v_top * (r / top) ** self.tail_exponent, values)

    def value(self, rho: float) -> float:
        if rho <= 0:
            raise PreconditionError(f"rho must be positive, got {rho}")
        if rho < self.profile.support_min:
            raise OutOfRangeError(f"rho={rho:g} lies below the tabulated range")
        if self.profile.family is VolumeFamily.TABULATED and rho >= self.profile.support_max:
            return self._tail(rho)
        crossover = self._crossover(rho)
        head = integrate(
            lambda t: t / float(self.profile.volume(t)),
            rho,
            crossover,
            self.quad_rel_tol,
            self.profile.breakpoints,
        )
        return head + self._tail(crossover)

    def values(self, rhos: np.ndarray) -> np.ndarray:
        rhos = np.asarray(rhos, dtype=float)
        flat = rhos.ravel()
        if np.any(flat <= 0):
            raise PreconditionError("rho must be positive")
        if np.any(flat < self.profile.support_min):
            raise OutOfRangeError("rho lies below the tabulated range")
        family = self.profile.family
        if family in PURE_POWER_FAMILIES:
            c = self.profile.params[0] if family is VolumeFamily.POWER else float(self.profile.volume(1.0))
            alpha = self.tail_exponent
            return (flat ** (2.0 - alpha) / (c * (alpha - 2.0))).reshape(rhos.shape)
        top = self._crossover(float(flat.max()))
        if family is VolumeFamily.TABULATED:
            top = self.profile.support_max
            outside = flat >= top
            result = np.empty_like(flat)
            result[outside] = flat[outside] ** 2 / (self._extended_volume(flat[outside]) * (self.tail_exponent - 2.0))
            inside = ~outside
            if np.any(inside):
                edges = refine_edges(np.append(flat[inside], top), 64)
                tails = cumulative_from_top(self._integrand, edges) + self._tail(top)
                result[inside] = tails[np.searchsorted(edges, flat[inside])]
            return result.reshape(rhos.shape)
        edges = refine_edges(np.append(flat, top), 64, self.profile.breakpoints)
        tails = cumulative_from_top(self._integrand, edges) + self._tail(top)
        return tails[np.searchsorted(edges, flat)].reshape(rhos.shape)


def R_eval(kernel: GreenRadialKernel, rho: float) -> float:
    return kernel.value(rho)


def R_inverse(kernel: GreenRadialKernel, v: float) -> float:
    """Radius rho with R(rho) = v, bracketed by doubling or halving and refined by brentq in log space."""
    if not v > 0 or not math.isfinite(v):
        raise OutOfRangeError(f"value {v} lies outside the range of R")
    log_v = math.log(v)
    lower_limit = kernel.profile.support_min

    def residual(x: float) -> float:
        return math.log(kernel.value(math.exp(x))) - log_v

    rho = 1.0 if lower_limit <= 0 else max(1.0, lower_limit)
    lo = hi = rho
    if kernel.value(rho) > v:
        for _ in range(BRACKET_STEPS):
            hi *= 2.0
            if kernel.value(hi) <= v:
                break
        else:
            raise OutOfRangeError(f"value {v} lies below the range of R")
        lo = hi / 2.0
    else:
        for _ in range(BRACKET_STEPS):
            lo /= 2.0
            if lo < lower_limit:
                raise OutOfRangeError(f"value {v} lies above the tabulated range of R")
            if kernel.value(lo) >= v:
                break
        else:
            raise OutOfRangeError(f"value {v} lies above the range of R")
        hi = lo * 2.0
    x_lo, x_hi = math.log(lo), math.log(hi)
    if residual(x_lo) == 0.0:
        return lo
    if residual(x_hi) == 0.0:
        return hi
    root = brentq(residual, x_lo, x_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(root)


def check_R_doubling(kernel: GreenRadialKernel, r_min: float, r_max: float, samples: int = 64) -> float:
    if not 0 < r_min < r_max:
        raise PreconditionError(f"doubling check needs 0 < r_min < r_max, got [{r_min}, {r_max}]")
    radii = np.geomspace(r_min, r_max, max(samples, 2))
    ratios = kernel.values(radii) / kernel.values(2 * radii)
    return float(np.max(ratios))


class MetricKind(str, Enum):
    INVERSE_R = "InverseR"
    SNOWFLAKE = "Snowflake"
    POWER_OF_DISTANCE = "PowerOfDistance"


@dataclass(frozen=True)
class QuasiMetric:
    kind: MetricKind
    kappa: float
    exponent: float
    params: Dict[str, float] = field(default_factory=dict)
    samples: int = 0
    kappa_bound: Optional[float] = None
    transform: DistanceFunction = field(default=np.asarray, repr=False, compare=False)
    inverse: DistanceFunction = field(default=np.asarray, repr=False, compare=False)

    def distance(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        result = np.zeros_like(d)
        positive = d > 0
        result[positive] = self.transform(d[positive])
        return result

    def radius_of(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        values = np.asarray(self.inverse(t), dtype=float)
        return float(values) if values.ndim == 0 else values

    @property
    def far_exponent(self) -> float:
        return float(self.params.get("delta1", 1.0))

    def report_fields(self) -> List[Tuple[str, object]]:
        rows: List[Tuple[str, object]] = [("kind", self.kind.value)]
        rows.extend(sorted(self.params.items()))
        rows.append(("kappa", self.kappa))
        if self.kappa_bound is not None:
            rows.append(("kappa_bound", self.kappa_bound))
        rows.append(("samples", self.samples))
        return rows


def collinear_kappa(phi: DistanceFunction, d_min: float, d_max: float, samples: int) -> float:
    """Least kappa with phi(d(x,y)) <= kappa (phi(d(x,z)) + phi(d(z,y))) over collinear triples.

    Triples put z between x and y (d(x,y) = a + b) or on the same side (d(x,y) = |a - b|),
    with a, b on a log grid including the diagonal. Degenerate triples force kappa >= 1.
    """
    grid = np.geomspace(d_min, d_max, samples)
    a, b = np.meshgrid(grid, grid, indexing="ij")
    denominator = phi(a.ravel()) + phi(b.ravel())
    spread = np.abs(a - b).ravel()
    far = phi((a + b).ravel()) / denominator
    near = np.zeros_like(far)
    positive = spread > 0
    near[positive] = phi(spread[positive]) / denominator[positive]
    return float(max(1.0, np.max(far), np.max(near)))


def build_quasi_metric_inverseR(
    kernel: GreenRadialKernel,
    d_min: float = 1e-2,
    d_max: float = 1e4,
    samples: int = 48,
) -> QuasiMetric:
    if not 0 < d_min < d_max:
        raise PreconditionError(f"sampling range must satisfy 0 < d_min < d_max, got [{d_min}, {d_max}]")
    if kernel.profile.support_max < 2 * d_max:
        d_max = kernel.profile.support_max / 2

    def transform(d: np.ndarray) -> np.ndarray:
        return 1.0 / kernel.values(d)

    def inverse_scalar(t: float) -> float:
        return 0.0 if t <= 0 else R_inverse(kernel, 1.0 / t)

    inverse = np.vectorize(inverse_scalar, otypes=[float])

    kappa = collinear_kappa(transform, d_min, d_max, samples)
    radii = np.geomspace(2 * d_min, d_max, samples)
    bound = float(np.max(kernel.values(radii / 2) / kernel.values(radii)))
    logger.info("inverse-R quasi-metric: kappa %.6g, doubling bound %.6g", kappa, bound)
    return QuasiMetric(
        MetricKind.INVERSE_R,
        kappa,
        1.0,
        {"d_min": d_min, "d_max": d_max},
        samples * samples,
        bound,
        transform,
        inverse,
    )


def build_snowflake_metric(
    gamma: float,
    n: float,
    gamma_tilde: float,
    d_min: float = 1e-3,
    d_max: float = 1e3,
    samples: int = 100,
) -> QuasiMetric:
    """d~ = d^delta1 for d > 1 and d^delta2 for d <= 1, delta1 = gamma / gamma~, delta2 = (n - 2) / gamma~."""
    if gamma <= 0 or n <= 2:
        raise PreconditionError(f"snowflake metric needs gamma > 0 and n > 2, got gamma={gamma}, n={n}")
    if gamma_tilde < max(gamma, n - 2):
        raise PreconditionError(f"gamma_tilde must be at least max(gamma, n - 2) = {max(gamma, n - 2):g}, got {gamma_tilde}")
    delta_far = gamma / gamma_tilde
    delta_near = (n - 2) / gamma_tilde

    def transform(d: np.ndarray) -> np.ndarray:
        return np.where(d > 1.0, d**delta_far, d**delta_near)

    def inverse(t: np.ndarray) -> np.ndarray:
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return np.where(t > 1.0, t ** (1.0 / delta_far), t ** (1.0 / delta_near))

    kappa = collinear_kappa(transform, d_min, d_max, samples)
    if kappa > 1.0 + 1e-12:
        logger.warning("snowflake with delta1=%.4g > delta2=%.4g is only a quasi-metric (kappa %.6g)", delta_far, delta_near, kappa)
    return QuasiMetric(
        MetricKind.SNOWFLAKE,
        kappa,
        gamma_tilde,
        {"gamma": gamma, "n": n, "gamma_tilde": gamma_tilde, "delta1": delta_far, "delta2": delta_near},
        samples * samples,
        None,
        transform,
        inverse,
    )


def build_power_metric(gamma: float) -> QuasiMetric:
    if gamma <= 0:
        raise PreconditionError(f"gamma must be positive, got {gamma}")
    return QuasiMetric(MetricKind.POWER_OF_DISTANCE, 1.0, gamma, {"gamma": gamma}, 0, None, np.asarray, np.asarray)


def two_regime_green(gamma: float, n: float) -> DistanceFunction:

    def green(d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return np.where(d >= 1.0, d ** (-gamma), d ** (2.0 - n))

    return green


def check_g_equiv_snowflake(
    green: DistanceFunction,
    metric: QuasiMetric,
    gamma_tilde: float,
    d_min: float = 1e-3,
    d_max: float = 1e3,
    samples: int = 1000,
) -> Tuple[float, float]:
    distances = np.geomspace(d_min, d_max, samples)
    products = np.asarray(green(distances)) * metric.distance(distances) ** gamma_tilde
    return float(np.min(products)), float(np.max(products))


def estimate_3g_constant(green: DistanceFunction, d_min: float = 1e-2, d_max: float = 1e2, samples: int = 64) -> float:

    def reciprocal(d: np.ndarray) -> np.ndarray:
        values = np.asarray(green(d), dtype=float)
        if np.any(values <= 0):
            raise PreconditionError("kernel must be positive on the sampled configurations")
        return 1.0 / values

    return collinear_kappa(reciprocal, d_min, d_max, samples)


def check_green_lower_bound(
    green: DistanceFunction,
    kernel: GreenRadialKernel,
    d_min: float,
    d_max: float,
    samples: int = 200,
) -> float:
    distances = np.geomspace(d_min, d_max, samples)
    return float(np.min(np.asarray(green(distances)) / kernel.values(distances)))


def check_green_power_lower_bound(
    green: DistanceFunction,
    metric: QuasiMetric,
    gamma: float,
    d_min: float,
    d_max: float,
    samples: int = 200,
) -> float:
    distances = np.geomspace(d_min, d_max, samples)
    return float(np.min(np.asarray(green(distances)) * metric.distance(distances) ** gamma))


def count_quasi_triangle_violations(metric: QuasiMetric, triples: int, seed: int, dimension: int = 3) -> int:
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(3, triples, dimension))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    scales = 10.0 ** rng.uniform(-2.0, 2.0, size=(3, triples, 1))
    x, y, z = directions * scales
    d_xz = metric.distance(np.linalg.norm(x - z, axis=1))
    d_xy = metric.distance(np.linalg.norm(x - y, axis=1))
    d_yz = metric.distance(np.linalg.norm(y - z, axis=1))
    violations = int(np.count_nonzero(d_xz > metric.kappa * (d_xy + d_yz) * (1 + 1e-12)))
    if violations:
        logger.warning("%d of %d random triples violate the collinear kappa %.6g", violations, triples, metric.kappa)
    return violations


@dataclass
class GridSpec:
    r_min: float = 1e-3
    r_max: float = 1e6
    nodes: int = 2048


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Shell-reduced Green kernel G_ij = R(max(rho_i, rho_j)) on a log-uniform radial grid."""

    radii: np.ndarray
    weights_mu: np.ndarray
    weights_sigma: np.ndarray
    green_values: np.ndarray
    matrix: np.ndarray = field(repr=False)
    kernel: GreenRadialKernel = field(repr=False)
    measure: MeasureProfile = field(repr=False)
    radial: bool = True

    @property
    def size(self) -> int:
        return int(self.radii.size)

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    def apply(self, masses: np.ndarray) -> np.ndarray:
        masses = np.asarray(masses, dtype=float)
        if not self.radial:
            return self.matrix @ masses
        inner = np.cumsum(masses)
        outer = np.concatenate([np.cumsum((self.green_values * masses)[::-1])[::-1][1:], [0.0]])
        return self.green_values * inner + outer

    def potential(self, values: np.ndarray) -> np.ndarray:
        return self.apply(np.asarray(values, dtype=float) * self.weights_sigma)

    def level_set_size(self, r: float) -> int:
        """Number of nodes in A(o, r) = {rho : R(rho) > 1/r}."""
        return int(np.count_nonzero(self.green_values > 1.0 / r))

    def level_set_potentials(self) -> np.ndarray:
        """Column k holds G(sigma restricted to the first k + 1 nodes) at every node."""
        return np.cumsum(self.matrix * self.weights_sigma[None, :], axis=1)

    def with_sigma(self, weights_sigma: np.ndarray) -> "DiscreteKernel":
        weights_sigma = np.asarray(weights_sigma, dtype=float)
        if weights_sigma.shape != self.radii.shape or np.any(weights_sigma < 0):
            raise PreconditionError("sigma weights must be non-negative and match the grid")
        return replace(self, weights_sigma=weights_sigma)

    def scaled_sigma(self, factor: float) -> "DiscreteKernel":
        if factor < 0:
            raise PreconditionError(f"sigma scale must be non-negative, got {factor}")
        return replace(self, weights_sigma=self.weights_sigma * factor, measure=self.measure.scaled(factor))

    def with_matrix(self, matrix: np.ndarray) -> "DiscreteKernel":
        return replace(self, matrix=np.asarray(matrix, dtype=float), radial=False)

    def check_invariants(self) -> List[str]:
        failed: List[str] = []
        matrix = self.matrix
        if not np.array_equal(matrix, matrix.T):
            failed.append("symmetry")
        if not np.all(matrix > 0):
            failed.append("positivity")
        upper = np.triu(np.ones_like(matrix, dtype=bool), 1)
        steps = np.diff(matrix, axis=1)
        if np.any(steps[upper[:, 1:]] > 0):
            failed.append("row_monotonicity")
        shell = np.broadcast_to(self.green_values[None, :], matrix.shape)
        if not np.array_equal(np.triu(matrix), np.triu(shell)):
            failed.append("shell_reduction")
        return failed


def shell_weights(profile: VolumeProfile, radii: np.ndarray) -> np.ndarray:
    """V'(rho_i) times the cell width between geometric midpoints; end cells are half cells."""
    midpoints = np.sqrt(radii[:-1] * radii[1:])
    edges = np.concatenate([[radii[0]], midpoints, [radii[-1]]])
    return np.asarray(profile.surface_density(radii), dtype=float) * np.diff(edges)


def discretize(kernel: GreenRadialKernel, measure: MeasureProfile, grid: Optional[GridSpec] = None) -> DiscreteKernel:
    spec = grid or GridSpec()
    if spec.nodes < 8:
        raise PreconditionError(f"grid needs at least 8 nodes, got {spec.nodes}")
    if not 0 < spec.r_min < spec.r_max:
        raise PreconditionError(f"grid needs 0 < r_min < r_max, got [{spec.r_min}, {spec.r_max}]")
    profile = kernel.profile
    if spec.r_min < profile.support_min or spec.r_max > profile.support_max:
        raise OutOfRangeError(f"grid [{spec.r_min:g}, {spec.r_max:g}] exceeds the tabulated profile range")
    radii = np.geomspace(spec.r_min, spec.r_max, spec.nodes)
    green_values = kernel.values(radii)
    weights_mu = shell_weights(profile, radii)
    weights_sigma = weights_mu * np.asarray(measure.density(radii), dtype=float)
    index = np.arange(spec.nodes)
    matrix = green_values[np.maximum.outer(index, index)]
    logger.debug("discretized %r on %d nodes over [%g, %g]", kernel, spec.nodes, spec.r_min, spec.r_max)
    return DiscreteKernel(radii, weights_mu, weights_sigma, green_values, matrix, kernel, measure)
