from __future__ import annotations

import logging
import math
from typing import Callable, List, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate as scipy_integrate

from .errors import NumericalFailureError, PreconditionError

logger = logging.getLogger(__name__)

GAUSS_ORDER = 8
_NODES, _WEIGHTS = leggauss(GAUSS_ORDER)

ArrayFunction = Callable[[np.ndarray], np.ndarray]
ScalarFunction = Callable[[float], float]

DECADES_BELOW_UPPER = 12


def log_grid(lower: float, upper: float, per_decade: int) -> np.ndarray:
    if not 0 < lower < upper:
        raise PreconditionError(f"log grid needs 0 < lower < upper, got [{lower}, {upper}]")
    decades = math.log10(upper / lower)
    count = max(int(math.ceil(decades * per_decade)), 1) + 1
    return np.geomspace(lower, upper, count)


def refine_edges(points: np.ndarray, per_decade: int = 64, extra: Sequence[float] = ()) -> np.ndarray:
    """Sorted union of ``points``, a log grid spanning them and any ``extra`` breakpoints inside the span."""
    pts = np.unique(np.asarray(points, dtype=float).ravel())
    lo, hi = float(pts[0]), float(pts[-1])
    pieces: List[np.ndarray] = [pts]
    if hi > lo:
        pieces.append(log_grid(lo, hi, per_decade))
        inside = [float(value) for value in extra if lo < value < hi]
        if inside:
            pieces.append(np.asarray(inside, dtype=float))
    return np.unique(np.concatenate(pieces))


def gauss_nodes(edges: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flattened Gauss-Legendre nodes and weights of the composite rule on ``edges``."""
    left = edges[:-1]
    right = edges[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    nodes = mid[:, None] + half[:, None] * _NODES[None, :]
    weights = half[:, None] * _WEIGHTS[None, :]
    return nodes.ravel(), weights.ravel()


def cell_integrals(func: ArrayFunction, edges: np.ndarray) -> np.ndarray:
    """Gauss-Legendre integral of ``func`` over every cell ``[edges[k], edges[k+1]]``."""
    nodes, weights = gauss_nodes(edges)
    values = np.asarray(func(nodes), dtype=float)
    return (values * weights).reshape(-1, GAUSS_ORDER).sum(axis=1)


def integrate_grid(func: ArrayFunction, lower: float, upper: float, per_decade: int = 16, extra: Sequence[float] = ()) -> float:
    if upper <= lower:
        return 0.0
    edges = refine_edges(np.array([lower, upper]), per_decade, extra)
    return float(np.sum(cell_integrals(func, edges)))


def cumulative_from_top(func: ArrayFunction, edges: np.ndarray) -> np.ndarray:
    """Entry k is the integral of ``func`` over ``[edges[k], edges[-1]]``."""
    cells = cell_integrals(func, edges)
    return np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])


def cumulative_from_bottom(func: ArrayFunction, edges: np.ndarray) -> np.ndarray:
    """Entry k is the integral of ``func`` over ``[edges[0], edges[k]]``."""
    cells = cell_integrals(func, edges)
    return np.concatenate([[0.0], np.cumsum(cells)])


def _adaptive_edges(lower: float, upper: float, breakpoints: Sequence[float]) -> List[float]:
    if lower == 0.0:
        edges = [0.0] + [upper * 10.0 ** (-k) for k in range(DECADES_BELOW_UPPER, 0, -1)] + [upper]
    else:
        decades = int(math.ceil(math.log10(upper / lower)))
        edges = [lower * 10.0**k for k in range(decades)] + [upper]
    edges.extend(value for value in breakpoints if lower < value < upper)
    return sorted(set(edge for edge in edges if lower <= edge <= upper))


def integrate(
    func: ScalarFunction,
    lower: float,
    upper: float,
    rel_tol: float = 1e-10,
    breakpoints: Sequence[float] = (),
) -> float:
    """Adaptive quadrature over ``[lower, upper]`` split at decades and breakpoints."""
    if upper <= lower:
        return 0.0
    edges = _adaptive_edges(lower, upper, breakpoints)
    total = 0.0
    error = 0.0
    flagged = False
    for left, right in zip(edges[:-1], edges[1:]):
        result = scipy_integrate.quad(func, left, right, epsabs=0.0, epsrel=rel_tol, limit=200, full_output=1)
        total += result[0]
        error += result[1]
        if len(result) > 3:
            flagged = True
            logger.debug("quad warning on [%g, %g]: %s", left, right, result[3])
    if flagged and error > max(1e-6, 1e3 * rel_tol) * abs(total):
        raise NumericalFailureError(
            f"quadrature on [{lower:g}, {upper:g}] did not converge (error {error:.3g})",
            partial_estimate=total,
        )
    return total


def integrate_to_infinity(func: ScalarFunction, lower: float, rel_tol: float = 1e-10) -> float:
    result = scipy_integrate.quad(func, lower, np.inf, epsabs=0.0, epsrel=rel_tol, limit=400, full_output=1)
    value, error = result[0], result[1]
    if len(result) > 3 and error > max(1e-6, 1e3 * rel_tol) * abs(value):
        raise NumericalFailureError(f"improper quadrature from {lower:g} did not converge", partial_estimate=value)
    return value


def fit_log_slope(radii: np.ndarray, values: np.ndarray) -> float:
    radii = np.asarray(radii, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.isfinite(values) & (values > 0)
    if np.count_nonzero(mask) < 2:
        if np.any(np.isinf(values)):
            return math.inf
        return -math.inf
    slope, _ = np.polyfit(np.log(radii[mask]), np.log(values[mask]), 1)
    return float(slope)
