import math

import numpy as np
import pytest
from scipy.special import exp1

from src.pipelines.greencrit.errors import DivergenceError, OutOfRangeError, PreconditionError
from src.pipelines.greencrit.green import (
    GreenRadialKernel,
    GridSpec,
    MetricKind,
    R_eval,
    R_inverse,
    build_power_metric,
    build_quasi_metric_inverseR,
    build_snowflake_metric,
    check_g_equiv_snowflake,
    check_green_lower_bound,
    check_green_power_lower_bound,
    check_R_doubling,
    count_quasi_triangle_violations,
    discretize,
    estimate_3g_constant,
    two_regime_green,
)
from src.pipelines.greencrit.profiles import MeasureProfile, VolumeProfile


def test_R_closed_forms() -> None:
    assert R_eval(GreenRadialKernel(VolumeProfile.euclidean(3)), 1.0) == pytest.approx(3 / (4 * math.pi), rel=1e-10)
    assert R_eval(GreenRadialKernel(VolumeProfile.power(1, 4)), 2.0) == pytest.approx(1 / 8, rel=1e-10)


def test_R_powerlog_matches_exponential_integral() -> None:
    # t / V(t) = 1 / (t^3 ln t) beyond e, so u = ln t turns the tail into E1(2 ln rho).
    kernel = GreenRadialKernel(VolumeProfile.power_log(1, 4, 1))
    expected = exp1(2 * math.log(10.0))
    assert R_eval(kernel, 10.0) == pytest.approx(expected, rel=1e-8)
    np.testing.assert_allclose(kernel.values(np.array([10.0, 100.0])), [expected, exp1(2 * math.log(100.0))], rtol=1e-8)


def test_R_two_regime_piecewise() -> None:
    kernel = GreenRadialKernel(VolumeProfile.two_regime(3, 4))
    radii = np.array([0.5, 1.0, 3.0])
    expected = [1.5, 0.5, 1 / 18]
    np.testing.assert_allclose(kernel.values(radii), expected, rtol=1e-9)
    assert kernel.value(0.5) == pytest.approx(1.5, rel=1e-9)


def test_R_tabulated_tail_uses_fitted_exponent() -> None:
    radii = np.geomspace(1e-2, 1e4, 600)
    kernel = GreenRadialKernel(VolumeProfile.tabulated(radii, VolumeProfile.power(1, 4).volume(radii)))
    assert kernel.tail_exponent == pytest.approx(4.0)
    assert kernel.value(2.0) == pytest.approx(1 / 8, rel=1e-6)
    assert kernel.value(1e5) == pytest.approx(0.5e-10, rel=1e-6)


def test_parabolic_profile_has_no_kernel() -> None:
    with pytest.raises(DivergenceError):
        GreenRadialKernel(VolumeProfile.euclidean(2))


def test_R_inverse_cases() -> None:
    assert R_inverse(GreenRadialKernel(VolumeProfile.euclidean(3)), 3 / (4 * math.pi)) == pytest.approx(1.0, rel=1e-10)
    assert R_inverse(GreenRadialKernel(VolumeProfile.power(1, 4)), 1 / 8) == pytest.approx(2.0, rel=1e-10)


@pytest.mark.parametrize("family", ["powerlog", "two_regime", "tabulated"])
def test_R_inverse_round_trip(family: str) -> None:
    table_r = np.geomspace(1e-2, 1e4, 600)
    profiles = {
        "powerlog": VolumeProfile.power_log(1, 4, 1),
        "two_regime": VolumeProfile.two_regime(3, 4),
        "tabulated": VolumeProfile.tabulated(table_r, VolumeProfile.power(1, 4).volume(table_r)),
    }
    kernel = GreenRadialKernel(profiles[family])
    rng = np.random.default_rng(11)
    for rho in np.exp(rng.uniform(math.log(0.1), math.log(1e3), 50)):
        value = kernel.value(float(rho))
        recovered = R_inverse(kernel, value)
        assert kernel.value(recovered) == pytest.approx(value, rel=1e-9)
        assert recovered == pytest.approx(rho, rel=1e-7)


def test_R_inverse_rejects_non_positive_values() -> None:
    kernel = GreenRadialKernel(VolumeProfile.euclidean(3))
    with pytest.raises(OutOfRangeError):
        R_inverse(kernel, 0.0)
    with pytest.raises(OutOfRangeError):
        R_inverse(kernel, -1.0)


def test_check_R_doubling_cases() -> None:
    assert check_R_doubling(GreenRadialKernel(VolumeProfile.euclidean(3)), 1.0, 1e2) == pytest.approx(2.0)
    assert check_R_doubling(GreenRadialKernel(VolumeProfile.power(1, 4)), 1.0, 1e2) == pytest.approx(4.0)
    constant = check_R_doubling(GreenRadialKernel(VolumeProfile.power_log(1, 4, 1)), 10.0, 1e5)
    assert 4.0 < constant <= 6.0


def test_inverse_r_metric() -> None:
    metric = build_quasi_metric_inverseR(GreenRadialKernel(VolumeProfile.euclidean(3)))
    assert metric.kind is MetricKind.INVERSE_R
    assert metric.kappa == pytest.approx(1.0, rel=1e-9)
    assert metric.kappa_bound == pytest.approx(2.0)
    squared = build_quasi_metric_inverseR(GreenRadialKernel(VolumeProfile.power(1, 4)))
    assert squared.kappa == pytest.approx(2.0, rel=1e-9)
    np.testing.assert_allclose(metric.radius_of(metric.distance(np.array([0.5, 3.0]))), [0.5, 3.0], rtol=1e-9)


@pytest.mark.parametrize(
    "gamma, n, gamma_tilde, delta1, delta2",
    [(1, 3, 1, 1.0, 1.0), (2, 4, 2, 1.0, 1.0), (1, 4, 2, 0.5, 1.0)],
)
def test_snowflake_exponents(gamma: float, n: float, gamma_tilde: float, delta1: float, delta2: float) -> None:
    metric = build_snowflake_metric(gamma, n, gamma_tilde)
    assert metric.params["delta1"] == pytest.approx(delta1)
    assert metric.params["delta2"] == pytest.approx(delta2)
    assert metric.kappa == pytest.approx(1.0)
    assert metric.exponent == gamma_tilde


def test_snowflake_triangle_inequality_on_random_triples() -> None:
    metric = build_snowflake_metric(1, 4, 2)
    assert count_quasi_triangle_violations(metric, 10_000, seed=0) == 0


def test_snowflake_rejects_small_gamma_tilde() -> None:
    with pytest.raises(PreconditionError):
        build_snowflake_metric(2, 3, 1)


def test_snowflake_radius_inverts_distance() -> None:
    metric = build_snowflake_metric(1, 4, 2)
    np.testing.assert_allclose(metric.radius_of(np.array([0.25, 3.0])), [0.25, 9.0])
    np.testing.assert_allclose(metric.distance(np.array([0.0, 9.0])), [0.0, 3.0])


def test_g_equiv_snowflake_exact_kernel() -> None:
    lower, upper = check_g_equiv_snowflake(two_regime_green(1, 4), build_snowflake_metric(1, 4, 2), 2)
    assert lower == pytest.approx(1.0)
    assert upper == pytest.approx(1.0)


def test_g_equiv_snowflake_green_kernel() -> None:
    kernel = GreenRadialKernel(VolumeProfile.two_regime(3, 4))
    lower, upper = check_g_equiv_snowflake(kernel.values, build_snowflake_metric(2, 3, 2), 2)
    assert 0.4 < lower <= upper <= 1.0 + 1e-9


def test_three_g_constants() -> None:
    assert estimate_3g_constant(lambda d: 1.0 / d) == pytest.approx(1.0)
    assert estimate_3g_constant(lambda d: d**-2.0) == pytest.approx(2.0)


def test_three_g_constant_is_stable_for_powerlog() -> None:
    kernel = GreenRadialKernel(VolumeProfile.power_log(1, 4, 1))
    coarse = estimate_3g_constant(kernel.values, samples=32)
    fine = estimate_3g_constant(kernel.values, samples=128)
    assert math.isfinite(fine)
    assert abs(fine - coarse) <= 0.05 * fine


def test_green_lower_bounds() -> None:
    kernel = GreenRadialKernel(VolumeProfile.euclidean(3))
    assert check_green_lower_bound(kernel.values, kernel, 1e-2, 1e2) == pytest.approx(1.0)
    bound = check_green_power_lower_bound(two_regime_green(1, 4), build_snowflake_metric(1, 4, 2), 2, 1e-3, 1e3)
    assert bound == pytest.approx(1.0)


def test_power_metric_is_a_metric() -> None:
    metric = build_power_metric(2.0)
    assert metric.kind is MetricKind.POWER_OF_DISTANCE
    assert count_quasi_triangle_violations(metric, 2_000, seed=1) == 0


def test_discretize_rows_follow_shell_formula() -> None:
    dk = discretize(GreenRadialKernel(VolumeProfile.euclidean(3)), MeasureProfile.unit(), GridSpec(1.0, 128.0, 8))
    np.testing.assert_allclose(dk.radii, 2.0 ** np.arange(8))
    expected = [3 / (4 * math.pi), 3 / (8 * math.pi), 3 / (16 * math.pi)]
    np.testing.assert_allclose(dk.matrix[0, :3], expected, rtol=1e-12)
    np.testing.assert_allclose(dk.matrix[2, :3], [expected[2]] * 3, rtol=1e-12)
    assert dk.check_invariants() == []


def test_discretize_needs_eight_nodes() -> None:
    with pytest.raises(PreconditionError):
        discretize(GreenRadialKernel(VolumeProfile.euclidean(3)), MeasureProfile.unit(), GridSpec(1.0, 4.0, 3))


def test_discretize_outside_table_range() -> None:
    radii = np.geomspace(1e-2, 1e4, 200)
    kernel = GreenRadialKernel(VolumeProfile.tabulated(radii, VolumeProfile.power(1, 4).volume(radii)))
    with pytest.raises(OutOfRangeError):
        discretize(kernel, MeasureProfile.unit(), GridSpec(1e-3, 1e3, 64))


def test_shell_apply_matches_matrix() -> None:
    dk = discretize(GreenRadialKernel(VolumeProfile.two_regime(3, 4)), MeasureProfile.unit(), GridSpec(1e-2, 1e3, 64))
    masses = np.random.default_rng(0).random(dk.size)
    np.testing.assert_allclose(dk.apply(masses), dk.matrix @ masses, rtol=1e-12)
    assert dk.level_set_size(2.0 / (dk.green_values[9] + dk.green_values[10])) == 10


def test_corrupted_matrix_breaks_symmetry() -> None:
    dk = discretize(GreenRadialKernel(VolumeProfile.euclidean(3)), MeasureProfile.unit(), GridSpec(1e-2, 1e3, 16))
    matrix = dk.matrix.copy()
    matrix[0, -1] *= 1.5
    assert "symmetry" in dk.with_matrix(matrix).check_invariants()


def test_scaled_sigma() -> None:
    dk = discretize(GreenRadialKernel(VolumeProfile.euclidean(3)), MeasureProfile.unit(), GridSpec(1e-2, 1e3, 16))
    np.testing.assert_allclose(dk.scaled_sigma(2.0).weights_sigma, 2 * dk.weights_sigma)
    assert not np.any(dk.scaled_sigma(0.0).weights_sigma)
    with pytest.raises(PreconditionError):
        dk.scaled_sigma(-1.0)
