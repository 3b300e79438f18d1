"""Tests for the proxy, regression, and calibration pipeline."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from portflow import (
    CrowdednessConfig,
    FlowSeries,
    GaugeConfig,
    InferenceConfig,
    SyntheticSpec,
    build_regression_dataset,
    calibrate,
    crowdedness_proxy,
    generate_instance,
    infer_pipeline,
    ols_fit,
    simulate_series,
)
from portflow.synthetic import calibration_intercepts
from portflow.errors import (
    EmptyDataset,
    GaugeInfeasible,
    InsufficientHistory,
    InsufficientRoutes,
    RankDeficient,
)

from conftest import make_instance


def series_from_inflow(inflow, destination="B"):
    """Flow series whose daily inflow to the destination is the given path."""
    records = [(f"2024-01-{d + 1:02d}" if d < 31 else f"2024-02-{d - 30:02d}",
                "A", destination, "G1", float(x))
               for d, x in enumerate(inflow)]
    return FlowSeries.from_records(records)


# --- crowdedness proxy ---------------------------------------------------- #

def test_proxy_matches_manual_window_average():
    inflow = np.arange(1.0, 31.0)
    series = series_from_inflow(inflow)
    config = CrowdednessConfig(shift_days=3, window_days=4)
    dates, values = crowdedness_proxy(series, config, "B")
    # proxy(t) = mean of inflow[t + 4 .. t + 7]
    expected = [inflow[t + 4:t + 8].mean() for t in range(len(values))]
    np.testing.assert_allclose(values, expected, rtol=1e-12)
    assert len(values) == 30 - 3 - 4
    assert dates[0] == series.dates[0]


def test_proxy_scaling_by_powers_of_two_is_bitwise_exact():
    rng = np.random.default_rng(5)
    base = rng.uniform(1.0, 2.0, size=30)
    config = CrowdednessConfig(shift_days=2, window_days=3)
    _, p_base = crowdedness_proxy(series_from_inflow(base), config, "B")
    for scale in (2.0, 0.25, 8.0):
        _, p_scaled = crowdedness_proxy(series_from_inflow(scale * base),
                                        config, "B")
        np.testing.assert_array_equal(p_scaled, scale * p_base)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.1, 100.0), offset=st.floats(0.0, 50.0))
def test_proxy_is_linear_in_the_inflow(scale, offset):
    rng = np.random.default_rng(5)
    base = rng.uniform(1.0, 2.0, size=30)
    config = CrowdednessConfig(shift_days=2, window_days=3)
    _, p_base = crowdedness_proxy(series_from_inflow(base), config, "B")
    _, p_scaled = crowdedness_proxy(series_from_inflow(scale * base), config,
                                    "B")
    _, p_shift = crowdedness_proxy(series_from_inflow(base + offset), config,
                                   "B")
    np.testing.assert_allclose(p_scaled, scale * p_base, rtol=1e-14)
    np.testing.assert_allclose(p_shift, p_base + offset, rtol=1e-13,
                               atol=1e-13)


def test_proxy_insufficient_history():
    series = series_from_inflow(np.ones(5))
    with pytest.raises(InsufficientHistory):
        crowdedness_proxy(series, CrowdednessConfig(shift_days=10,
                                                    window_days=10), "B")


# --- regression ----------------------------------------------------------- #

def synthetic_pipeline_inputs(seed=31, K=4, horizon=200, noise=0.0):
    spec = SyntheticSpec(seed=seed, K=K, horizon_days=horizon,
                         noise_sigma=noise)
    instance = generate_instance(spec)
    simulated = simulate_series(spec, instance)
    return spec, instance, simulated


def test_dataset_shapes_and_alignment():
    spec, instance, simulated = synthetic_pipeline_inputs()
    labels = instance.network.port_labels
    config = CrowdednessConfig(shift_days=spec.shift_days,
                               window_days=spec.window_days)
    dataset = build_regression_dataset(simulated.series, config,
                                       (labels[0], labels[1]),
                                       simulated.regressed_good,
                                       labels=labels)
    assert dataset.X.shape == (len(dataset.Y), spec.K)
    assert dataset.Z.shape == dataset.Y.shape
    assert len(dataset.Y) == simulated.n_regression_days


def test_ols_recovers_exact_linear_model():
    spec, instance, simulated = synthetic_pipeline_inputs()
    labels = instance.network.port_labels
    config = CrowdednessConfig(shift_days=spec.shift_days,
                               window_days=spec.window_days)
    coeffs = simulated.coefficients
    for (i, j) in [(0, 1), (2, 3), (3, 0)]:
        dataset = build_regression_dataset(simulated.series, config,
                                           (labels[i], labels[j]),
                                           simulated.regressed_good,
                                           labels=labels)
        fit = ols_fit(dataset)
        assert fit.intercept == pytest.approx(coeffs.intercepts[i, j],
                                              abs=1e-8)
        np.testing.assert_allclose(fit.crowd_slopes, coeffs.crowd_slopes[i, j],
                                   atol=1e-8)
        assert fit.self_slope == pytest.approx(coeffs.self_slopes[i, j],
                                               abs=1e-8)
        assert fit.r_squared > 1.0 - 1e-12


def test_ols_residuals_orthogonal_to_design():
    spec, instance, simulated = synthetic_pipeline_inputs(noise=0.02)
    labels = instance.network.port_labels
    config = CrowdednessConfig(shift_days=spec.shift_days,
                               window_days=spec.window_days)
    dataset = build_regression_dataset(simulated.series, config,
                                       (labels[0], labels[1]),
                                       simulated.regressed_good, labels=labels)
    fit = ols_fit(dataset)
    fitted = (fit.intercept + dataset.X @ fit.crowd_slopes
              + fit.self_slope * dataset.Z)
    residual = dataset.Y - fitted
    design = np.column_stack([np.ones_like(dataset.Y), dataset.X, dataset.Z])
    moments = design.T @ residual
    scale = np.abs(design).max(axis=0) * np.abs(dataset.Y).max() * len(residual)
    assert np.all(np.abs(moments) <= 1e-8 * np.maximum(scale, 1.0))


def test_ols_standard_errors_match_covariance_formula():
    rng = np.random.default_rng(9)
    n, K = 200, 3
    X = rng.normal(1.0, 0.3, size=(n, K))
    Z = rng.normal(2.0, 0.5, size=n)
    beta = np.array([0.4, -0.2, 0.1])
    Y = 1.0 + X @ beta + 0.5 * Z + 0.05 * rng.standard_normal(n)
    from portflow.inference import RegressionDataset

    dataset = RegressionDataset(route=("A", "B"), good="G1",
                                labels=("L1", "L2", "L3"), Y=Y, X=X, Z=Z)
    fit = ols_fit(dataset)
    design = np.column_stack([np.ones(n), X, Z])
    residual = Y - design @ np.linalg.lstsq(design, Y, rcond=None)[0]
    s2 = residual @ residual / (n - design.shape[1])
    se = np.sqrt(np.diag(s2 * np.linalg.inv(design.T @ design)))
    np.testing.assert_allclose(fit.coefficient_standard_errors, se, rtol=1e-8)


def test_ols_flags_collinear_columns():
    n = 50
    rng = np.random.default_rng(2)
    x = rng.normal(size=n)
    X = np.column_stack([x, x, rng.normal(size=n)])  # duplicated column
    from portflow.inference import RegressionDataset

    dataset = RegressionDataset(route=("A", "B"), good="G1",
                                labels=("L1", "L2", "L3"),
                                Y=rng.normal(size=n),
                                X=X, Z=rng.normal(size=n))
    with pytest.raises(RankDeficient) as excinfo:
        ols_fit(dataset)
    assert len(excinfo.value.columns) >= 1
    # with the cap lifted, the ridge penalty makes the same design solvable
    fit = ols_fit(dataset, ridge=1e-6, condition_cap=1e17)
    assert fit.ridge == 1e-6


def test_ols_needs_enough_rows():
    from portflow.inference import RegressionDataset

    n, K = 4, 3
    rng = np.random.default_rng(3)
    dataset = RegressionDataset(route=("A", "B"), good="G1",
                                labels=("L1", "L2", "L3"),
                                Y=rng.normal(size=n),
                                X=rng.normal(size=(n, K)),
                                Z=rng.normal(size=n))
    with pytest.raises(EmptyDataset):
        ols_fit(dataset)


# --- calibration ---------------------------------------------------------- #

def test_calibrate_recovers_truth_from_exact_intercepts():
    _, instance = make_instance(seed=41, K=4)
    A = calibration_intercepts(instance.params, instance.network,
                               instance.values)
    result = calibrate(A, instance.network, seed=0)
    assert result.transport_cost == pytest.approx(
        instance.params.transport[0], rel=1e-4)
    np.testing.assert_allclose(result.congestion, instance.params.congestion,
                               rtol=1e-4)
    np.testing.assert_allclose(result.values, instance.values.values[0],
                               atol=1e-4)
    assert result.objective <= 1e-10
    assert result.n_starts_converged >= 1


def test_calibrate_reports_gauge():
    _, instance = make_instance(seed=42, K=4)
    A = calibration_intercepts(instance.params, instance.network,
                               instance.values)
    result = calibrate(A, instance.network,
                       gauge=GaugeConfig(r_bar=2.0), seed=0)
    assert np.sum(result.congestion) == pytest.approx(4 * 2.0, rel=1e-8)
    assert np.sum(result.values) == pytest.approx(0.0, abs=1e-8)


def test_calibrate_infeasible_gauge():
    _, instance = make_instance(seed=43, K=4)
    A = calibration_intercepts(instance.params, instance.network,
                               instance.values)
    with pytest.raises(GaugeInfeasible):
        calibrate(A, instance.network,
                  gauge=GaugeConfig(r_bar=0.5, r_min=1.0), seed=0)


# --- pipeline ------------------------------------------------------------- #

def test_pipeline_inverse_crime_zero_noise():
    spec, instance, simulated = synthetic_pipeline_inputs(seed=44, K=4,
                                                          horizon=250)
    config = InferenceConfig(
        crowdedness=CrowdednessConfig(shift_days=spec.shift_days,
                                      window_days=spec.window_days),
        good=simulated.regressed_good, seed=0)
    result = infer_pipeline(simulated.series, instance.network, config)
    assert not result.route_errors
    calibration = result.calibration
    np.testing.assert_allclose(calibration.congestion,
                               instance.params.congestion, rtol=1e-4)
    assert calibration.transport_cost == pytest.approx(
        instance.params.transport[0], rel=1e-3, abs=1e-4)
    np.testing.assert_allclose(calibration.values,
                               instance.values.values[0], atol=1e-4)


def test_pipeline_requires_enough_routes():
    _, instance = make_instance(seed=45, K=4)
    records = [("2024-01-01", "P1", "P2", "G1", 1.0)]
    series = FlowSeries.from_records(records)
    with pytest.raises(InsufficientRoutes):
        infer_pipeline(series, instance.network,
                       InferenceConfig(good="G1"))
