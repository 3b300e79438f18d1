"""Two-step calibration: per-route regressions, then constrained recovery.

Step 1 runs K(K-1) ordinary least squares fits of daily exports on the
destination crowdedness proxies and same-day imports. Step 2 inverts the
fitted intercepts through a bounded, gauge-fixed nonlinear least squares
with multiple seeded starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import optimize

from .errors import (
    EmptyDataset,
    GaugeInfeasible,
    InsufficientHistory,
    InsufficientRoutes,
    RankDeficient,
    SolverFailure,
)
from .flows import FlowSeries
from .model import PortNetwork

__all__ = [
    "CrowdednessConfig",
    "GaugeConfig",
    "InferenceConfig",
    "RegressionDataset",
    "RegressionCoefficients",
    "CalibrationResult",
    "PipelineResult",
    "crowdedness_proxy",
    "build_regression_dataset",
    "ols_fit",
    "calibrate",
    "infer_pipeline",
]


@dataclass(frozen=True)
class CrowdednessConfig:
    """Forward shift s and window length m of the crowdedness proxy."""

    shift_days: int = 60
    window_days: int = 20

    def __post_init__(self):
        if self.shift_days < 0:
            raise ValueError("shift_days must be >= 0")
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")


@dataclass(frozen=True)
class GaugeConfig:
    """Normalizations pinning the calibration's flat directions."""

    r_bar: float = 1.0  # sum r_j = K * r_bar
    r_min: float = 0.1
    c_max: float = 50.0


@dataclass(frozen=True)
class InferenceConfig:
    crowdedness: CrowdednessConfig = dc_field(default_factory=CrowdednessConfig)
    gauge: GaugeConfig = dc_field(default_factory=GaugeConfig)
    good: str | None = None  # default: first good in the series
    date_start: str | None = None
    date_end: str | None = None
    ridge: float = 0.0
    n_starts: int = 16
    seed: int = 0


@dataclass(frozen=True)
class RegressionDataset:
    route: tuple[str, str]
    good: str
    Y: np.ndarray  # daily exports origin -> destination
    X: np.ndarray  # n_obs x K crowdedness proxies (column order = labels)
    Z: np.ndarray  # same-day imports at the origin
    labels: tuple[str, ...]

    @property
    def n_obs(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class RegressionCoefficients:
    route: tuple[str, str]
    intercept: float
    crowd_slopes: np.ndarray
    self_slope: float
    n_obs: int
    r_squared: float
    residual_variance: float
    coefficient_standard_errors: np.ndarray  # intercept, K slopes, self slope
    ridge: float = 0.0


@dataclass(frozen=True)
class CalibrationResult:
    transport_cost: float
    congestion: np.ndarray
    values: np.ndarray
    gauge: dict
    objective: float
    solver_status: str
    per_route_residuals: np.ndarray  # K x K, nan off the fitted routes
    min_curvature: float
    n_starts_converged: int


@dataclass(frozen=True)
class PipelineResult:
    coefficients: dict
    route_errors: dict
    intercepts: np.ndarray  # K x K assembled A matrix (nan where missing)
    calibration: CalibrationResult
    labels: tuple[str, ...]
    good: str


def crowdedness_proxy(series: FlowSeries, config: CrowdednessConfig,
                      destination: str):
    """Forward-shifted window average of total inflow to the destination.

    proxy(t) = (1/m) sum_{tau=1..m} inflow(t + s + tau); emitted for each t
    whose full window lies inside the record range.

    Returns (dates, values); raises InsufficientHistory when no admissible
    date remains.
    """
    s, m = config.shift_days, config.window_days
    inflow = series.inflow_series(destination)
    length = inflow.shape[0] - (s + m)
    if length <= 0:
        raise InsufficientHistory(
            f"need more than {s + m} days of history, have {inflow.shape[0]}")
    cum = np.concatenate([[0.0], np.cumsum(inflow)])
    values = (cum[s + m + 1:] - cum[s + 1:s + 1 + length]) / m
    return series.dates[:length], values


def build_regression_dataset(series: FlowSeries, config: CrowdednessConfig,
                             route: tuple[str, str], good: str,
                             labels=None) -> RegressionDataset:
    """Samples (Y, X_1..X_K, Z) for one route and good.

    Y is the daily export on the route, X the crowdedness proxies of all
    destinations, Z the same-day good imports at the origin. Days whose proxy
    window is not covered are dropped.
    """
    origin, destination = route
    if labels is None:
        labels = tuple(series.labels)
    labels = tuple(labels)
    proxies = []
    for label in labels:
        _, values = crowdedness_proxy(series, config, label)
        proxies.append(values)
    X = np.column_stack(proxies)
    n = X.shape[0]
    if n == 0:
        raise EmptyDataset(f"no usable days for route {origin}->{destination}")
    Y = series.route_series(origin, destination, good)[:n]
    Z = series.inflow_series(origin, good=good)[:n]
    return RegressionDataset(route=route, good=good, Y=Y, X=X, Z=Z,
                             labels=labels)


def ols_fit(dataset: RegressionDataset, ridge: float = 0.0,
            condition_cap: float = 1e10) -> RegressionCoefficients:
    """Least squares with intercept over (X_1..X_K, Z).

    Standard errors come from the unbiased residual-variance estimator. An
    optional ridge penalty (slopes only) stabilizes collinear designs and is
    recorded in the output.

    Raises:
        RankDeficient: when the design's condition number exceeds the cap,
            naming the offending columns.
        EmptyDataset: with fewer than K + 3 observations.
    """
    K = dataset.X.shape[1]
    n = dataset.n_obs
    p = K + 2
    if n < p + 1:
        raise EmptyDataset(f"need at least {p + 1} observations, have {n}")
    design = np.column_stack([np.ones(n), dataset.X, dataset.Z])
    names = ["intercept"] + [f"crowd[{lab}]" for lab in dataset.labels] + ["imports"]
    cond = np.linalg.cond(design)
    if cond > condition_cap:
        _, _, vt = np.linalg.svd(design, full_matrices=False)
        weights = np.abs(vt[-1])
        flagged = [names[k] for k in np.flatnonzero(weights > 0.5 * weights.max())]
        raise RankDeficient(
            f"design condition number {cond:.3e} exceeds {condition_cap:.0e}",
            columns=flagged)
    gram = design.T @ design
    if ridge > 0.0:
        penalty = np.ones(p) * ridge
        penalty[0] = 0.0
        gram = gram + np.diag(penalty)
    beta = np.linalg.solve(gram, design.T @ dataset.Y)
    residuals = dataset.Y - design @ beta
    rss = float(residuals @ residuals)
    centered = dataset.Y - dataset.Y.mean()
    tss = float(centered @ centered)
    r_squared = 1.0 - rss / tss if tss > 0 else 0.0
    dof = n - p
    residual_variance = rss / dof
    covariance = residual_variance * np.linalg.inv(gram)
    standard_errors = np.sqrt(np.diag(covariance))
    return RegressionCoefficients(
        route=dataset.route, intercept=float(beta[0]),
        crowd_slopes=beta[1:1 + K], self_slope=float(beta[-1]), n_obs=n,
        r_squared=float(r_squared), residual_variance=float(residual_variance),
        coefficient_standard_errors=standard_errors, ridge=ridge)


def _gauge_project(theta: np.ndarray, K: int, gauge: GaugeConfig) -> np.ndarray:
    """Push a start onto the gauge manifold and inside the bounds."""
    theta = theta.copy()
    theta[0] = np.clip(theta[0], 0.0, gauge.c_max)
    r = np.clip(theta[1:1 + K], gauge.r_min, None)
    shortfall = K * gauge.r_bar - r.sum()
    slack = r - gauge.r_min
    if slack.sum() > 0 or shortfall >= 0:
        if shortfall >= 0:
            r = r + shortfall / K
        else:
            r = gauge.r_min + slack * (K * (gauge.r_bar - gauge.r_min) / slack.sum())
    theta[1:1 + K] = r
    theta[1 + K:] -= theta[1 + K:].mean()
    return theta


def calibrate(intercepts: np.ndarray, network: PortNetwork,
              gauge: GaugeConfig | None = None, n_starts: int = 16,
              seed: int = 0) -> CalibrationResult:
    """Recover (c, r, v) from the fitted route intercepts.

    Minimizes sum over fitted routes of
    (A_ij (r_j + c g(T_ij)) - (v_j - v_i))^2 subject to r >= r_min, c >= 0
    and the gauge constraints sum v = 0, sum r = K * r_bar, using seeded
    multi-start SLSQP; the best converged start is kept.

    ``intercepts`` is K x K with nan on the diagonal and any missing routes.
    """
    gauge = gauge or GaugeConfig()
    K = network.n_ports
    if gauge.r_min > gauge.r_bar:
        raise GaugeInfeasible(
            f"r_min={gauge.r_min} exceeds the gauge mean r_bar={gauge.r_bar}")
    A = np.asarray(intercepts, dtype=float)
    mask = np.isfinite(A) & ~np.eye(K, dtype=bool)
    rows, cols = np.nonzero(mask)
    a = A[rows, cols]
    g = network.kernel_values[rows, cols]

    def residuals(theta):
        c, r, v = theta[0], theta[1:1 + K], theta[1 + K:]
        return a * (r[cols] + c * g) - (v[cols] - v[rows])

    def objective(theta):
        res = residuals(theta)
        return float(res @ res)

    def gradient(theta):
        c, r = theta[0], theta[1:1 + K]
        res = residuals(theta)
        grad = np.zeros(2 * K + 1)
        grad[0] = 2.0 * float(res @ (a * g))
        np.add.at(grad[1:1 + K], cols, 2.0 * res * a)
        np.add.at(grad[1 + K:], cols, -2.0 * res)
        np.add.at(grad[1 + K:], rows, 2.0 * res)
        return grad

    bounds = ([(0.0, gauge.c_max)] + [(gauge.r_min, None)] * K
              + [(None, None)] * K)
    constraints = [
        {"type": "eq", "fun": lambda th: th[1:1 + K].sum() - K * gauge.r_bar,
         "jac": lambda th: np.concatenate([[0.0], np.ones(K), np.zeros(K)])},
        {"type": "eq", "fun": lambda th: th[1 + K:].sum(),
         "jac": lambda th: np.concatenate([[0.0], np.zeros(K), np.ones(K)])},
    ]
    rng = np.random.default_rng(seed)
    best = None
    n_converged = 0
    scale = max(float(np.abs(a).max()), 1e-12)
    for start_index in range(n_starts):
        if start_index == 0:
            theta0 = np.concatenate([[1.0], np.full(K, gauge.r_bar),
                                     np.zeros(K)])
        else:
            theta0 = np.concatenate([
                [rng.uniform(0.0, 2.0)],
                gauge.r_bar * rng.uniform(0.5, 1.5, size=K),
                rng.uniform(-1.0, 1.0, size=K) * 2.0 * scale,
            ])
        theta0 = _gauge_project(theta0, K, gauge)
        result = optimize.minimize(
            objective, theta0, jac=gradient, method="SLSQP", bounds=bounds,
            constraints=constraints,
            options={"maxiter": 500, "ftol": 1e-16})
        if not np.all(np.isfinite(result.x)):
            continue
        theta = _gauge_project(result.x, K, gauge)
        value = objective(theta)
        if result.success or value < 1e-12:
            n_converged += 1
            if best is None or value < best[0]:
                best = (value, theta, result.message)
    if best is None:
        raise SolverFailure("no calibration start converged")
    value, theta, message = best
    c, r, v = float(theta[0]), theta[1:1 + K].copy(), theta[1 + K:].copy()
    res = residuals(theta)
    per_route = np.full((K, K), np.nan)
    per_route[rows, cols] = res

    # curvature diagnostics on the gauge tangent space (flat directions show
    # up as near-zero eigenvalues of the projected Gauss-Newton Hessian)
    J = np.zeros((res.shape[0], 2 * K + 1))
    J[:, 0] = a * g
    J[np.arange(res.shape[0]), 1 + cols] = a
    np.add.at(J, (np.arange(res.shape[0]), 1 + K + cols), -1.0)
    np.add.at(J, (np.arange(res.shape[0]), 1 + K + rows), 1.0)
    constraint_normals = np.stack([
        np.concatenate([[0.0], np.ones(K), np.zeros(K)]),
        np.concatenate([[0.0], np.zeros(K), np.ones(K)]),
    ])
    q, _ = np.linalg.qr(constraint_normals.T, mode="complete")
    tangent = q[:, 2:]
    hessian = tangent.T @ (J.T @ J) @ tangent
    min_curvature = float(np.linalg.eigvalsh(hessian)[0])

    return CalibrationResult(
        transport_cost=c, congestion=r, values=v,
        gauge={"sum_v": 0.0, "sum_r": K * gauge.r_bar, "r_min": gauge.r_min,
               "r_bar": gauge.r_bar},
        objective=value, solver_status=str(message),
        per_route_residuals=per_route, min_curvature=min_curvature,
        n_starts_converged=n_converged)


def infer_pipeline(series: FlowSeries, network: PortNetwork,
                   config: InferenceConfig | None = None) -> PipelineResult:
    """Full two-step pipeline: proxies, K(K-1) fits, assembled A, calibration.

    Per-route failures are collected, not fatal; the pipeline fails only when
    fewer than K + 1 routes are usable for calibration.
    """
    config = config or InferenceConfig()
    if series.is_empty:
        raise EmptyDataset("flow series is empty")
    if config.date_start or config.date_end:
        series = series.restrict(config.date_start, config.date_end)
        if series.is_empty:
            raise EmptyDataset("no records in the requested date window")
    labels = tuple(network.port_labels)
    good = config.good
    if good is None:
        candidates = [g for g in series.goods if g != "background"]
        if not candidates:
            raise EmptyDataset("no regressable good in the series")
        good = candidates[0]
    K = len(labels)
    coefficients = {}
    route_errors = {}
    A = np.full((K, K), np.nan)
    for i, origin in enumerate(labels):
        for j, destination in enumerate(labels):
            if i == j:
                continue
            route = (origin, destination)
            try:
                dataset = build_regression_dataset(series, config.crowdedness,
                                                   route, good, labels=labels)
                fit = ols_fit(dataset, ridge=config.ridge)
            except (EmptyDataset, InsufficientHistory, RankDeficient) as err:
                route_errors[route] = f"{type(err).__name__}: {err}"
                continue
            coefficients[route] = fit
            A[i, j] = fit.intercept
    usable = int(np.count_nonzero(np.isfinite(A)))
    if usable < K + 1:
        raise InsufficientRoutes(
            f"only {usable} usable routes, need at least {K + 1}")
    calibration = calibrate(A, network, gauge=config.gauge,
                            n_starts=config.n_starts, seed=config.seed)
    return PipelineResult(coefficients=coefficients, route_errors=route_errors,
                          intercepts=A, calibration=calibration,
                          labels=labels, good=good)
