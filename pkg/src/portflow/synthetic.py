"""Reproducible ground-truth instances and flow time series.

The generator is the package's oracle supply: it produces cost/value
parameters whose stationary field is known exactly (capacities are derived
from the consistent joint solve, so a true fixed point exists), and flow
series that embed the per-route regression model exactly, which makes the
inference pipeline verifiable end to end without proprietary data.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import pandas as pd

from .equilibrium import optimal_control
from .errors import ProxyInversionFailure
from .flows import FlowSeries
from .model import (
    ControlPolicy,
    CostParameters,
    GoodValues,
    Kernel,
    MeanField,
    PortNetwork,
    compute_weights,
)

__all__ = [
    "SyntheticSpec",
    "SyntheticInstance",
    "RouteCoefficients",
    "SimulatedSeries",
    "generate_instance",
    "theoretical_coefficients",
    "calibration_intercepts",
    "simulate_series",
    "consistent_field",
]

BACKGROUND_GOOD = "background"


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for instance and series generation; pure function of the seed."""

    seed: int
    K: int = 4
    N: int = 1
    horizon_days: int = 400
    noise_sigma: float = 0.0  # fraction of the mean route flow
    mode: str = "regression_exact"  # or "equilibrium_consistent"
    r_range: tuple[float, float] = (0.85, 1.15)
    c_range: tuple[float, float] = (0.06, 0.15)
    v_range: tuple[float, float] = (-0.10, 0.10)
    t_range: tuple[float, float] = (0.4, 1.2)
    shift_days: int = 60
    window_days: int = 20
    r_bar: float = 1.0  # gauge: sum r = K * r_bar
    require_nonnegative_policy: bool = False
    start_date: str = "2020-01-01"
    # regression_exact series shape: total-inflow target level (x aggregate
    # occupancy) with its AR(1) sigma and clip band; the good's import
    # level (x occupancy); and the self-loop AR(1) sigma and clip band
    inflow_level: float = 1.25
    inflow_sigma: float = 0.035
    inflow_clip: tuple[float, float] = (0.91, 1.09)
    import_level: float = 1.0
    selfloop_sigma: float = 0.08
    selfloop_clip: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.mode not in ("regression_exact", "equilibrium_consistent"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.shift_days < 0 or self.window_days < 1:
            raise ValueError("need shift_days >= 0 and window_days >= 1")
        if self.horizon_days < self.shift_days + self.window_days + self.K + 3:
            raise ValueError("horizon too short for identifiable regressions")
        for lo, hi in (self.r_range, self.c_range, self.t_range):
            if lo < 0 or hi < lo:
                raise ValueError("parameter ranges must be ordered and nonnegative")


@dataclass(frozen=True)
class SyntheticInstance:
    network: PortNetwork
    params: CostParameters
    values: GoodValues
    field: MeanField  # exact stationary field of the generated instance
    policy: ControlPolicy  # closed-form control at that field
    attempts: int
    degenerate_draws: int


@dataclass(frozen=True)
class RouteCoefficients:
    """Per-route regression-model coefficients for one good.

    ``intercepts`` is K x K (diagonal unused), ``crowd_slopes`` is K x K x K
    with [i, j, l] the slope on destination l's crowdedness, ``self_slopes``
    is K x K.
    """

    intercepts: np.ndarray
    crowd_slopes: np.ndarray
    self_slopes: np.ndarray


@dataclass(frozen=True)
class SimulatedSeries:
    series: FlowSeries
    coefficients: RouteCoefficients
    truncated: int
    regressed_good: str
    n_regression_days: int


def _joint_stationarity_matrix(params, network, values):
    """Assemble the N*K x N*K affine system whose solution is the exact
    stationary field, and its right-hand side."""
    N, K = params.n_goods, params.n_ports
    r = params.congestion
    A = np.zeros((N * K, N * K))
    b = np.zeros(N * K)
    for n in range(N):
        weights = compute_weights(params, network, n)
        w, wn = weights.raw, weights.normalized
        Mt = values.margins(n) / 2.0
        rel_margin = Mt - (wn * Mt).sum(axis=1, keepdims=True)
        col_sum = w.sum(axis=0)
        Mbar = (w * rel_margin).sum(axis=0) / col_sum
        D = w.T @ wn  # D[j, l] = sum_i w[i, j] wn[i, l]
        rows = slice(n * K, (n + 1) * K)
        # coupling through the aggregate occupancy (every good m)
        coupling = np.diag(col_sum * r) - D * r[None, :]
        for m in range(N):
            cols = slice(m * K, (m + 1) * K)
            A[rows, cols] += coupling
        A[rows, rows] += np.eye(K) - wn.T
        b[n * K:(n + 1) * K] = col_sum * Mbar
    return A, b


def consistent_field(params: CostParameters, network: PortNetwork,
                     values: GoodValues) -> np.ndarray:
    """Exact stationary field (N x K) of the joint affine system.

    The system carries one structural rank deficiency per good (the
    stationarity equations of each good sum to zero against the congestion
    coefficients), so the minimum-norm solution is shifted along the
    N-dimensional null space until each good's mass matches its capacity.
    """
    N, K = params.n_goods, params.n_ports
    A, b = _joint_stationarity_matrix(params, network, values)
    _, s, Vt = np.linalg.svd(A)
    if N * K > N and s[-(N + 1)] <= 1e-10 * s[0]:
        raise np.linalg.LinAlgError("rank deficiency beyond the structural one")
    phi, *_ = np.linalg.lstsq(A, b, rcond=None)
    null = Vt[-N:]  # N x (N*K) basis of the null space
    good_mass = null.reshape(N, N, K).sum(axis=2).T  # [n, basis index]
    deficit = params.capacities - phi.reshape(N, K).sum(axis=1)
    coeffs = np.linalg.solve(good_mass, deficit)
    phi = phi + coeffs @ null
    return phi.reshape(N, K)


def generate_instance(spec: SyntheticSpec) -> SyntheticInstance:
    """Draw an instance with a known positive stationary field.

    Capacities are drawn around mean occupancy one and the field is the
    exact mass-pinned stationary solution, so the damped fixed point has an
    exact target. Draws whose field is not strictly positive are resampled
    and counted.
    """
    rng = np.random.default_rng(spec.seed)
    K, N = spec.K, spec.N
    labels = tuple(f"P{k + 1}" for k in range(K))
    degenerate = 0
    for attempt in range(1, 501):
        r = rng.uniform(*spec.r_range, size=K)
        r = r * (K * spec.r_bar / r.sum())
        c = rng.uniform(*spec.c_range, size=N)
        T = rng.uniform(*spec.t_range, size=(K, K))
        T = 0.5 * (T + T.T)  # symmetric travel costs, generic off-diagonal
        np.fill_diagonal(T, 0.0)
        v = rng.uniform(*spec.v_range, size=(N, K))
        v = v - v.mean(axis=1, keepdims=True)
        F = K * rng.uniform(0.8, 1.2, size=N)

        network = PortNetwork(labels, T, Kernel("linear"))
        params = CostParameters(congestion=r, transport=c, capacities=F)
        values = GoodValues(v)
        try:
            phi = consistent_field(params, network, values)
        except np.linalg.LinAlgError:
            degenerate += 1
            continue
        if np.any(phi <= 0.0):
            degenerate += 1
            continue
        field = MeanField(phi)
        policy = optimal_control(field, params, network, values)
        if spec.require_nonnegative_policy and policy.has_negative:
            degenerate += 1
            continue
        return SyntheticInstance(network=network, params=params, values=values,
                                 field=field, policy=policy, attempts=attempt,
                                 degenerate_draws=degenerate)
    raise RuntimeError("could not draw a usable instance in 500 attempts")


def theoretical_coefficients(params: CostParameters, network: PortNetwork,
                             values: GoodValues, field: MeanField,
                             good: int = 0) -> RouteCoefficients:
    """Exact right-hand sides of the per-route regression model.

    intercepts[i, j]   = w[i, j] (Mt[i, j] - sum_l wn[i, l] Mt[i, l])
    crowd_slopes[i, j, l] = w[i, j] (wn[i, l] - 1{l = j}) r_l
    self_slopes[i, j]  = wn[i, j]
    """
    weights = compute_weights(params, network, good)
    w, wn = weights.raw, weights.normalized
    r = params.congestion
    K = network.n_ports
    Mt = values.margins(good) / 2.0
    rel_margin = Mt - (wn * Mt).sum(axis=1, keepdims=True)
    intercepts = w * rel_margin
    eye = np.eye(K)
    crowd = w[:, :, None] * (wn[:, None, :] - eye[None, :, :]) * r[None, None, :]
    return RouteCoefficients(intercepts=intercepts, crowd_slopes=crowd,
                             self_slopes=wn.copy())


def calibration_intercepts(params: CostParameters, network: PortNetwork,
                           values: GoodValues, good: int = 0) -> np.ndarray:
    """Forward map of the calibration objective: A[i, j] = w[i, j] (v_j - v_i).

    This is the linearized intercept model the parameter-recovery step
    inverts; it differs from the weighted relative margin of
    :func:`theoretical_coefficients` by the unweighted-average approximation.
    """
    w = compute_weights(params, network, good).raw
    v = values.values[good]
    return w * (v[None, :] - v[:, None])


def _ar1(rng, length: int, rho: float = 0.9, sigma: float = 0.05) -> np.ndarray:
    """Stationary AR(1) path with unit mean and relative std sigma."""
    innovation_scale = sigma * np.sqrt(1.0 - rho ** 2)
    x = np.empty(length)
    x[0] = sigma * rng.standard_normal()
    eps = innovation_scale * rng.standard_normal(length - 1)
    for t in range(1, length):
        x[t] = rho * x[t - 1] + eps[t - 1]
    return 1.0 + x


def _regression_exact_series(spec, instance, coeffs, rng):
    """Series whose derived (Y, X, Z) satisfy the regression model exactly.

    The crowdedness regressor looks ``shift + 1 .. shift + window`` days
    ahead, so the records are generated in reverse time: a target
    total-inflow path per port and the tail days are laid down first, then
    each earlier day computes its proxy from the already-realized future
    inflows, applies the route equation, solves the same-day import
    identity, and tops the port up to its target with the background good.

    Whenever the solved import total would crowd the background below its
    floor, the good's own self-loop is trimmed for that day so the port
    still lands exactly on its target inflow.  That keeps the realized
    arrivals equal to the exogenous target paths, which is what makes the
    reverse recursion stable: the proxy then depends only on the targets,
    never on earlier (later-generated) days.  Because the proxy is
    recomputed from the realized records, the rare days where both the
    self-loop and the background bottom out stay consistent with the
    regression; only truncated negative route flows break exactness.

    At zero noise a truncation would silently break the inverse crime, so
    the generation retries with the fluctuation bands scaled down (the
    centered paths always give strictly positive flows) and raises only if
    even the narrowest band truncates.

    The good's own self-loop (ships that stay put) is emitted around a
    level consistent with the configured import scale, with an independent
    fluctuation: it keeps the import regressor identified separately from
    the crowdedness columns, which the same-day solve would otherwise tie
    into an exactly collinear noise-free design.
    """
    K = spec.K
    H = spec.horizon_days
    s, m = spec.shift_days, spec.window_days
    labels = instance.network.port_labels
    phi = instance.field.occupancy
    phi_bullet = phi.sum(axis=0)
    good = "G1"

    A = coeffs.intercepts
    B = coeffs.crowd_slopes
    C = coeffs.self_slopes
    off = ~np.eye(K, dtype=bool)
    eye = np.eye(K, dtype=bool)

    # self-loop level consistent with the import scale at the reference
    # crowdedness, floored at 5% occupancy
    eq_flow = phi[0][:, None] * instance.policy.transitions[0]
    chat = np.where(off, C, 0.0)
    z_level = spec.import_level * phi[0]
    x_ref = phi_bullet
    G0 = A + np.einsum("ijl,l->ij", B, x_ref)
    G0[eye] = 0.0
    self_level = np.maximum(z_level - G0.sum(axis=0) - chat.T @ z_level,
                            0.05 * phi[0])

    mean_flow = float(np.mean(eq_flow[off]))
    sigma_abs = spec.noise_sigma * mean_flow
    n_reg = H - (s + m)
    solve_T = np.linalg.inv(np.eye(K) - chat.T)
    bg_floor = 0.02 * phi_bullet

    # reverse-time pass: tail days carry the equilibrium flow, regression
    # days apply the route equation to the future-window proxy; negative
    # route draws are truncated on the spot so the emitted records and the
    # proxies computed from them stay identical
    self_min = 0.05 * phi[0]
    tail_colsum = np.where(off, np.maximum(eq_flow, 0.0), 0.0).sum(axis=0)
    tail_truncated = (H - n_reg) * int(np.count_nonzero(eq_flow[off] < 0.0))

    def narrowed(clip, band):
        lo, hi = clip
        return 1.0 + band * (lo - 1.0), 1.0 + band * (hi - 1.0)

    def generate_pass(band):
        target = np.empty((K, H))
        for j in range(K):
            path = np.clip(_ar1(rng, H, sigma=band * spec.inflow_sigma),
                           *narrowed(spec.inflow_clip, band))
            target[j] = spec.inflow_level * phi_bullet[j] * path
        self_factor = np.empty((K, H))
        for i in range(K):
            self_factor[i] = np.clip(
                _ar1(rng, H, sigma=band * spec.selfloop_sigma),
                *narrowed(spec.selfloop_clip, band))
        selfloop = self_level[:, None] * self_factor
        Y_full = np.empty((K, K, H))
        Y_full[:, :, n_reg:] = np.where(off, np.maximum(eq_flow, 0.0),
                                        0.0)[:, :, None]
        truncated = tail_truncated
        floored = 0
        background = np.empty((K, H))
        inflow = np.empty((K, H))  # realized arrivals (good + background)
        for t in range(H - 1, n_reg - 1, -1):
            cap = target[:, t] - bg_floor
            Y_full[eye, t] = np.clip(selfloop[:, t], self_min,
                                     np.maximum(cap - tail_colsum, self_min))
            good_in = Y_full[:, :, t].sum(axis=0)
            background[:, t] = np.maximum(target[:, t] - good_in, bg_floor)
            inflow[:, t] = good_in + background[:, t]
        for t in range(n_reg - 1, -1, -1):
            X = inflow[:, t + s + 1:t + s + m + 1].mean(axis=1)
            G = A + B @ X
            if sigma_abs > 0:
                G = G + sigma_abs * rng.standard_normal((K, K))
            G[eye] = 0.0
            # trim the self-loop until the implied imports leave room for
            # the background floor; the solve keeps imports equal to good
            # arrivals
            cap = target[:, t] - bg_floor
            S = selfloop[:, t]
            for _ in range(8):
                Z = solve_T @ (S + G.sum(axis=0))
                excess = Z - cap
                if not np.any((excess > 1e-12) & (S > self_min)):
                    break
                S = np.maximum(S - np.maximum(excess, 0.0), self_min)
            Z = solve_T @ (S + G.sum(axis=0))
            day = np.where(off, G + chat * Z[:, None], 0.0)
            truncated += int(np.count_nonzero(day < 0.0))
            Y_full[:, :, t] = np.maximum(day, 0.0)
            Y_full[eye, t] = S
            good_in = Y_full[:, :, t].sum(axis=0)
            background[:, t] = np.maximum(target[:, t] - good_in, bg_floor)
            floored += int(np.count_nonzero(target[:, t] - good_in < bg_floor))
            inflow[:, t] = good_in + background[:, t]
        return Y_full, background, truncated, floored

    for band in (1.0, 0.75, 0.5, 0.3, 0.0):
        Y_full, background, truncated, floored_background = generate_pass(band)
        if truncated == 0 or spec.noise_sigma > 0.0:
            break
    if truncated and spec.noise_sigma == 0.0:
        raise ProxyInversionFailure(
            f"{truncated} exact route flows came out negative even with "
            "centered paths; narrow the parameter ranges")

    dates = pd.date_range(spec.start_date, periods=H, freq="D")
    records = []
    for i in range(K):
        for j in range(K):
            flows = Y_full[i, j]
            for t in np.flatnonzero(flows > 0.0):
                records.append((dates[t], labels[i], labels[j], good,
                                float(flows[t])))
    for j in range(K):
        for t in np.flatnonzero(background[j] > 0.0):
            records.append((dates[t], labels[j], labels[j], BACKGROUND_GOOD,
                            float(background[j][t])))
    series = FlowSeries.from_records(records)
    return SimulatedSeries(series=series, coefficients=coeffs,
                           truncated=truncated, regressed_good=good,
                           n_regression_days=n_reg)


def _equilibrium_series(spec, instance, rng):
    """Daily flows phi*_i Q*_{i,j} (1 + noise) around the solved equilibrium."""
    K, N, H = spec.K, spec.N, spec.horizon_days
    labels = instance.network.port_labels
    flows = instance.field.occupancy[:, :, None] * instance.policy.transitions
    dates = pd.date_range(spec.start_date, periods=H, freq="D")
    truncated = 0
    records = []
    for n in range(N):
        good = f"G{n + 1}"
        for i in range(K):
            for j in range(K):
                base = flows[n, i, j]
                if base == 0.0:
                    continue
                daily = np.full(H, base)
                if spec.noise_sigma > 0:
                    daily = base * (1.0 + spec.noise_sigma
                                    * rng.standard_normal(H))
                    truncated += int(np.count_nonzero(daily < 0.0))
                    daily = np.maximum(daily, 0.0)
                for t in range(H):
                    records.append((dates[t], labels[i], labels[j], good,
                                    float(daily[t])))
    series = FlowSeries.from_records(records)
    coeffs = theoretical_coefficients(instance.params, instance.network,
                                      instance.values, instance.field)
    return SimulatedSeries(series=series, coefficients=coeffs,
                           truncated=truncated, regressed_good="G1",
                           n_regression_days=H - (spec.shift_days
                                                  + spec.window_days))


def simulate_series(spec: SyntheticSpec, instance: SyntheticInstance,
                    coefficients: RouteCoefficients | None = None) -> SimulatedSeries:
    """Emit a flow series for the instance under the spec's mode.

    ``regression_exact`` embeds the route regression model exactly (the
    default coefficients use the calibration forward map for the intercepts
    and the theoretical crowd/self slopes); ``equilibrium_consistent`` emits
    stationary flows around the solved field. All quantities are >= 0
    (negative draws are truncated and counted).
    """
    rng = np.random.default_rng(spec.seed + 1_000_003)
    if spec.mode == "equilibrium_consistent":
        return _equilibrium_series(spec, instance, rng)
    if coefficients is None:
        theory = theoretical_coefficients(instance.params, instance.network,
                                          instance.values, instance.field)
        coefficients = RouteCoefficients(
            intercepts=calibration_intercepts(instance.params,
                                              instance.network,
                                              instance.values),
            crowd_slopes=theory.crowd_slopes,
            self_slopes=theory.self_slopes)
    return _regression_exact_series(spec, instance, coefficients, rng)
