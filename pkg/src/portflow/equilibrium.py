"""Closed-form optimal controls, stationary field, and existence checks.

The optimal control has an explicit Lagrange form whose rows sum to one by
construction; the coupled field is found by a damped fixed point that
alternates the closed form with a direct stationary-distribution solve. For
the representative good the field also solves a K x K linear system whose
nonsingularity is the existence/uniqueness condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    DegenerateSystem,
    DivergedField,
    NonUniqueStationary,
    ZeroOccupancy,
)
from .model import (
    ControlPolicy,
    CostParameters,
    GoodValues,
    MeanField,
    PortNetwork,
    aggregate_occupancy,
    compute_weights,
    cost_functional,
)

__all__ = [
    "EquilibriumResult",
    "OmegaSystem",
    "ExistenceVerdict",
    "RepresentativeSolution",
    "VerificationReport",
    "optimal_control",
    "stationary_distribution",
    "fixed_point",
    "build_omega",
    "existence_check",
    "representative_solve",
    "verify_equilibrium",
    "projected_gradient",
]


@dataclass(frozen=True)
class EquilibriumResult:
    field: MeanField
    policy: ControlPolicy
    iterations: int
    stationarity_residual: float
    optimality_residual: float
    converged: bool


@dataclass(frozen=True)
class OmegaSystem:
    """Representative-good linear system Omega . phi = m.

    ``omega`` follows the row convention Omega[j, l] = R_j 1{j=l} - C[j, l];
    the transposed-C variant is kept as a diagnostic because the source
    derivation is ambiguous about the index order.

    Note the structural identity r^T Omega = 0 (and r^T m = 0): summing the
    stationarity equations weighted by the congestion coefficients is the
    row-sum identity of the closed-form control, so the system is always
    rank deficient by exactly one and its determinant vanishes for every
    parameter choice. The stationary field is nevertheless pinned down by
    the mass normalization along the null direction; see
    :func:`representative_solve`.
    """

    R: np.ndarray
    m: np.ndarray
    C: np.ndarray
    omega: np.ndarray
    determinant: float
    condition_estimate: float
    transposed_determinant: float
    reduced_condition: float  # largest / second-smallest singular value
    null_direction: np.ndarray  # unit right-null vector of Omega
    null_mass: float  # total mass carried by the null direction


@dataclass(frozen=True)
class ExistenceVerdict:
    verdict: str  # "unique" | "degenerate"
    determinant: float
    threshold: float
    condition_estimate: float
    condition_cap: float

    @property
    def unique(self) -> bool:
        return self.verdict == "unique"


@dataclass(frozen=True)
class RepresentativeSolution:
    phi: np.ndarray
    pre_rescale_mass: float
    residual: float


@dataclass(frozen=True)
class VerificationReport:
    max_row_sum_deviation: float
    stationarity_residual: float
    max_projected_gradient: float
    max_fd_gradient: float
    max_gradient_disagreement: float
    passes: bool
    tolerances: dict = dc_field(default_factory=dict)


def optimal_control(field: MeanField, params: CostParameters,
                    network: PortNetwork, values: GoodValues,
                    occupancy_floor_rel: float = 1e-12) -> ControlPolicy:
    """Closed-form maximizer of the reduced objective, one row per (n, i).

    Q[i, j] = (w[i, j] / phi_i) * (Mt[i, j] - <w_, Mt[i]>
              - (r_j phiB_j - <w_, r phiB>)) + w_[i, j]

    with Mt = M / 2, w_ the normalized weights and phiB the aggregate
    occupancy. Each row sums to one exactly through the Lagrange saturation;
    no renormalization is applied.

    Raises:
        ZeroOccupancy: if any phi^n_i is at or below the relative floor.
    """
    N, K = field.n_goods, field.n_ports
    phi = field.occupancy
    phi_bullet = aggregate_occupancy(field)
    r = params.congestion
    floor = occupancy_floor_rel * params.capacities
    Q = np.empty((N, K, K))
    for n in range(N):
        bad = np.flatnonzero(phi[n] <= floor[n])
        if bad.size:
            i = int(bad[0])
            raise ZeroOccupancy(n, i, float(phi[n, i]))
        weights = compute_weights(params, network, n)
        w, wn = weights.raw, weights.normalized
        Mt = values.margins(n) / 2.0
        rel_margin = Mt - (wn * Mt).sum(axis=1, keepdims=True)
        crowd = r * phi_bullet
        rel_crowd = crowd[None, :] - (wn * crowd[None, :]).sum(axis=1, keepdims=True)
        Q[n] = w * (rel_margin - rel_crowd) / phi[n][:, None] + wn
    return ControlPolicy(transitions=Q)


def stationary_distribution(Q_n: np.ndarray, capacity: float,
                            row_tol: float = 1e-9,
                            uniqueness_tol: float = 1e-8) -> np.ndarray:
    """Left fixed vector of a row-stochastic matrix, scaled to the capacity.

    Solved directly on the rank-deficient system (Q^T - I) phi = 0 augmented
    with the normalization row; power iteration is not applicable because the
    matrix may carry negative entries.

    Raises:
        NonUniqueStationary: if the eigenvalue-1 eigenspace has numerical
            dimension greater than one.
    """
    Q_n = np.asarray(Q_n, dtype=float)
    K = Q_n.shape[0]
    row_dev = np.abs(Q_n.sum(axis=1) - 1.0).max()
    if row_dev > row_tol * max(1.0, float(np.abs(Q_n).max())):
        raise ValueError(f"rows must sum to 1 within {row_tol}, got deviation {row_dev}")
    A = Q_n.T - np.eye(K)
    if K > 1:
        s = np.linalg.svd(A, compute_uv=False)
        scale = np.linalg.norm(Q_n, 2)
        threshold = uniqueness_tol * scale
        if s[-2] < threshold:
            raise NonUniqueStationary(float(s[-2]), float(threshold))
    augmented = np.vstack([A, np.ones((1, K))])
    rhs = np.zeros(K + 1)
    rhs[-1] = capacity
    phi, *_ = np.linalg.lstsq(augmented, rhs, rcond=None)
    return phi


def _stationarity_residual(field: MeanField, policy: ControlPolicy) -> float:
    phi = field.occupancy
    res = 0.0
    for n in range(field.n_goods):
        res = max(res, float(np.abs(phi[n] @ policy.transitions[n] - phi[n]).max()))
    return res


def fixed_point(params: CostParameters, network: PortNetwork, values: GoodValues,
                init: MeanField | None = None, damping: float = 0.5,
                tol: float = 1e-10, max_iter: int = 10000,
                restarts: int = 3) -> EquilibriumResult:
    """Damped fixed point phi <- (1 - a) phi + a stationary(optimal_control(phi)).

    All goods are updated from the same field snapshot (Jacobi order). The
    per-good capacity normalization holds at every iterate because the
    stationary solve rescales to F^n. Each step backtracks the damping just
    enough to keep the field strictly positive; if the iteration still
    fails or diverges, it restarts from scratch with the damping halved, up
    to ``restarts`` times.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    last_err: Exception | None = None
    for trial in range(restarts + 1):
        try:
            return _fixed_point_once(params, network, values, init,
                                     damping * 0.5 ** trial, tol, max_iter)
        except (ZeroOccupancy, NonUniqueStationary, DivergedField) as err:
            last_err = err
    raise last_err


def _fixed_point_once(params, network, values, init, damping, tol, max_iter):
    N, K = params.n_goods, params.n_ports
    F = params.capacities
    if init is None:
        field = MeanField(np.repeat(F[:, None] / K, K, axis=1))
    else:
        field = init
    bound = 1e3 * F.max()
    floor = 1e-10 * F.min() / K
    for iteration in range(1, max_iter + 1):
        try:
            policy = optimal_control(field, params, network, values)
            residual = _stationarity_residual(field, policy)
            if residual <= tol:
                opt_res = _max_projected_gradient(field, policy, params, network, values)
                return EquilibriumResult(field, policy, iteration, residual,
                                         opt_res, converged=True)
            new_phi = np.empty((N, K))
            for n in range(N):
                new_phi[n] = stationary_distribution(policy.transitions[n], F[n])
        except (ZeroOccupancy, NonUniqueStationary) as err:
            err.iteration = iteration
            raise
        step = new_phi - field.occupancy
        alpha = damping
        # backtrack the step so every occupancy stays strictly positive
        for _ in range(60):
            phi = field.occupancy + alpha * step
            if phi.min() > floor:
                break
            alpha *= 0.5
        else:
            phi = field.occupancy + alpha * step
        if np.abs(phi).max() > bound:
            raise DivergedField(iteration, float(np.abs(phi).max()), bound)
        field = MeanField(phi)
    policy = optimal_control(field, params, network, values)
    residual = _stationarity_residual(field, policy)
    opt_res = _max_projected_gradient(field, policy, params, network, values)
    return EquilibriumResult(field, policy, max_iter, residual, opt_res,
                             converged=False)


def build_omega(params: CostParameters, network: PortNetwork,
                values: GoodValues, good: int = 0) -> OmegaSystem:
    """Representative-good system: R, m, C and Omega = diag(R) - C.

    R_j = 1/r_j + sum_i w[i, j]
    m_j = (sum_i w[i, j] / r_j) * Mbar_j
    C[j, l] = (sum_i w[i, j] w_[i, l]) r_l / r_j + w_[l, j] / r_j

    where Mbar_j is the column-weighted average relative margin.
    """
    r = params.congestion
    weights = compute_weights(params, network, good)
    w, wn = weights.raw, weights.normalized
    Mt = values.margins(good) / 2.0
    rel_margin = Mt - (wn * Mt).sum(axis=1, keepdims=True)
    col_sum = w.sum(axis=0)
    Mbar = (w * rel_margin).sum(axis=0) / col_sum

    R = 1.0 / r + col_sum
    m = col_sum / r * Mbar
    C = (w.T @ wn) * r[None, :] / r[:, None] + wn.T / r[:, None]
    omega = np.diag(R) - C
    omega_t = np.diag(R) - C.T
    U, s, Vt = np.linalg.svd(omega)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
    reduced = float(s[0] / s[-2]) if omega.shape[0] > 1 and s[-2] > 0 else np.inf
    null = Vt[-1]
    if null.sum() < 0:
        null = -null
    return OmegaSystem(R=R, m=m, C=C, omega=omega,
                       determinant=float(np.linalg.det(omega)),
                       condition_estimate=cond,
                       transposed_determinant=float(np.linalg.det(omega_t)),
                       reduced_condition=reduced,
                       null_direction=null,
                       null_mass=float(null.sum()))


def existence_check(system: OmegaSystem, tol_det: float = 1e-10,
                    condition_cap: float = 1e12) -> ExistenceVerdict:
    """Unique iff |det Omega| clears a scale-relative threshold.

    The threshold is tol_det * ||Omega||_2 ** K so that rescaling the whole
    system by a positive factor cannot flip the verdict.
    """
    K = system.omega.shape[0]
    scale = float(np.linalg.norm(system.omega, 2))
    threshold = tol_det * scale ** K if scale > 0 else tol_det
    unique = (abs(system.determinant) > threshold
              and system.condition_estimate < condition_cap)
    return ExistenceVerdict(verdict="unique" if unique else "degenerate",
                            determinant=system.determinant,
                            threshold=threshold,
                            condition_estimate=system.condition_estimate,
                            condition_cap=condition_cap)


def representative_solve(system: OmegaSystem, capacity: float,
                         residual_tol: float = 1e-8,
                         rank_tol: float = 1e-10) -> RepresentativeSolution:
    """Solve Omega . phi = m and adjust the solution mass to the capacity.

    Because Omega carries the structural one-dimensional rank deficiency
    (see :class:`OmegaSystem`), the solve is a minimum-norm least-squares
    solve followed by a shift along the null direction so that the total
    mass equals ``capacity``; every point of that affine family satisfies
    the stationarity system exactly, and the mass constraint selects one.

    Raises:
        DegenerateSystem: when the rank deficiency exceeds the structural
            one, when m is inconsistent with the range of Omega, when the
            null direction carries no mass (so no shift can reach the
            capacity), or when the minimum-norm solution itself has
            (numerically) zero mass.
    """
    omega, m = system.omega, system.m
    K = omega.shape[0]
    scale = float(np.linalg.norm(omega, 2))
    if K > 1 and np.isfinite(system.reduced_condition):
        second_smallest = scale / system.reduced_condition
    else:
        second_smallest = 0.0
    if K > 1 and second_smallest <= rank_tol * scale:
        raise DegenerateSystem(
            "omega has more than the structural rank deficiency "
            f"(second-smallest singular value {second_smallest:.3e})")
    phi, *_ = np.linalg.lstsq(omega, m, rcond=None)
    residual = float(np.abs(omega @ phi - m).max())
    m_scale = float(np.abs(m).max())
    if m_scale > 0 and residual > residual_tol * m_scale:
        raise DegenerateSystem(
            f"right-hand side inconsistent (residual {residual:.3e})")
    mass = float(phi.sum())
    if abs(mass) <= 1e-12 * max(1.0, float(np.abs(phi).max())):
        raise DegenerateSystem("cannot normalize a zero-mass solution")
    if abs(system.null_mass) <= 1e-12:
        raise DegenerateSystem("null direction carries no mass")
    shift = (capacity - mass) / system.null_mass
    return RepresentativeSolution(phi=phi + shift * system.null_direction,
                                  pre_rescale_mass=mass, residual=residual)


def projected_gradient(origin: int, good: int, field: MeanField,
                       policy: ControlPolicy, params: CostParameters,
                       network: PortNetwork, values: GoodValues) -> np.ndarray:
    """Analytic objective gradient at the policy row, projected on {sum dq = 0}."""
    q = policy.transitions[good, origin]
    phi_i = field.occupancy[good, origin]
    phi_bullet = aggregate_occupancy(field)
    r = params.congestion
    c_n = params.transport[good]
    g_row = network.kernel_values[origin].copy()
    g_row[origin] = 0.0
    M_row = values.margins(good)[origin]
    grad = (phi_i * M_row
            - 2.0 * r * (phi_bullet + phi_i * q) * phi_i
            - 2.0 * c_n * g_row * phi_i ** 2 * q)
    return grad - grad.mean()


def _max_projected_gradient(field: MeanField, policy: ControlPolicy,
                            params: CostParameters, network: PortNetwork,
                            values: GoodValues) -> float:
    worst = 0.0
    for n in range(field.n_goods):
        for i in range(field.n_ports):
            g = projected_gradient(i, n, field, policy, params, network, values)
            worst = max(worst, float(np.abs(g).max()))
    return worst


def fd_projected_gradient(origin: int, good: int, field: MeanField,
                          policy: ControlPolicy, params: CostParameters,
                          network: PortNetwork, values: GoodValues,
                          fd_step: float = 1e-6) -> np.ndarray:
    """Central-difference counterpart of :func:`projected_gradient`."""
    q = policy.transitions[good, origin]
    K = q.shape[0]
    grad = np.empty(K)
    for j in range(K):
        up = q.copy()
        down = q.copy()
        up[j] += fd_step
        down[j] -= fd_step
        j_up = cost_functional(origin, good, up, field, params, network, values)
        j_down = cost_functional(origin, good, down, field, params, network, values)
        grad[j] = (j_up - j_down) / (2.0 * fd_step)
    return grad - grad.mean()


def verify_equilibrium(result: EquilibriumResult, params: CostParameters,
                       network: PortNetwork, values: GoodValues,
                       fd_step: float = 1e-6, row_tol: float = 1e-10,
                       stationarity_tol: float = 1e-10,
                       gradient_tol: float = 1e-5,
                       disagreement_tol: float = 1e-4) -> VerificationReport:
    """Independent optimality report: row sums, stationarity, and the
    analytic-vs-finite-difference projected gradient at every (n, i) row."""
    field, policy = result.field, result.policy
    row_dev = float(policy.row_sum_residual.max())
    stat_res = _stationarity_residual(field, policy)
    max_analytic = 0.0
    max_fd = 0.0
    max_disagreement = 0.0
    for n in range(field.n_goods):
        for i in range(field.n_ports):
            analytic = projected_gradient(i, n, field, policy, params, network, values)
            fd = fd_projected_gradient(i, n, field, policy, params, network,
                                       values, fd_step)
            max_analytic = max(max_analytic, float(np.abs(analytic).max()))
            max_fd = max(max_fd, float(np.abs(fd).max()))
            max_disagreement = max(max_disagreement,
                                   float(np.abs(analytic - fd).max()))
    passes = (row_dev <= row_tol and stat_res <= stationarity_tol
              and max_analytic <= gradient_tol
              and max_fd <= gradient_tol
              and max_disagreement <= disagreement_tol)
    return VerificationReport(
        max_row_sum_deviation=row_dev,
        stationarity_residual=stat_res,
        max_projected_gradient=max_analytic,
        max_fd_gradient=max_fd,
        max_gradient_disagreement=max_disagreement,
        passes=passes,
        tolerances={"row_sum": row_tol, "stationarity": stationarity_tol,
                    "gradient": gradient_tol, "disagreement": disagreement_tol},
    )
