"""Tests for the control, fixed point, linear system, and verification."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from portflow import (
    MeanField,
    GoodValues,
    optimal_control,
    stationary_distribution,
    fixed_point,
    build_omega,
    existence_check,
    representative_solve,
    verify_equilibrium,
)
from portflow.equilibrium import (
    projected_gradient,
    fd_projected_gradient,
    _stationarity_residual,
)
from portflow.model import cost_functional
from portflow.errors import ZeroOccupancy, NonUniqueStationary, DegenerateSystem

from conftest import make_instance, symmetric_case


# --- closed-form control -------------------------------------------------- #

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(2, 6), N=st.integers(1, 3))
def test_control_rows_sum_to_one(seed, K, N):
    _, instance = make_instance(seed=seed, K=K, N=N)
    policy = optimal_control(instance.field, instance.params,
                             instance.network, instance.values)
    assert policy.row_sum_residual.max() <= 1e-12


def test_control_stationary_at_projected_gradient_zero(instance):
    for i in range(instance.network.n_ports):
        grad = projected_gradient(i, 0, instance.field, instance.policy,
                                  instance.params, instance.network,
                                  instance.values)
        assert np.abs(grad).max() <= 1e-9


def test_control_maximizes_over_random_perturbations(instance, rng):
    K = instance.network.n_ports
    for i in range(K):
        base = cost_functional(i, 0, instance.policy.transitions[0, i],
                               instance.field, instance.params,
                               instance.network, instance.values)
        for _ in range(20):
            delta = rng.standard_normal(K)
            delta -= delta.mean()  # stay on the sum-one affine plane
            other = instance.policy.transitions[0, i] + 0.01 * delta
            perturbed = cost_functional(i, 0, other, instance.field,
                                        instance.params, instance.network,
                                        instance.values)
            assert perturbed <= base + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-5.0, 5.0,
                                                    allow_nan=False))
def test_value_shift_leaves_control_invariant(seed, shift):
    _, instance = make_instance(seed=seed)
    shifted = GoodValues(instance.values.values + shift)
    base = optimal_control(instance.field, instance.params,
                           instance.network, instance.values)
    moved = optimal_control(instance.field, instance.params,
                            instance.network, shifted)
    scale = np.maximum(np.abs(base.transitions), 1.0)
    ulp = np.finfo(float).eps
    assert np.max(np.abs(base.transitions - moved.transitions) / scale) <= 4 * ulp


def test_port_relabeling_equivariance(instance):
    from portflow import Kernel, PortNetwork, CostParameters

    perm = np.array([2, 0, 3, 1])
    network = instance.network
    T = network.travel_cost[np.ix_(perm, perm)]
    labels = tuple(network.port_labels[p] for p in perm)
    params = CostParameters(congestion=instance.params.congestion[perm],
                            transport=instance.params.transport,
                            capacities=instance.params.capacities)
    values = GoodValues(instance.values.values[:, perm])
    field = MeanField(instance.field.occupancy[:, perm])
    permuted = optimal_control(field, params,
                               PortNetwork(labels, T, network.kernel),
                               values)
    expected = instance.policy.transitions[:, perm][:, :, perm]
    # Relabeling reorders the float reductions, so equality holds to machine
    # precision rather than bitwise.
    scale = np.maximum(np.abs(expected), 1.0)
    ulp = np.finfo(float).eps
    assert np.max(np.abs(permuted.transitions - expected) / scale) <= 4 * ulp


def test_zero_occupancy_raises():
    network, params, values = symmetric_case()
    field = MeanField(np.array([[1.0, 1.0, 0.0, 2.0]]))
    with pytest.raises(ZeroOccupancy) as excinfo:
        optimal_control(field, params, network, values)
    assert excinfo.value.port == 2


# --- stationary distribution ---------------------------------------------- #

def test_stationary_distribution_on_known_chain():
    Q = np.array([[0.9, 0.1], [0.2, 0.8]])  # pi proportional to (2, 1)
    pi = stationary_distribution(Q, capacity=3.0)
    np.testing.assert_allclose(pi, np.array([2.0, 1.0]), rtol=1e-12)


def test_stationary_distribution_scales_to_capacity(instance):
    pi = stationary_distribution(instance.policy.transitions[0], capacity=7.5)
    assert pi.sum() == pytest.approx(7.5, rel=1e-12)


def test_reducible_chain_rejected():
    Q = np.eye(3)  # every distribution is stationary
    with pytest.raises(NonUniqueStationary):
        stationary_distribution(Q, capacity=1.0)


# --- fixed point ---------------------------------------------------------- #

def test_fixed_point_converges_on_generic_instance(instance):
    result = fixed_point(instance.params, instance.network, instance.values)
    assert result.converged
    assert result.stationarity_residual <= 1e-10
    np.testing.assert_allclose(result.field.occupancy,
                               instance.field.occupancy, rtol=1e-6)


def test_symmetric_instance_converges_in_one_iteration():
    network, params, values = symmetric_case()
    result = fixed_point(params, network, values)
    assert result.converged
    assert result.iterations == 1
    np.testing.assert_allclose(result.field.occupancy, np.ones((1, 4)),
                               rtol=1e-12)
    np.testing.assert_allclose(result.policy.transitions[0],
                               result.policy.transitions[0].T, atol=1e-12)


def test_fixed_point_preserves_capacity(instance):
    result = fixed_point(instance.params, instance.network, instance.values)
    assert result.field.check_capacities(instance.params.capacities)


def test_stationarity_residual_zero_at_fixed_field(instance):
    assert _stationarity_residual(instance.field, instance.policy) <= 1e-12


# --- omega system and representative solve -------------------------------- #

def test_omega_annihilates_congestion_vector(instance):
    system = build_omega(instance.params, instance.network, instance.values)
    r = instance.params.congestion
    scale = np.abs(system.omega).max()
    assert np.abs(r @ system.omega).max() <= 1e-12 * max(scale, 1.0)
    assert abs(r @ system.m) <= 1e-12 * max(np.abs(system.m).max(), 1.0)


def test_omega_determinant_is_structurally_zero(instance):
    system = build_omega(instance.params, instance.network, instance.values)
    verdict = existence_check(system)
    assert abs(system.determinant) <= verdict.threshold
    assert verdict.verdict == "degenerate"


def test_representative_solve_matches_instance_field(instance):
    system = build_omega(instance.params, instance.network, instance.values)
    solution = representative_solve(system, instance.params.capacities[0])
    np.testing.assert_allclose(solution.phi, instance.field.occupancy[0],
                               rtol=1e-8)
    assert solution.residual <= 1e-8


def test_representative_solve_matches_fixed_point():
    for seed in range(5):
        _, instance = make_instance(seed=seed, K=5)
        system = build_omega(instance.params, instance.network,
                             instance.values)
        solution = representative_solve(system, instance.params.capacities[0])
        result = fixed_point(instance.params, instance.network,
                             instance.values)
        assert result.converged
        np.testing.assert_allclose(solution.phi, result.field.occupancy[0],
                                   rtol=1e-6)


def test_representative_solve_rejects_inconsistent_rhs(instance):
    from dataclasses import replace

    system = build_omega(instance.params, instance.network, instance.values)
    broken = replace(system, m=system.m + 10.0)
    with pytest.raises(DegenerateSystem):
        representative_solve(broken, instance.params.capacities[0])


# --- verification --------------------------------------------------------- #

def test_analytic_gradient_matches_finite_differences(instance):
    for i in range(instance.network.n_ports):
        analytic = projected_gradient(i, 0, instance.field, instance.policy,
                                      instance.params, instance.network,
                                      instance.values)
        fd = fd_projected_gradient(i, 0, instance.field, instance.policy,
                                   instance.params, instance.network,
                                   instance.values)
        assert np.abs(analytic - fd).max() <= 1e-4


def test_verify_equilibrium_passes_on_solved_instance(instance):
    result = fixed_point(instance.params, instance.network, instance.values)
    report = verify_equilibrium(result, instance.params, instance.network,
                                instance.values)
    assert report.passes
    assert report.max_row_sum_deviation <= 1e-10
    assert report.max_projected_gradient <= 1e-5
    assert report.max_gradient_disagreement <= 1e-4


def test_verify_equilibrium_flags_perturbed_policy(instance):
    from portflow import ControlPolicy
    from portflow.equilibrium import EquilibriumResult

    Q = instance.policy.transitions.copy()
    Q[0, 0, 0] += 0.05
    Q[0, 0, 1] -= 0.05
    bad = EquilibriumResult(field=instance.field, policy=ControlPolicy(Q),
                            iterations=0, stationarity_residual=0.0,
                            optimality_residual=0.0, converged=True)
    report = verify_equilibrium(bad, instance.params, instance.network,
                                instance.values)
    assert not report.passes
