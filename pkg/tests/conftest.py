"""Shared fixtures and instance helpers for the portflow test suite."""

from __future__ import annotations

import numpy as np
import pytest

from portflow import (
    SyntheticSpec,
    generate_instance,
)


def make_instance(seed: int, K: int = 4, N: int = 1, **overrides):
    """Seeded synthetic instance with a known positive stationary field."""
    spec = SyntheticSpec(seed=seed, K=K, N=N, **overrides)
    return spec, generate_instance(spec)


def symmetric_case(K: int = 4, N: int = 1):
    """Fully exchangeable instance: equal r, zero v, constant travel costs.

    Its equilibrium is the uniform field phi = F/K with uniform rows, which
    several tests use as an analytically known target.
    """
    from portflow import Kernel, PortNetwork, CostParameters, GoodValues

    labels = tuple(f"P{k + 1}" for k in range(K))
    T = np.ones((K, K))
    np.fill_diagonal(T, 0.0)
    network = PortNetwork(labels, T, Kernel("linear"))
    params = CostParameters(congestion=np.ones(K),
                            transport=np.full(N, 0.1),
                            capacities=np.full(N, float(K)))
    values = GoodValues(np.zeros((N, K)))
    return network, params, values


@pytest.fixture
def instance():
    return make_instance(seed=7)[1]


@pytest.fixture
def rng():
    return np.random.default_rng(0)
