"""Core model objects: network, cost parameters, values, field, policy, weights.

All containers are frozen dataclasses wrapping read-only numpy arrays, so any
instance can be shared freely across threads. The cost functional implemented
here is the mean-field-reduced objective that the closed-form control in
:mod:`portflow.equilibrium` maximizes; it deliberately accepts arbitrary
(infeasible) rows so finite-difference and grid oracles can probe off-simplex
directions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDenominator

__all__ = [
    "Kernel",
    "PortNetwork",
    "CostParameters",
    "GoodValues",
    "MeanField",
    "ControlPolicy",
    "WeightMatrix",
    "compute_weights",
    "aggregate_occupancy",
    "realized_flow",
    "cost_functional",
]


def _frozen_array(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Kernel:
    """Transport kernel g applied entrywise to the travel-cost matrix.

    ``linear`` is g(T) = T, ``power`` is g(T) = T**exponent with exponent > 0,
    and ``table`` uses an explicit per-pair matrix of kernel values.
    """

    kind: str = "linear"
    exponent: float = 1.0
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "power", "table"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "power" and not self.exponent > 0:
            raise ValueError("power kernel needs exponent > 0")
        if self.kind == "table":
            if self.table is None:
                raise ValueError("table kernel needs an explicit value matrix")
            object.__setattr__(self, "table", _frozen_array(self.table))

    def __call__(self, travel_cost: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return np.asarray(travel_cost, dtype=float)
        if self.kind == "power":
            return np.asarray(travel_cost, dtype=float) ** self.exponent
        if self.table.shape != np.shape(travel_cost):
            raise ValueError("table kernel shape does not match travel costs")
        return self.table


@dataclass(frozen=True)
class PortNetwork:
    """K ports with pairwise travel costs T and a transport kernel g."""

    port_labels: tuple[str, ...]
    travel_cost: np.ndarray
    kernel: Kernel = field(default_factory=Kernel)

    def __post_init__(self):
        object.__setattr__(self, "port_labels", tuple(self.port_labels))
        T = _frozen_array(self.travel_cost)
        object.__setattr__(self, "travel_cost", T)
        K = len(self.port_labels)
        if K < 1:
            raise ValueError("need at least one port")
        if T.shape != (K, K):
            raise ValueError(f"travel_cost must be {K}x{K}, got {T.shape}")
        if np.any(np.diag(T) != 0.0):
            raise ValueError("travel_cost diagonal must be zero")
        if np.any(T < 0.0) or not np.all(np.isfinite(T)):
            raise ValueError("travel_cost entries must be finite and >= 0")
        g = self.kernel(T)
        if np.any(g < 0.0) or not np.all(np.isfinite(g)):
            raise ValueError("kernel values must be finite and >= 0")
        if not np.allclose(T, T.T):
            warnings.warn("travel_cost matrix is not symmetric", stacklevel=2)

    @property
    def n_ports(self) -> int:
        return len(self.port_labels)

    @property
    def kernel_values(self) -> np.ndarray:
        """g(T), entrywise."""
        return self.kernel(self.travel_cost)


@dataclass(frozen=True)
class CostParameters:
    """Congestion coefficients r_j, per-good transport coefficients c_n,
    and per-good total capacities F^n."""

    congestion: np.ndarray
    transport: np.ndarray
    capacities: np.ndarray

    def __post_init__(self):
        r = _frozen_array(self.congestion)
        c = _frozen_array(self.transport)
        F = _frozen_array(self.capacities)
        object.__setattr__(self, "congestion", r)
        object.__setattr__(self, "transport", c)
        object.__setattr__(self, "capacities", F)
        if r.ndim != 1 or np.any(r <= 0.0):
            raise ValueError("congestion coefficients must be strictly positive")
        if c.ndim != 1 or np.any(c < 0.0):
            raise ValueError("transport coefficients must be >= 0")
        if F.shape != c.shape or np.any(F <= 0.0):
            raise ValueError("capacities must be strictly positive, one per good")

    @property
    def n_ports(self) -> int:
        return self.congestion.shape[0]

    @property
    def n_goods(self) -> int:
        return self.transport.shape[0]


@dataclass(frozen=True)
class GoodValues:
    """Per-good per-port values v_i^n; margins are the pairwise differences."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.array(self.values, dtype=float))
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_goods(self) -> int:
        return self.values.shape[0]

    @property
    def n_ports(self) -> int:
        return self.values.shape[1]

    def margins(self, good: int) -> np.ndarray:
        """M^n with M[i, j] = v_j^n - v_i^n (antisymmetric, path consistent)."""
        v = self.values[good]
        return v[None, :] - v[:, None]

    def margin_tensor(self) -> np.ndarray:
        return self.values[:, None, :] - self.values[:, :, None]


@dataclass(frozen=True)
class MeanField:
    """N x K occupancy matrix phi^n_i, in quantity units.

    Negative entries are representable (they can appear transiently in the
    fixed-point iteration) but flagged via :attr:`has_negative`.
    """

    occupancy: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.array(self.occupancy, dtype=float))
        phi.setflags(write=False)
        object.__setattr__(self, "occupancy", phi)

    @property
    def n_goods(self) -> int:
        return self.occupancy.shape[0]

    @property
    def n_ports(self) -> int:
        return self.occupancy.shape[1]

    @property
    def has_negative(self) -> bool:
        return bool(np.any(self.occupancy < 0.0))

    def check_capacities(self, capacities: np.ndarray, rtol: float = 1e-9) -> bool:
        """Whether each good's mass matches its capacity within rtol * F^n."""
        mass = self.occupancy.sum(axis=1)
        return bool(np.all(np.abs(mass - capacities) <= rtol * np.abs(capacities)))


@dataclass(frozen=True)
class ControlPolicy:
    """N stacked K x K transition matrices with row-sum diagnostics."""

    transitions: np.ndarray

    def __post_init__(self):
        Q = np.array(self.transitions, dtype=float)
        if Q.ndim == 2:
            Q = Q[None, :, :]
        Q.setflags(write=False)
        object.__setattr__(self, "transitions", Q)

    @property
    def n_goods(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_ports(self) -> int:
        return self.transitions.shape[1]

    @property
    def row_sum_residual(self) -> np.ndarray:
        """Per-(good, origin) deviation of the row sum from one."""
        return np.abs(self.transitions.sum(axis=2) - 1.0)

    @property
    def has_negative(self) -> bool:
        return bool(np.any(self.transitions < 0.0))

    def negative_entries(self) -> list[tuple[int, int, int]]:
        """Offending (good, origin, destination) triples with Q < 0."""
        return [tuple(idx) for idx in np.argwhere(self.transitions < 0.0)]


@dataclass(frozen=True)
class WeightMatrix:
    """Raw inverse-cost weights and their row-normalized version."""

    raw: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "raw", _frozen_array(self.raw))
        object.__setattr__(self, "normalized", _frozen_array(self.normalized))


def compute_weights(params: CostParameters, network: PortNetwork,
                    good: int) -> WeightMatrix:
    """Inverse-cost weights w[i, j] = 1 / (r_j + c_n g(T_ij) 1{j != i}).

    The transport term vanishes on the diagonal, so w[i, i] = 1 / r_i.

    Raises:
        NonPositiveDenominator: if any denominator is <= 0, reporting the
            first offending (origin, destination) pair.
    """
    K = network.n_ports
    if params.n_ports != K:
        raise ValueError("params and network disagree on the number of ports")
    r = params.congestion
    c_n = params.transport[good]
    g = network.kernel_values
    off_diagonal = 1.0 - np.eye(K)
    denom = r[None, :] + c_n * g * off_diagonal
    if np.any(denom <= 0.0):
        i, j = np.argwhere(denom <= 0.0)[0]
        raise NonPositiveDenominator(int(i), int(j), float(denom[i, j]))
    raw = 1.0 / denom
    normalized = raw / raw.sum(axis=1, keepdims=True)
    return WeightMatrix(raw=raw, normalized=normalized)


def aggregate_occupancy(field: MeanField) -> np.ndarray:
    """Total occupancy per port, summed over goods: phi_bullet_j."""
    return field.occupancy.sum(axis=0)


def realized_flow(field: MeanField, policy: ControlPolicy) -> np.ndarray:
    """Flow tensor Phi[n, i, j] = phi^n_i * Q^n[i, j]."""
    if field.occupancy.shape[:2] != policy.transitions.shape[:2]:
        raise ValueError("field and policy shapes are inconsistent")
    return field.occupancy[:, :, None] * policy.transitions


def cost_functional(origin: int, good: int, row: np.ndarray, field: MeanField,
                    params: CostParameters, network: PortNetwork,
                    values: GoodValues) -> float:
    """Mean-field-reduced objective for one origin row of one good.

    J(q) = phi_i sum_j q_j M_ij
           - sum_j r_j (phi_bullet_j + phi_i q_j)^2
           - c_n sum_{j != i} (phi_i q_j)^2 g(T_ij)

    ``row`` is any K-vector; feasibility (simplex membership) is not required,
    so gradient oracles can evaluate off-simplex points.
    """
    q = np.asarray(row, dtype=float)
    phi_i = field.occupancy[good, origin]
    phi_bullet = aggregate_occupancy(field)
    r = params.congestion
    c_n = params.transport[good]
    g_row = network.kernel_values[origin]
    M_row = values.margins(good)[origin]

    gain = phi_i * float(q @ M_row)
    congestion = float(r @ (phi_bullet + phi_i * q) ** 2)
    transport = (phi_i * q) ** 2 @ g_row
    transport = c_n * (float(transport) - (phi_i * q[origin]) ** 2 * g_row[origin])
    return gain - congestion - transport
