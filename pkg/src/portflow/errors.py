"""Exception hierarchy for the portflow package."""

from __future__ import annotations


class PortflowError(Exception):
    """Base class for all portflow errors."""


# --- model / equilibrium -------------------------------------------------- #

class NonPositiveDenominator(PortflowError):
    """A weight denominator r_j + c_n g(T_ij) is not strictly positive."""

    def __init__(self, origin: int, destination: int, value: float):
        self.origin = origin
        self.destination = destination
        self.value = value
        super().__init__(
            f"weight denominator {value!r} <= 0 for pair "
            f"(origin={origin}, destination={destination})"
        )


class ZeroOccupancy(PortflowError):
    """Closed-form control requested at a (good, port) with vanishing occupancy."""

    def __init__(self, good: int, port: int, value: float, iteration: int | None = None):
        self.good = good
        self.port = port
        self.value = value
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(
            f"occupancy {value!r} too small for good {good}, port {port}{where}"
        )


class NonUniqueStationary(PortflowError):
    """The eigenvalue-1 eigenspace of the transition matrix is not one-dimensional."""

    def __init__(self, second_smallest: float, threshold: float,
                 iteration: int | None = None):
        self.second_smallest = second_smallest
        self.threshold = threshold
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(
            f"stationary distribution not unique{where}: second-smallest singular "
            f"value {second_smallest:.3e} below threshold {threshold:.3e}"
        )


class DivergedField(PortflowError):
    """The fixed-point iterate left the admissible occupancy range."""

    def __init__(self, iteration: int, max_abs: float, bound: float):
        self.iteration = iteration
        self.max_abs = max_abs
        self.bound = bound
        super().__init__(
            f"field diverged at iteration {iteration}: |phi| reached "
            f"{max_abs:.3e} (bound {bound:.3e})"
        )


class DegenerateSystem(PortflowError):
    """The representative-good linear system cannot be solved uniquely."""


# --- inference ------------------------------------------------------------ #

class InsufficientHistory(PortflowError):
    """The series is too short to emit any crowdedness proxy value."""


class EmptyDataset(PortflowError):
    """No usable regression rows remain for the requested route."""


class RankDeficient(PortflowError):
    """The regression design matrix is numerically rank deficient."""

    def __init__(self, message: str, columns: list[str] | None = None):
        self.columns = columns or []
        super().__init__(message)


class SolverFailure(PortflowError):
    """No calibration start converged to a usable minimum."""


class GaugeInfeasible(PortflowError):
    """The calibration bounds contradict the gauge constraints."""


class InsufficientRoutes(PortflowError):
    """Too few per-route regressions succeeded for calibration to run."""


# --- synthetic ------------------------------------------------------------ #

class ProxyInversionFailure(PortflowError):
    """The requested crowdedness path needs negative inflows to realize."""


# --- io ------------------------------------------------------------------- #

class ParseError(PortflowError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{at}")


class NegativeQuantity(ParseError):
    """A flow record carries a negative tonnage."""


class LabelMismatch(PortflowError):
    """File labels do not match the port network labels."""

    def __init__(self, missing: list[str], extra: list[str]):
        self.missing = missing
        self.extra = extra
        super().__init__(f"label mismatch: missing={missing}, extra={extra}")


class ConfigError(PortflowError):
    """Invalid or incomplete run configuration."""
