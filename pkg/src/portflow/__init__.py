"""Stationary maritime-flow mean-field game: solver and calibration toolkit."""

from .model import (
    Kernel,
    PortNetwork,
    CostParameters,
    GoodValues,
    MeanField,
    ControlPolicy,
    WeightMatrix,
    compute_weights,
    aggregate_occupancy,
    realized_flow,
    cost_functional,
)
from .equilibrium import (
    EquilibriumResult,
    OmegaSystem,
    optimal_control,
    stationary_distribution,
    fixed_point,
    build_omega,
    existence_check,
    representative_solve,
    verify_equilibrium,
)
from .flows import FlowSeries, merge_series
from .inference import (
    CrowdednessConfig,
    GaugeConfig,
    InferenceConfig,
    RegressionCoefficients,
    CalibrationResult,
    crowdedness_proxy,
    build_regression_dataset,
    ols_fit,
    calibrate,
    infer_pipeline,
)
from .synthetic import (
    SyntheticSpec,
    SyntheticInstance,
    generate_instance,
    theoretical_coefficients,
    calibration_intercepts,
    simulate_series,
)
from . import errors

__version__ = "0.1.0"
