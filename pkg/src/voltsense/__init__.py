"""Data-driven voltage control for radial distribution feeders.

An online estimator recovers line reactances (and hence the LinDistFlow
sensitivity matrices) from a sliding window of measurements; a linear
program dispatches DER reactive/active set-points against that model.
"""

from .controller import ControlProblem, ControlSetpoints, solve_control, validate_problem
from .estimator import MeasurementWindow, assemble_regression, build_gamma, estimate, push_snapshot
from .lindistflow import SensitivityMatrices, VoltageState, build_sensitivities, predict_voltages
from .metrics import band_report, mae_matrix, mae_vector
from .network import (
    DerFleet,
    FeederTopology,
    LineParameters,
    LoadProfile,
    invert_incidence,
    line_flows,
    load_feeder,
)
from .plant import MeasurementSnapshot, NoiseModel, PerturbationEvent, Plant, solve_power_flow
from .scenario import ScenarioConfig, bundled_config, run_closed_loop, run_monte_carlo

__version__ = "0.1.0"
