"""Optimal filtering of stochastic heat equations driven by Gauss-Volterra noise."""
from .engine import (
    KernelTable,
    ObservationModel,
    PriorCovariance,
    StreamingTable,
    innovation_path,
    load_table,
    run_filter,
    solve_covariance_equation,
    solve_covariance_picard,
    stream_table,
)
from .errors import ConfigError, ConvergenceError, DomainError, GridMismatchError, RegularityError
from .kernels import TimeGrid, VolterraKernel, kernel_evaluate, kernel_matrix, scalar_covariance
from .oracle import assemble_joint, condition, filtered_law
from .riccati import kb_filter, riccati_integrate
from .simulate import simulate_batch, simulate_path
from .spectral import SignalModel, SpectralField, evaluate_at, signal_covariance, validate_regularity

__version__ = "0.1.0"

__all__ = [
    "KernelTable",
    "ObservationModel",
    "PriorCovariance",
    "StreamingTable",
    "innovation_path",
    "load_table",
    "run_filter",
    "solve_covariance_equation",
    "solve_covariance_picard",
    "stream_table",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "GridMismatchError",
    "RegularityError",
    "TimeGrid",
    "VolterraKernel",
    "kernel_evaluate",
    "kernel_matrix",
    "scalar_covariance",
    "assemble_joint",
    "condition",
    "filtered_law",
    "kb_filter",
    "riccati_integrate",
    "simulate_batch",
    "simulate_path",
    "SignalModel",
    "SpectralField",
    "evaluate_at",
    "signal_covariance",
    "validate_regularity",
]
