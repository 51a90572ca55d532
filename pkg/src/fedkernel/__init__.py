"""Federated kernel regression: FedAvg and FedProx dynamics, spectral theory and experiments."""

__version__ = "0.1.0"

from .data import ClientData, FederatedDataset, load_dataset, save_dataset
from .datagen import ScenarioSpec, generate, trial_seed
from .engine import (
    AlgorithmConfig,
    ModelState,
    RoundTrace,
    aggregate,
    build_dual_operator,
    fedavg_local_update,
    fedprox_local_update,
    local_gd_step,
    predict,
    run_round_dual,
    run_round_primal,
    run_training,
)
from .estimators import FedAvgRegressor, FedProxRegressor, MinNormLeastSquares
from .exceptions import (
    ConfigurationError,
    DegeneracyError,
    DegenerateRunError,
    EmptyInputError,
    EmptySelectionError,
    FedKernelError,
    InputShapeError,
    NumericError,
    StabilityError,
    UnsupportedRepresentationError,
)
from .kernels import KernelFeatures, KernelSpec, gram, kernel_matrix
from .spectral import gamma, kappa, limit_model, spectral_report, theory_bound

__all__ = [
    "__version__",
    "ClientData",
    "FederatedDataset",
    "load_dataset",
    "save_dataset",
    "ScenarioSpec",
    "generate",
    "trial_seed",
    "AlgorithmConfig",
    "ModelState",
    "RoundTrace",
    "aggregate",
    "build_dual_operator",
    "fedavg_local_update",
    "fedprox_local_update",
    "local_gd_step",
    "predict",
    "run_round_dual",
    "run_round_primal",
    "run_training",
    "FedAvgRegressor",
    "FedProxRegressor",
    "MinNormLeastSquares",
    "ConfigurationError",
    "DegeneracyError",
    "DegenerateRunError",
    "EmptyInputError",
    "EmptySelectionError",
    "FedKernelError",
    "InputShapeError",
    "NumericError",
    "StabilityError",
    "UnsupportedRepresentationError",
    "KernelFeatures",
    "KernelSpec",
    "gram",
    "kernel_matrix",
    "gamma",
    "kappa",
    "limit_model",
    "spectral_report",
    "theory_bound",
]
