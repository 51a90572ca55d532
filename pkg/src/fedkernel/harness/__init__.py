"""Experiment registry, configuration, result tables, plots and the command line."""

from .config import EXPERIMENTS, ExperimentConfig, default_config, load_config
from .experiments import run_experiment, write_outputs
from .plotting import PlotSpec, emit_plot
from .results import ResultTable

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "run_experiment",
    "write_outputs",
    "PlotSpec",
    "emit_plot",
    "ResultTable",
]
