"""Coupled distributed stochastic approximation (CDSA) for optimization with
a parameter that must itself be learned over the network."""

from .cdsa import CDSA, DivergenceError, Explicit, PaperHarmonic, SwarmState, compute_K, mix_phase, run, sgd_phase, simulate, stepsizes
from .harness import ExperimentConfig, load_config, monte_carlo, sweep
from .metrics import RunTrace, average_traces, compute_K1, crossover, errors_at, loglog_slope, transient_bound
from .network import Topology, WeightMatrix, build_topology, check_connected, metropolis_weights, spectral_gap
from .problems import CoupledProblem, LogisticProblem, RidgeProblem, logistic_reference_optimum, ridge_optimum, validate_assumptions

__all__ = [
    "CDSA", "DivergenceError", "Explicit", "PaperHarmonic", "SwarmState", "compute_K", "mix_phase",
    "run", "sgd_phase", "simulate", "stepsizes", "ExperimentConfig", "load_config", "monte_carlo",
    "sweep", "RunTrace", "average_traces", "compute_K1", "crossover", "errors_at", "loglog_slope",
    "transient_bound", "Topology", "WeightMatrix", "build_topology", "check_connected",
    "metropolis_weights", "spectral_gap", "CoupledProblem", "LogisticProblem", "RidgeProblem",
    "logistic_reference_optimum", "ridge_optimum", "validate_assumptions",
]
