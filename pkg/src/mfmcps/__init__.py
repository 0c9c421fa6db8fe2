"""Batch off-policy policy search driven by model-free Monte Carlo evaluation."""

from .core import BatchDataset, Box, InputError, PolicySpec, StateActionMetric, Transition, make_rng, metric_distance, policy_action
from .estimator import PolicySearch
from .mfmc import MFMCEstimator, MfmcConfig, MfmcReport, mfmc_estimate
from .optim import OptimizerConfig, RiskConfig, StepSchedule, run_optimizer

__all__ = [
    "BatchDataset",
    "Box",
    "InputError",
    "MFMCEstimator",
    "MfmcConfig",
    "MfmcReport",
    "OptimizerConfig",
    "PolicySearch",
    "PolicySpec",
    "RiskConfig",
    "StateActionMetric",
    "StepSchedule",
    "Transition",
    "make_rng",
    "metric_distance",
    "mfmc_estimate",
    "policy_action",
    "run_optimizer",
]

__version__ = "0.1.0"
