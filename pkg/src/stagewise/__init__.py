"""Stagewise influence in deep linear networks.

Tracks how the influence of one training sample on another changes as a
two-layer linear network learns a hierarchical dataset mode by mode, using
SGLD-based Bayesian influence, damped classical influence functions, a
closed-form mode-dynamics prediction and leave-one-out retraining.
"""
from .analytic import ModeState, analytic_trajectory, calibrate_mode_state, mode_strength, svd_response
from .bif import BIFMatrix, InfluenceTrajectory, bif_from_traces, bif_matrices, normalized_bif
from .classical_if import DampingSpec, SingularDampingError, classical_trajectory, damped_if
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import DataWeighting, HierarchicalDataset, build_hierarchy_dataset, correlation
from .linnet import LinearNet, TrainConfig, TrainingDivergedError, fit, train
from .loo import loo_trace, trace_correlation, window_sweep, windowed_ablation
from .mds import classical_mds, detect_branches, embed_checkpoints
from .phases import MixturePosterior, PhasePair, total_covariance, transition_point
from .sgld import SGLDConfig, SGLDDivergedError, run_chains

__version__ = "0.1.0"

__all__ = [
    "ModeState",
    "analytic_trajectory",
    "calibrate_mode_state",
    "mode_strength",
    "svd_response",
    "BIFMatrix",
    "InfluenceTrajectory",
    "bif_from_traces",
    "bif_matrices",
    "normalized_bif",
    "DampingSpec",
    "SingularDampingError",
    "classical_trajectory",
    "damped_if",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "DataWeighting",
    "HierarchicalDataset",
    "build_hierarchy_dataset",
    "correlation",
    "LinearNet",
    "TrainConfig",
    "TrainingDivergedError",
    "fit",
    "train",
    "loo_trace",
    "trace_correlation",
    "window_sweep",
    "windowed_ablation",
    "classical_mds",
    "detect_branches",
    "embed_checkpoints",
    "MixturePosterior",
    "PhasePair",
    "total_covariance",
    "transition_point",
    "SGLDConfig",
    "SGLDDivergedError",
    "run_chains",
]
