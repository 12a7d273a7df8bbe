"""State-conditioned second-order surrogates for nonlinear system identification.

Two networks are trained with a cyclic curriculum: a solution network that
reconstructs trajectories from sparse measurements, and a parameter network
that maps the instantaneous state and input to the coefficients ``(k, d, g)``
of ``y'' = -k y - d y' + g u``.
"""

from .config import ExperimentConfig
from .datasets import Dataset, Trajectory, generate_dataset, generate_splits, load_dataset, save_dataset
from .estimator import IPINN, SOLIS
from .evaluation import accuracy, cosine_similarity_map, evaluate_rollout, phase_portrait
from .exceptions import (ArtifactMismatchError, ConfigurationError, DomainError, IntegrationError,
                         NumericalError, ParseError, RankDeficiencyError, SolisError,
                         TrainingAborted, UsageError)
from .systems import InputSignal, SystemSpec, simulate_truth
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "Dataset", "Trajectory", "generate_dataset", "generate_splits",
    "load_dataset", "save_dataset", "IPINN", "SOLIS", "accuracy", "cosine_similarity_map",
    "evaluate_rollout", "phase_portrait", "ArtifactMismatchError", "ConfigurationError",
    "DomainError", "IntegrationError", "NumericalError", "ParseError", "RankDeficiencyError",
    "SolisError", "TrainingAborted", "UsageError", "InputSignal", "SystemSpec", "simulate_truth",
    "TrainConfig",
]
