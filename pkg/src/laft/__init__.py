"""Noise-robust fine-tuning of text classifiers with LLM confidence guidance."""

from .corpus import ClassSet, Dataset, Sample, load_dataset, save_dataset, split_dataset
from .noise import FlipRecord, NoiseSpec, inject
from .objective import LossBreakdown, LossWeights
from .oracle import OracleCache, OracleOutputs, SimulatedClient, fetch_oracle_outputs
from .separate import SubsetAssignment, ThresholdSchedule
from .trainer import LinearTextClassifier, RunRecord, TrainConfig, evaluate_accuracy, fit
from .harness import DiagnosticsReport, ExperimentConfig, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ClassSet",
    "Dataset",
    "Sample",
    "load_dataset",
    "save_dataset",
    "split_dataset",
    "FlipRecord",
    "NoiseSpec",
    "inject",
    "LossBreakdown",
    "LossWeights",
    "OracleCache",
    "OracleOutputs",
    "SimulatedClient",
    "fetch_oracle_outputs",
    "SubsetAssignment",
    "ThresholdSchedule",
    "LinearTextClassifier",
    "RunRecord",
    "TrainConfig",
    "evaluate_accuracy",
    "fit",
    "DiagnosticsReport",
    "ExperimentConfig",
    "run_experiment",
    "__version__",
]
