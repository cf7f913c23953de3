"""
Pipeline module: configuration, datasets, training, evaluation,
inference and ablation.
"""

from .ablation import run_ablation, summarize_ablation
from .config import (
    DatasetConfig,
    DatasetLayout,
    OptimizerConfig,
    RunConfig,
    apply_overrides,
    load_config,
    profile_config,
)
from .dataset import DatasetError, DatasetIndex, generate_toy_dataset, load_dataset
from .inference import Detector, InferenceReport, evaluate, infer
from .trainer import (
    Checkpoint,
    Trainer,
    TrainingDivergedError,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "Checkpoint",
    "DatasetConfig",
    "DatasetError",
    "DatasetIndex",
    "DatasetLayout",
    "Detector",
    "InferenceReport",
    "OptimizerConfig",
    "RunConfig",
    "Trainer",
    "TrainingDivergedError",
    "apply_overrides",
    "evaluate",
    "generate_toy_dataset",
    "infer",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "profile_config",
    "run_ablation",
    "save_checkpoint",
    "summarize_ablation",
    "train",
]
