"""Operational surface: data, training, checkpoints, sampling, evaluation."""

from .checkpoint import (
    load_arrays,
    load_model_checkpoint,
    save_arrays,
    save_training_checkpoint,
)
from .dataset import DatasetSpec, SyntheticDataset, generate_dataset
from .evaluation import EvalReport, evaluate, kernel_mmd, median_bandwidth
from .sampling import sample_from_checkpoint, to_pgm_bytes, write_pgm
from .training import (
    Adam,
    RunConfig,
    TrainResult,
    learning_rate,
    read_loss_log,
    train,
)

__all__ = [
    "Adam",
    "DatasetSpec",
    "EvalReport",
    "RunConfig",
    "SyntheticDataset",
    "TrainResult",
    "evaluate",
    "generate_dataset",
    "kernel_mmd",
    "learning_rate",
    "load_arrays",
    "load_model_checkpoint",
    "median_bandwidth",
    "read_loss_log",
    "sample_from_checkpoint",
    "save_arrays",
    "save_training_checkpoint",
    "to_pgm_bytes",
    "train",
    "write_pgm",
]
