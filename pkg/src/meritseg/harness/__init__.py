"""Synthetic data, augmentation, training, evaluation, sweeps and file formats."""

from .augment import apply_transform, augment
from .data import SynthSpec, generate_sample, make_dataset
from .train import AdamW, RunRecord, TrainConfig, TrainingAborted, evaluate, predict, train

__all__ = [
    "AdamW", "RunRecord", "SynthSpec", "TrainConfig", "TrainingAborted", "apply_transform", "augment",
    "evaluate", "generate_sample", "make_dataset", "predict", "train",
]
