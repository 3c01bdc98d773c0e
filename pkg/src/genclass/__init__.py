"""Generative zero-shot classification with an integrated pair classifier."""

from .config import BaselineOptions, EvalOptions, RunSettings, TrainConfig
from .data import Dataset, SyntheticSpec, load_dataset, make_synthetic, save_dataset
from .inference import evaluate_gzsl, evaluate_zsl
from .models import NetParams, init_params, load_checkpoint, save_checkpoint
from .trainer import Trainer, train

__version__ = "0.1.0"

__all__ = [
    "BaselineOptions", "Dataset", "EvalOptions", "NetParams", "RunSettings", "SyntheticSpec",
    "TrainConfig", "Trainer", "evaluate_gzsl", "evaluate_zsl", "init_params", "load_checkpoint",
    "load_dataset", "make_synthetic", "save_checkpoint", "save_dataset", "train",
]
