"""Metric learning with a queue of past embeddings and classifier-driven drift compensation."""

from .broadface import BroadQueue, classifier_loss, compensate, compensated_embeddings, enqueue_batch, train_iteration
from .data import LabeledDataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .encoder import MlpEncoder, init_encoder
from .estimator import BroadFaceEmbedder
from .evaluation import measure_compensation_error, rank1_identification, recall_at_k, tar_at_far
from .losses import MarginConfig, batch_loss, margin_loss
from .training import TrainConfig, fit

__all__ = [
    "BroadFaceEmbedder",
    "BroadQueue",
    "LabeledDataset",
    "MarginConfig",
    "MlpEncoder",
    "SyntheticSpec",
    "TrainConfig",
    "batch_loss",
    "classifier_loss",
    "compensate",
    "compensated_embeddings",
    "enqueue_batch",
    "fit",
    "generate_synthetic",
    "init_encoder",
    "load_dataset",
    "margin_loss",
    "measure_compensation_error",
    "rank1_identification",
    "recall_at_k",
    "save_dataset",
    "tar_at_far",
    "train_iteration",
]
__version__ = "0.1.0"
