"""Hand-rolled segmentation kernel: models, training, metrics, AutoML."""

from .rng import Lcg, derive_stream
from .model import ModelSpec, build_model, forward, backward, parameter_count
from .losses import loss_and_grad, softmax, evaluate, MetricsRecord
from .optim import Hyperparams, AdamState, adam_step
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .train import train
from .automl import automl_search

__all__ = [
    "Lcg", "derive_stream",
    "ModelSpec", "build_model", "forward", "backward", "parameter_count",
    "loss_and_grad", "softmax", "evaluate", "MetricsRecord",
    "Hyperparams", "AdamState", "adam_step",
    "Checkpoint", "save_checkpoint", "load_checkpoint",
    "train", "automl_search",
]
