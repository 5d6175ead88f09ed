"""Two-stage online training: sampling, minibatch optimization, old-policy EMA."""

from wrflow.training.config import TrainConfig, TrainMode
from wrflow.training.optim import Adam
from wrflow.training.trainer import (
    BufferEntry,
    TrainingStats,
    ema_update,
    entry_loss,
    probe_grad_norms,
    run,
    sampling_stage,
    select_prompts,
    training_stage,
)

__all__ = [
    "TrainConfig",
    "TrainMode",
    "Adam",
    "BufferEntry",
    "TrainingStats",
    "ema_update",
    "entry_loss",
    "probe_grad_norms",
    "run",
    "sampling_stage",
    "select_prompts",
    "training_stage",
]
