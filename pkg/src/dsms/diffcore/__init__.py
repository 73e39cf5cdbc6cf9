"""Minimal reverse-mode autodiff engine: tensors, tape, ops, Adam, checkpoints."""
from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .ops import (
    attention_pool,
    conv1d,
    elu,
    film,
    linear,
    prelu,
    softmax,
    stft_magnitude,
    tanh,
)
from .optim import AdamState, NonFiniteGradientError, PlateauScheduler, adam_step
from .tensor import Tape, TapeError, Tensor, as_tensor, backward, current_tape

__all__ = [
    "BACKEND",
    "AdamState",
    "CheckpointError",
    "NonFiniteGradientError",
    "PlateauScheduler",
    "Tape",
    "TapeError",
    "Tensor",
    "adam_step",
    "as_tensor",
    "attention_pool",
    "backward",
    "conv1d",
    "current_tape",
    "elu",
    "film",
    "linear",
    "load_checkpoint",
    "ops",
    "prelu",
    "save_checkpoint",
    "softmax",
    "stft_magnitude",
    "tanh",
]
