from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, PlateauScheduler, adam_step
from .tensor import Segments, Tensor, backward

__all__ = [
    "AdamState",
    "PlateauScheduler",
    "Segments",
    "Tensor",
    "adam_step",
    "backward",
    "load_checkpoint",
    "save_checkpoint",
]
