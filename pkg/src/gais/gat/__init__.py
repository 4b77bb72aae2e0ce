from .layers import (
    Arcs,
    amplify_heads,
    diversity_adjust,
    gat_layer,
    gate,
    multi_level_forward,
    multi_view_forward,
    nystrom_cross,
    prepare_arcs,
    select_landmarks,
)
from .model import AttentionTrace, GatConfig, GatModel, NystromConfig
from .train import EarlyStopping, TrainConfig, TrainResult, fit_loop, train

__all__ = [
    "Arcs",
    "AttentionTrace",
    "EarlyStopping",
    "GatConfig",
    "GatModel",
    "NystromConfig",
    "TrainConfig",
    "TrainResult",
    "amplify_heads",
    "diversity_adjust",
    "fit_loop",
    "gat_layer",
    "gate",
    "multi_level_forward",
    "multi_view_forward",
    "nystrom_cross",
    "prepare_arcs",
    "select_landmarks",
    "train",
]
