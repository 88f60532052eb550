from .checkpoint import load_checkpoint, save_checkpoint
from .losses import LossTargets, head_loss, loss_and_grad
from .network import (
    BACKBONE_PARAMS,
    HEAD_PARAMS,
    PARAM_ORDER,
    Architecture,
    Network,
    features,
    forward,
    init_network,
    logits,
    predict_head,
)
from .training import OptimizerState, TrainConfig, sgd_step, train

__all__ = [
    "Architecture",
    "BACKBONE_PARAMS",
    "HEAD_PARAMS",
    "LossTargets",
    "Network",
    "OptimizerState",
    "PARAM_ORDER",
    "TrainConfig",
    "features",
    "forward",
    "head_loss",
    "init_network",
    "load_checkpoint",
    "logits",
    "loss_and_grad",
    "predict_head",
    "save_checkpoint",
    "sgd_step",
    "train",
]
