"""Minimal autodiff engine, 1-D CNN backbone, optimizers and schedules."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .model import (
    BackboneConfig,
    ParameterSet,
    backbone_forward,
    dense_forward,
    embed,
    init_backbone,
    init_dense,
    init_projection,
    projection_forward,
)
from .optim import LARS, Adam, ScheduleConfig, adam_step, lars_step, lr_at
from .tensor import PieceLock, Tensor, conv1d, cross_entropy, global_max_pool, linear, max_pool1d, nt_xent, relu, softmax

__all__ = [
    "Adam", "BackboneConfig", "LARS", "ParameterSet", "PieceLock", "ScheduleConfig", "Tensor",
    "adam_step", "backbone_forward", "conv1d", "cross_entropy", "dense_forward", "embed",
    "global_max_pool", "grad_check", "init_backbone", "init_dense", "init_projection",
    "lars_step", "linear", "load_checkpoint", "lr_at", "max_pool1d", "nt_xent",
    "projection_forward", "relu", "save_checkpoint", "softmax",
]
