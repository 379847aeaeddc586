"""Minimal reverse-mode tensor engine used by the network."""

from .core import NonScalarError, ShapeError, Tensor, backward, no_grad, precision
from .gradcheck import GradCheckReport, grad_check
from .losses import bce, bce_with_logits, cross_entropy, nll_relation, smooth_l1
from .ops import (
    EmptyRoiError,
    adaptive_maxpool2d,
    add,
    concat,
    conv2d,
    linear,
    maxpool2d,
    relu,
    roi_pool,
    upsample_nearest,
)
from .params import Adam, CheckpointError, ParamStore, decode_checkpoint, encode_checkpoint, sgd_step, step_lr

__all__ = [
    "Adam",
    "CheckpointError",
    "EmptyRoiError",
    "GradCheckReport",
    "NonScalarError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "adaptive_maxpool2d",
    "add",
    "backward",
    "bce",
    "bce_with_logits",
    "concat",
    "conv2d",
    "cross_entropy",
    "decode_checkpoint",
    "encode_checkpoint",
    "grad_check",
    "linear",
    "maxpool2d",
    "nll_relation",
    "no_grad",
    "precision",
    "relu",
    "roi_pool",
    "sgd_step",
    "smooth_l1",
    "step_lr",
    "upsample_nearest",
]
