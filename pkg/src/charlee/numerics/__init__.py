"""Differentiable numeric core: tape ops, Beta machinery, optimizer, RNG, checkpoints."""

from .checkpoint import load_tensors, save_tensors
from .optim import AdamState, FrozenParams, ParamStore, adam_step
from .rng import RngStream, derive
from .special import beta_log_prob, beta_mean, beta_sample, digamma
from .tape import (
    Tensor,
    binary_cross_entropy,
    concat,
    conv1d_forward,
    conv_mac_count,
    dense_forward,
    global_avg_pool,
    log,
    maximum,
    minimum,
    mul,
    add,
    relu,
    reset_conv_mac_count,
    reshape,
    sigmoid,
    softmax_cross_entropy,
    softplus,
    narrow,
    tmax,
    tmean,
    tmin,
    tsum,
    where,
)

__all__ = [
    "AdamState",
    "FrozenParams",
    "ParamStore",
    "RngStream",
    "Tensor",
    "adam_step",
    "add",
    "beta_log_prob",
    "beta_mean",
    "beta_sample",
    "binary_cross_entropy",
    "concat",
    "conv1d_forward",
    "conv_mac_count",
    "dense_forward",
    "derive",
    "digamma",
    "global_avg_pool",
    "load_tensors",
    "log",
    "maximum",
    "minimum",
    "mul",
    "relu",
    "reset_conv_mac_count",
    "reshape",
    "save_tensors",
    "sigmoid",
    "narrow",
    "softmax_cross_entropy",
    "softplus",
    "tmax",
    "tmean",
    "tmin",
    "tsum",
    "where",
]
