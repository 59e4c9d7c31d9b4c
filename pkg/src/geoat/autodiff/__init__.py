"""Tensor core: reverse-mode autodiff over float64 numpy arrays plus AdamW."""

from .checkpoint import (
    checkpoint_digest,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamW, AdamWState, adamw_step
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    bce_with_logits,
    broadcast_to,
    concat,
    div,
    embed_lookup,
    exp,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    parameter,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softplus,
    sub,
    sum_,
    swapaxes,
    transpose,
)

__all__ = [
    "AdamW",
    "AdamWState",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "backward",
    "bce_with_logits",
    "broadcast_to",
    "checkpoint_digest",
    "concat",
    "decode_checkpoint",
    "div",
    "embed_lookup",
    "encode_checkpoint",
    "exp",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "parameter",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "slice_",
    "softmax",
    "softplus",
    "sub",
    "sum_",
    "swapaxes",
    "transpose",
]
