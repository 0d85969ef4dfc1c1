"""Minimal differentiable kernel: tensors, layers, Adam and checkpoints."""
from .layers import BiLSTM, CrossAttention, Dense, LayerNorm, ParamStore, sinusoidal_embedding
from .optim import adam_step, warmup_lr
from .tensor import (Tensor, add, as_tensor, concat, gather, getitem, layer_norm, log, lstm, matmul,
                     mse, mul, no_grad, reshape, sigmoid, silu, softmax, stop_gradient,
                     straight_through, sub, sum_squares, tanh, transpose, tmean, tsum)

__all__ = [
    "BiLSTM", "CrossAttention", "Dense", "LayerNorm", "ParamStore", "Tensor", "adam_step",
    "add", "as_tensor", "concat", "gather", "getitem", "layer_norm", "log", "lstm", "matmul", "mse",
    "mul", "no_grad", "reshape", "sigmoid", "silu", "sinusoidal_embedding", "softmax",
    "stop_gradient", "straight_through", "sub", "sum_squares", "tanh", "tmean", "transpose",
    "tsum", "warmup_lr",
]
