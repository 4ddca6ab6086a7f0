"""
Functional layer primitives with hand-written backward passes.

conv2d uses a strided window view so both the forward product and the
weight gradient are single tensordot calls.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nngrad.tensor import Tensor
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

BN_EPS = 1e-8
BN_MOMENTUM = 0.1


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of N×C×H×W input with O×C×kh×kw weights."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv2d input has {c} channels, weight expects {wc}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d input {h}x{w} too small for kernel {kh}x{kw} with padding {padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)
    wdata = weight.data

    def back(g: np.ndarray):
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += np.einsum(
                    "nohw,oc->nchw", g, wdata[:, :, i, j]
                )
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w]
        grad_b = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_w, grad_b

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor.from_op(out, parents, back, "conv2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    update_stats: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """
    Per-channel normalisation of N×C×H×W input. Training mode uses batch
    statistics and (when update_stats) moves the running buffers in place;
    inference mode uses the running buffers.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm expects N×{gamma.shape[0]}×H×W input, got {x.shape}")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    count = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            unbiased = var * count / (count - 1) if count > 1 else var
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)
    g_scale = gamma.data.reshape(shape)

    def back(g: np.ndarray):
        grad_gamma = (g * xhat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        dxhat = g * g_scale
        if training:
            grad_x = (inv_std.reshape(shape) / count) * (
                count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = dxhat * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), back, "batch_norm")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (N×in) @ weightᵀ (in×out) + bias."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects N×{weight.shape[1]} input, got {x.shape}")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


def relu(x: Tensor) -> Tensor:
    return x.relu()


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return x.leaky_relu(slope)


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def kaiming_std(fan_in: int, slope: float = 0.0) -> float:
    return float(np.sqrt(2.0 / ((1.0 + slope * slope) * fan_in)))


def spatial_dims(x: Tensor) -> Tuple[int, int]:
    return x.shape[2], x.shape[3]
