"""Convolution, batch-norm, GeLU, pooling and linear kernels on C x H x W maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .tensor import DimensionError, matmul, same_precision

GELU_COEFF = 0.044715
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class Conv2dParams:
    weight: np.ndarray  # out x in/groups x k x k
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise DimensionError(f"conv weight must be out x in/g x k x k, got {self.weight.shape}")
        if self.out_channels % self.groups:
            raise DimensionError(f"out_channels {self.out_channels} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise DimensionError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        n = self.gamma.shape
        if not (self.beta.shape == self.running_mean.shape == self.running_var.shape == n):
            raise DimensionError("batch-norm vectors differ in length")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _check_conv(x: np.ndarray, p: Conv2dParams):
    if x.ndim != 3:
        raise DimensionError(f"conv2d expects C x H x W, got {x.shape}")
    if x.shape[0] != p.in_channels:
        raise DimensionError(f"input has {x.shape[0]} channels, conv expects {p.in_channels}")
    same_precision(x, p.weight)
    C, H, W = x.shape
    Ho = conv_output_size(H, p.kernel, p.stride, p.padding)
    Wo = conv_output_size(W, p.kernel, p.stride, p.padding)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"empty output extent for input {x.shape} and kernel {p.kernel}")
    return Ho, Wo


def _padded(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d_direct(x: np.ndarray, p: Conv2dParams) -> np.ndarray:
    """Cross-correlation by accumulating one shifted slice per kernel tap."""
    Ho, Wo = _check_conv(x, p)
    k, s, g = p.kernel, p.stride, p.groups
    xp = _padded(x, p.padding)
    cin_g = p.in_channels // g
    cout_g = p.out_channels // g
    out = np.zeros((p.out_channels, Ho, Wo), dtype=x.dtype)
    for gi in range(g):
        xg = xp[gi * cin_g:(gi + 1) * cin_g]
        wg = p.weight[gi * cout_g:(gi + 1) * cout_g]
        og = out[gi * cout_g:(gi + 1) * cout_g]
        for i in range(k):
            for j in range(k):
                patch = xg[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]
                if cin_g == 1 and cout_g == 1:
                    og += wg[:, 0, i, j][:, None, None] * patch
                else:
                    og += np.tensordot(wg[:, :, i, j], patch, axes=(1, 0))
    if p.bias is not None:
        out += p.bias[:, None, None]
    return out


def _depthwise(x: np.ndarray, p: Conv2dParams, Ho: int, Wo: int) -> np.ndarray:
    # channel-vectorised tap accumulation; im2col would only add copies here
    k, s = p.kernel, p.stride
    xp = _padded(x, p.padding)
    w = p.weight[:, 0]
    out = np.zeros((p.out_channels, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += w[:, i, j][:, None, None] * xp[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s]
    return out


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    """Unfold a C x H x W map into a (C*k*k) x (Ho*Wo) column matrix."""
    C, H, W = x.shape
    Ho = conv_output_size(H, k, stride, padding)
    Wo = conv_output_size(W, k, stride, padding)
    xp = _padded(x, padding)
    cols = np.empty((C, k, k, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + stride * (Ho - 1) + 1:stride, j:j + stride * (Wo - 1) + 1:stride]
    return cols.reshape(C * k * k, Ho * Wo)


def conv2d_im2col(x: np.ndarray, p: Conv2dParams) -> np.ndarray:
    Ho, Wo = _check_conv(x, p)
    g = p.groups
    if g == p.in_channels and p.weight.shape[1] == 1 and p.out_channels == g:
        out = _depthwise(x, p, Ho, Wo)
    elif p.kernel == 1 and p.stride == 1 and p.padding == 0 and g == 1:
        out = matmul(p.weight[:, :, 0, 0], x.reshape(x.shape[0], -1)).reshape(-1, Ho, Wo)
    else:
        cin_g = p.in_channels // g
        cout_g = p.out_channels // g
        outs = []
        for gi in range(g):
            cols = im2col(x[gi * cin_g:(gi + 1) * cin_g], p.kernel, p.stride, p.padding)
            wg = p.weight[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
            outs.append(matmul(wg, cols))
        out = np.concatenate(outs, axis=0).reshape(p.out_channels, Ho, Wo)
    if p.bias is not None:
        out = out + p.bias[:, None, None]
    return out


def conv2d(x: np.ndarray, p: Conv2dParams, method: str = "im2col") -> np.ndarray:
    if method == "im2col":
        return conv2d_im2col(x, p)
    if method == "direct":
        return conv2d_direct(x, p)
    raise ValueError(f"unknown conv method {method!r}")


def batchnorm_infer(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    if x.shape[0] != p.channels:
        raise DimensionError(f"input has {x.shape[0]} channels, batch-norm has {p.channels}")
    inv = p.gamma / np.sqrt(p.running_var + p.eps)
    shift = p.beta - p.running_mean * inv
    tail = (slice(None),) + (None,) * (x.ndim - 1)
    return x * inv[tail] + shift[tail]


def fold_bn_into_conv(conv: Conv2dParams, bn: BatchNormParams) -> Conv2dParams:
    """Return a conv whose output equals batchnorm_infer(conv(x))."""
    if bn.channels != conv.out_channels:
        raise DimensionError(f"batch-norm has {bn.channels} channels, conv outputs {conv.out_channels}")
    inv = bn.gamma / np.sqrt(bn.running_var + bn.eps)
    bias = conv.bias if conv.bias is not None else np.zeros(conv.out_channels, dtype=conv.weight.dtype)
    return replace(
        conv,
        weight=conv.weight * inv[:, None, None, None],
        bias=(bias - bn.running_mean) * inv + bn.beta,
    )


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh-approximated GeLU."""
    return 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + GELU_COEFF * x ** 3)))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    if x.ndim != 3:
        raise DimensionError(f"expected C x H x W, got {x.shape}")
    return x.mean(axis=(1, 2))


def linear(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = matmul(x, W)
    if b is not None:
        if b.shape != (W.shape[1],):
            raise DimensionError(f"bias shape {b.shape} != ({W.shape[1]},)")
        y = y + b
    return y
