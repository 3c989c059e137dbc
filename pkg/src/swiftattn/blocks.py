"""Architectural blocks on C x H x W feature maps.

Each block reads its weights from a mapping of local parameter names
(``"dw.weight"``, ``"bn.gamma"``, ...).  ``param_shapes`` lists those names
with their shapes and fan-in so that the model builder can initialise,
count and persist them.  A batch-norm whose entries are absent from the
mapping is treated as already folded into the preceding convolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import attention
from .attention import AdditiveAttentionParams, AttentionConfig
from .nnops import BatchNormParams, Conv2dParams, batchnorm_infer, conv2d, fold_bn_into_conv, gelu
from .tensor import DimensionError

KINDS = ("patch_embed", "conv_encoder", "swiftformer_encoder", "downsample")
BN_FIELDS = ("gamma", "beta", "running_mean", "running_var")
BUFFER_SUFFIXES = (".running_mean", ".running_var")
BN_EPS = 1e-5


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    channels_in: int
    channels_out: int
    expansion_ratio: int = 4
    channels_mid: int = 0  # patch_embed: width after the first stride-2 conv
    keep_value: bool = False  # swiftformer_encoder: key-value ablation form

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.channels_in < 1 or self.channels_out < 1:
            raise ValueError("channel counts must be positive")
        if self.expansion_ratio < 1:
            raise ValueError("expansion_ratio must be >= 1")
        if self.kind in ("conv_encoder", "swiftformer_encoder") and self.channels_in != self.channels_out:
            raise ValueError(f"{self.kind} must preserve channels")
        if self.kind == "patch_embed" and self.channels_mid < 1:
            raise ValueError("patch_embed needs channels_mid")


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


def _bn_shapes(prefix: str, c: int) -> dict:
    return {f"{prefix}.{f}": ((c,), c) for f in BN_FIELDS}


def param_shapes(spec: BlockSpec) -> dict[str, tuple[tuple[int, ...], int]]:
    """Ordered map of local name -> (shape, fan_in)."""
    ci, co, e = spec.channels_in, spec.channels_out, spec.expansion_ratio
    s: dict = {}
    if spec.kind == "patch_embed":
        m = spec.channels_mid
        s["conv1.weight"] = ((m, ci, 3, 3), ci * 9)
        s.update(_bn_shapes("bn1", m))
        s["conv2.weight"] = ((co, m, 3, 3), m * 9)
        s.update(_bn_shapes("bn2", co))
    elif spec.kind == "downsample":
        s["conv.weight"] = ((co, ci, 3, 3), ci * 9)
        s.update(_bn_shapes("bn", co))
    elif spec.kind == "conv_encoder":
        C = ci
        s["dw.weight"] = ((C, 1, 3, 3), 9)
        s.update(_bn_shapes("bn", C))
        s["pw1.weight"] = ((e * C, C, 1, 1), C)
        s["pw1.bias"] = ((e * C,), C)
        s["pw2.weight"] = ((C, e * C, 1, 1), e * C)
        s["pw2.bias"] = ((C,), e * C)
    else:
        C = ci
        s["local.dw.weight"] = ((C, 1, 3, 3), 9)
        s.update(_bn_shapes("local.bn", C))
        s["local.pw.weight"] = ((C, C, 1, 1), C)
        s["local.pw.bias"] = ((C,), C)
        for name in ("W_q", "W_k"):
            s[f"attn.{name}"] = ((C, C), C)
        s["attn.w_a"] = ((C,), C)
        s["attn.W_t"] = ((C, C), C)
        s["attn.b_t"] = ((C,), C)
        s["attn.W_o"] = ((C, C), C)
        s["attn.b_o"] = ((C,), C)
        if spec.keep_value:
            s["attn.W_v"] = ((C, C), C)
        s.update(_bn_shapes("mlp.bn", C))
        s["mlp.pw1.weight"] = ((e * C, C, 1, 1), C)
        s["mlp.pw1.bias"] = ((e * C,), C)
        s["mlp.pw2.weight"] = ((C, e * C, 1, 1), e * C)
        s["mlp.pw2.bias"] = ((C,), e * C)
    return s


def param_count(spec: BlockSpec) -> int:
    return sum(int(np.prod(shape)) for name, (shape, _) in param_shapes(spec).items() if not is_buffer(name))


def output_shape(spec: BlockSpec, H: int, W: int) -> tuple[int, int, int]:
    if spec.kind == "patch_embed":
        if H % 4 or W % 4:
            raise DimensionError(f"patch_embed needs H, W divisible by 4, got {H}x{W}")
        return spec.channels_out, H // 4, W // 4
    if spec.kind == "downsample":
        if H % 2 or W % 2:
            raise DimensionError(f"downsample needs even H, W, got {H}x{W}")
        return spec.channels_out, H // 2, W // 2
    return spec.channels_out, H, W


def mac_count(spec: BlockSpec, H: int, W: int) -> int:
    """MACs of one block on an H x W input (conv: out_elems * k^2 * in/groups)."""
    ci, co, e = spec.channels_in, spec.channels_out, spec.expansion_ratio
    if spec.kind == "patch_embed":
        m = spec.channels_mid
        return (H // 2) * (W // 2) * m * ci * 9 + (H // 4) * (W // 4) * co * m * 9
    if spec.kind == "downsample":
        return (H // 2) * (W // 2) * co * ci * 9
    n = H * W
    C = ci
    macs = n * C * 9 + 2 * n * e * C * C
    if spec.kind == "swiftformer_encoder":
        macs += n * C * C + attention.attn_mac_count(
            AttentionConfig(n=n, d=C, variant="additive", ablation_keep_value=spec.keep_value))
    return macs


# --- parameter views ------------------------------------------------------


class Prefixed(Mapping):
    """Read-only view of `store` restricted to keys starting with `prefix`."""

    def __init__(self, store: Mapping, prefix: str):
        self._store = store
        self._prefix = prefix

    def __getitem__(self, key):
        return self._store[self._prefix + key]

    def __contains__(self, key):
        return (self._prefix + key) in self._store

    def __iter__(self):
        n = len(self._prefix)
        return (k[n:] for k in self._store if k.startswith(self._prefix))

    def __len__(self):
        return sum(1 for _ in self)


def conv_params(w: Mapping, prefix: str, stride=1, padding=0, groups=1) -> Conv2dParams:
    bias = w.get(f"{prefix}.bias")
    return Conv2dParams(w[f"{prefix}.weight"], bias, stride=stride, padding=padding, groups=groups)


def bn_params(w: Mapping, prefix: str) -> BatchNormParams | None:
    if f"{prefix}.gamma" not in w:
        return None
    return BatchNormParams(*(w[f"{prefix}.{f}"] for f in BN_FIELDS), eps=BN_EPS)


def attention_params(w: Mapping, prefix: str = "attn") -> AdditiveAttentionParams:
    names = ("W_q", "W_k", "w_a", "W_t", "b_t", "W_o", "b_o")
    return AdditiveAttentionParams(*(w[f"{prefix}.{k}"] for k in names), W_v=w.get(f"{prefix}.W_v"))


def _conv_bn(x, w, conv, bn, method, **kw):
    y = conv2d(x, conv_params(w, conv, **kw), method=method)
    p = bn_params(w, bn)
    return y if p is None else batchnorm_infer(y, p)


# --- blocks ---------------------------------------------------------------


def patch_embed(img: np.ndarray, w: Mapping, method: str = "im2col") -> np.ndarray:
    """Two conv(3x3, stride 2)-BN-GeLU stages: 3 x H x W -> C x H/4 x W/4."""
    if img.ndim != 3 or img.shape[1] % 4 or img.shape[2] % 4:
        raise DimensionError(f"patch_embed needs C x H x W with H, W divisible by 4, got {img.shape}")
    y = gelu(_conv_bn(img, w, "conv1", "bn1", method, stride=2, padding=1))
    return gelu(_conv_bn(y, w, "conv2", "bn2", method, stride=2, padding=1))


def conv_encoder(x: np.ndarray, w: Mapping, method: str = "im2col") -> np.ndarray:
    """Depth-wise 3x3 -> BN -> pointwise expand + GeLU -> pointwise contract, plus residual."""
    C = x.shape[0]
    y = _conv_bn(x, w, "dw", "bn", method, padding=1, groups=C)
    y = gelu(conv2d(y, conv_params(w, "pw1"), method=method))
    return conv2d(y, conv_params(w, "pw2"), method=method) + x


def tokens_of(x: np.ndarray) -> np.ndarray:
    """C x H x W -> (H*W) x C, tokens in row-major (H, W) order."""
    return x.reshape(x.shape[0], -1).T


def map_of(tokens: np.ndarray, H: int, W: int) -> np.ndarray:
    return np.ascontiguousarray(tokens.T).reshape(-1, H, W)


def swiftformer_encoder(x: np.ndarray, w: Mapping, method: str = "im2col") -> np.ndarray:
    C, H, W = x.shape
    # local block, no residual of its own
    y = _conv_bn(x, w, "local.dw", "local.bn", method, padding=1, groups=C)
    y = conv2d(y, conv_params(w, "local.pw"), method=method)
    # global context over the H*W tokens
    t = tokens_of(y)
    t = attention.forward(t, attention_params(w)) + t
    y = map_of(t, H, W)
    # linear block: BN -> 1x1 expand -> GeLU -> 1x1 contract, residual
    p = bn_params(w, "mlp.bn")
    z = y if p is None else batchnorm_infer(y, p)
    z = gelu(conv2d(z, conv_params(w, "mlp.pw1"), method=method))
    return conv2d(z, conv_params(w, "mlp.pw2"), method=method) + y


def downsample(x: np.ndarray, w: Mapping, method: str = "im2col") -> np.ndarray:
    if x.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise DimensionError(f"downsample needs even H, W, got {x.shape}")
    return _conv_bn(x, w, "conv", "bn", method, stride=2, padding=1)


APPLY = {
    "patch_embed": patch_embed,
    "conv_encoder": conv_encoder,
    "swiftformer_encoder": swiftformer_encoder,
    "downsample": downsample,
}


def apply(spec: BlockSpec, x: np.ndarray, w: Mapping, method: str = "im2col") -> np.ndarray:
    if x.ndim != 3 or x.shape[0] != spec.channels_in:
        raise DimensionError(f"{spec.kind} expects {spec.channels_in} input channels, got shape {x.shape}")
    return APPLY[spec.kind](x, w, method=method)


def fold_batchnorms(spec: BlockSpec, w: Mapping) -> dict:
    """Return local weights with every conv -> BN pair folded into the conv."""
    pairs = {
        "patch_embed": [("conv1", "bn1"), ("conv2", "bn2")],
        "downsample": [("conv", "bn")],
        "conv_encoder": [("dw", "bn")],
        "swiftformer_encoder": [("local.dw", "local.bn")],
    }[spec.kind]
    out = dict(w)
    for conv, bn in pairs:
        bnp = bn_params(w, bn)
        if bnp is None:
            continue
        folded = fold_bn_into_conv(conv_params(w, conv), bnp)
        out[f"{conv}.weight"] = folded.weight
        out[f"{conv}.bias"] = folded.bias
        for f in BN_FIELDS:
            del out[f"{bn}.{f}"]
    return out
