"""Attention operators on n x d token matrices.

Four interchangeable mechanisms: standard multi-head dot-product attention,
transpose (channel) attention, separable attention, and efficient additive
attention.  Additive attention also has an optional value branch (the
pre-ablation QKV form) and an exact reverse-mode backward pass.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, L2_EPS, softmax

VARIANTS = ("standard", "transpose", "separable", "additive")
ALPHA_MODES = ("softmax", "l2")


@dataclass(frozen=True)
class AttentionConfig:
    n: int
    d: int
    variant: str = "additive"
    heads: int = 1
    ablation_keep_value: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")
        if self.variant == "standard" and self.d % self.heads:
            raise DimensionError(f"d={self.d} not divisible by heads={self.heads}")


@dataclass(frozen=True)
class AdditiveAttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    w_a: np.ndarray
    W_t: np.ndarray
    b_t: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    W_v: np.ndarray | None = None  # set only for the key-value (ablation) form
    normalize: bool = True  # row-wise L2 on Q and K; off -> raw projections
    alpha_mode: str = "softmax"

    def __post_init__(self):
        d = self.d
        for name in ("W_q", "W_k", "W_t", "W_o"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        for name in ("w_a", "b_t", "b_o"):
            if getattr(self, name).shape != (d,):
                raise DimensionError(f"{name} must have length {d}")
        if self.W_v is not None and self.W_v.shape != (d, d):
            raise DimensionError(f"W_v must be {d}x{d}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"alpha_mode must be one of {ALPHA_MODES}")

    @property
    def d(self) -> int:
        return self.W_q.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.d)


@dataclass(frozen=True)
class StandardAttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    heads: int = 1

    def __post_init__(self):
        if self.W_q.shape[0] % self.heads:
            raise DimensionError(f"d={self.W_q.shape[0]} not divisible by heads={self.heads}")


@dataclass(frozen=True)
class TransposeAttentionParams:
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray


@dataclass(frozen=True)
class SeparableAttentionParams:
    # q-branch is a single d -> 1 projection producing one context logit per token
    w_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray


# --- introspection -------------------------------------------------------

_observers: list = []
_alloc_logs: list = []


@contextlib.contextmanager
def observe():
    """Collect one record per additive-attention forward call made inside the block.

    Each record is a dict with keys n, d, alpha, q.
    """
    records: list = []
    _observers.append(records)
    try:
        yield records
    finally:
        _observers.remove(records)


@contextlib.contextmanager
def track_allocations():
    """Record (label, element count) for every intermediate buffer a kernel allocates."""
    log: list = []
    _alloc_logs.append(log)
    try:
        yield log
    finally:
        _alloc_logs.remove(log)


def _track(label: str, a: np.ndarray) -> np.ndarray:
    for log in _alloc_logs:
        log.append((label, a.size))
    return a


def _check_tokens(x: np.ndarray, d: int):
    if x.ndim != 2 or x.shape[1] != d:
        raise DimensionError(f"expected tokens n x {d}, got {x.shape}")


# --- baselines -----------------------------------------------------------


def attn_standard(x: np.ndarray, p: StandardAttentionParams, block_rows: int | None = None) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated, then output projection.

    Scores are computed `block_rows` query rows at a time; the full n x n map is
    still evaluated, only never held in memory at once.
    """
    d = p.W_q.shape[0]
    _check_tokens(x, d)
    n = x.shape[0]
    h = p.heads
    dh = d // h
    Q = _track("Q", x @ p.W_q)
    K = _track("K", x @ p.W_k)
    V = _track("V", x @ p.W_v)
    if block_rows is None:
        block_rows = max(1, (1 << 24) // (n * h))
    s = 1.0 / math.sqrt(dh)
    Qh = Q.reshape(n, h, dh).transpose(1, 0, 2)
    Kh = K.reshape(n, h, dh).transpose(1, 2, 0)
    Vh = V.reshape(n, h, dh).transpose(1, 0, 2)
    heads_out = np.empty((h, n, dh), dtype=x.dtype)
    for r0 in range(0, n, block_rows):
        r1 = min(n, r0 + block_rows)
        scores = _track("scores", (Qh[:, r0:r1] * s) @ Kh)
        heads_out[:, r0:r1] = softmax(scores, axis=-1) @ Vh
    out = heads_out.transpose(1, 0, 2).reshape(n, d)
    return out @ p.W_o + p.b_o


def attn_transpose(x: np.ndarray, p: TransposeAttentionParams) -> np.ndarray:
    """V softmax(Q^T K / sqrt(d)): a d x d channel map applied from the right."""
    d = p.W_q.shape[0]
    _check_tokens(x, d)
    Q = x @ p.W_q
    K = x @ p.W_k
    V = x @ p.W_v
    amap = _track("map", softmax((Q.T @ K) / math.sqrt(d), axis=-1))
    return (V @ amap) @ p.W_o + p.b_o


def attn_separable(x: np.ndarray, p: SeparableAttentionParams) -> np.ndarray:
    d = p.W_k.shape[0]
    _check_tokens(x, d)
    scores = softmax(x @ p.w_q, axis=0)
    K = x @ p.W_k
    V = x @ p.W_v
    context = scores @ K
    return (V * context) @ p.W_o + p.b_o


# --- efficient additive attention ----------------------------------------


def _normalize_alpha(logits: np.ndarray, mode: str, eps: float) -> np.ndarray:
    if mode == "softmax":
        return softmax(logits, axis=0)
    return logits / max(np.sqrt(logits @ logits), eps)


def _additive_forward(x: np.ndarray, p: AdditiveAttentionParams):
    d = p.d
    _check_tokens(x, d)
    eps = L2_EPS[x.dtype]
    Qr = _track("Q", x @ p.W_q)
    Kr = _track("K", x @ p.W_k)
    if p.normalize:
        q_norm = np.maximum(np.sqrt(np.einsum("ij,ij->i", Qr, Qr)), eps)
        k_norm = np.maximum(np.sqrt(np.einsum("ij,ij->i", Kr, Kr)), eps)
        Q = _track("Q_hat", Qr / q_norm[:, None])
        K = _track("K_hat", Kr / k_norm[:, None])
    else:
        q_norm = k_norm = None
        Q, K = Qr, Kr
    logits = _track("logits", (Q @ p.w_a) * p.scale)
    alpha = _track("alpha", _normalize_alpha(logits, p.alpha_mode, eps))
    q = alpha @ Q
    G = _track("context", K * q)
    TG = _track("T", G @ p.W_t + p.b_t)
    V = None
    if p.W_v is not None:
        V = _track("V", x @ p.W_v)
        mix = _track("VT", V * TG)
    else:
        mix = TG
    pre = _track("pre", Q + mix)
    out = _track("out", pre @ p.W_o + p.b_o)
    for records in _observers:
        records.append({"n": x.shape[0], "d": d, "alpha": alpha.copy(), "q": q.copy()})
    cache = dict(x=x, Qr=Qr, Kr=Kr, Q=Q, K=K, q_norm=q_norm, k_norm=k_norm, logits=logits,
                 alpha=alpha, q=q, G=G, TG=TG, V=V, pre=pre)
    return out, cache


def attn_additive(x: np.ndarray, p: AdditiveAttentionParams) -> np.ndarray:
    """Efficient additive attention, Theta(n d^2) with no n x n intermediate.

    Q, K are (optionally row-normalised) projections; alpha normalises the
    scaled logits Q w_a over tokens; q = sum_i alpha_i Q_i is the global
    query; the output is proj_out(Q + T(K * q)).
    """
    if p.W_v is not None:
        raise ValueError("params carry W_v; use attn_additive_qkv")
    return _additive_forward(x, p)[0]


def attn_additive_qkv(x: np.ndarray, p: AdditiveAttentionParams) -> np.ndarray:
    """Key-value form: proj_out(Q + V * T(K * q)) with V = x W_v."""
    if p.W_v is None:
        raise ValueError("attn_additive_qkv needs params with W_v")
    return _additive_forward(x, p)[0]


def _row_normalize_backward(g: np.ndarray, y: np.ndarray, norm: np.ndarray, eps: float) -> np.ndarray:
    # y = r / max(|r|, eps); rows at the eps clamp are a plain scaling
    active = norm > eps
    radial = np.einsum("ij,ij->i", y, g) * active
    return (g - y * radial[:, None]) / norm[:, None]


def attn_additive_backward(x: np.ndarray, p: AdditiveAttentionParams, upstream: np.ndarray):
    """Reverse-mode gradients of attn_additive (or the qkv form if W_v is set).

    Returns (grad_x, grads) where grads maps parameter field names to arrays.
    """
    out, c = _additive_forward(x, p)
    if upstream.shape != out.shape:
        raise DimensionError(f"upstream gradient {upstream.shape} != output {out.shape}")
    eps = L2_EPS[x.dtype]
    g = upstream
    grads = {}
    grads["W_o"] = c["pre"].T @ g
    grads["b_o"] = g.sum(axis=0)
    g_pre = g @ p.W_o.T

    gQ = g_pre.copy()
    if p.W_v is not None:
        g_V = g_pre * c["TG"]
        g_TG = g_pre * c["V"]
        grads["W_v"] = x.T @ g_V
        gx = g_V @ p.W_v.T
    else:
        g_TG = g_pre
        gx = np.zeros_like(x)
    grads["W_t"] = c["G"].T @ g_TG
    grads["b_t"] = g_TG.sum(axis=0)
    g_G = g_TG @ p.W_t.T

    K, Q, q, alpha = c["K"], c["Q"], c["q"], c["alpha"]
    gK = g_G * q
    g_q = np.einsum("ij,ij->j", g_G, K)
    g_alpha = Q @ g_q
    gQ += np.outer(alpha, g_q)

    if p.alpha_mode == "softmax":
        g_logits = alpha * (g_alpha - alpha @ g_alpha)
    else:
        s = c["logits"]
        norm = np.sqrt(s @ s)
        if norm > eps:
            g_logits = (g_alpha - alpha * (alpha @ g_alpha)) / norm
        else:
            g_logits = g_alpha / eps
    grads["w_a"] = p.scale * (Q.T @ g_logits)
    gQ += p.scale * np.outer(g_logits, p.w_a)

    if p.normalize:
        gQr = _row_normalize_backward(gQ, Q, c["q_norm"], eps)
        gKr = _row_normalize_backward(gK, K, c["k_norm"], eps)
    else:
        gQr, gKr = gQ, gK
    grads["W_q"] = x.T @ gQr
    grads["W_k"] = x.T @ gKr
    gx = gx + gQr @ p.W_q.T + gKr @ p.W_k.T
    return gx, grads


# --- accounting ----------------------------------------------------------


def attn_mac_count(cfg: AttentionConfig) -> int:
    """Exact multiply-accumulate count of one forward call.

    Softmax, normalisations, scaling and residual adds are excluded.
    Element-wise products count one MAC per element.

    standard:  Q,K,V,O projections 4nd^2 + QK^T n^2 d + AV n^2 d
    transpose: 4nd^2 + Q^T K nd^2 + V map nd^2
    separable: K,V,O projections 3nd^2 + context logits nd + pooling nd + V*context nd
    additive:  Q,K,T,O projections 4nd^2 + logits nd + pooling nd + K*q nd
               (+ V projection nd^2 and V*T nd when the value branch is kept)
    """
    n, d = cfg.n, cfg.d
    if cfg.variant == "standard":
        return 4 * n * d * d + 2 * n * n * d
    if cfg.variant == "transpose":
        return 4 * n * d * d + 2 * n * d * d
    if cfg.variant == "separable":
        return 3 * n * d * d + 3 * n * d
    macs = 4 * n * d * d + 3 * n * d
    if cfg.ablation_keep_value:
        macs += n * d * d + n * d
    return macs


def attn_param_count(cfg: AttentionConfig) -> int:
    d = cfg.d
    if cfg.variant in ("standard", "transpose"):
        return 4 * d * d + d
    if cfg.variant == "separable":
        return d + 3 * d * d + d
    count = 4 * d * d + 3 * d
    if cfg.ablation_keep_value:
        count += d * d
    return count


# --- parameter construction ----------------------------------------------


def _uniform(rng, shape, fan_in, dtype):
    a = math.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape).astype(dtype)


def init_params(cfg: AttentionConfig, seed: int = 0, dtype=np.float64, **kw):
    """Fan-in uniform parameters for the variant named in `cfg`."""
    rng = np.random.default_rng(seed)
    d = cfg.d
    u = lambda *shape: _uniform(rng, shape, d, dtype)  # noqa: E731
    if cfg.variant == "standard":
        return StandardAttentionParams(u(d, d), u(d, d), u(d, d), u(d, d), u(d), heads=cfg.heads)
    if cfg.variant == "transpose":
        return TransposeAttentionParams(u(d, d), u(d, d), u(d, d), u(d, d), u(d))
    if cfg.variant == "separable":
        return SeparableAttentionParams(u(d), u(d, d), u(d, d), u(d, d), u(d))
    W_q, W_k, w_a, W_t, b_t, W_o, b_o = u(d, d), u(d, d), u(d), u(d, d), u(d), u(d, d), u(d)
    W_v = u(d, d) if cfg.ablation_keep_value else None
    return AdditiveAttentionParams(W_q, W_k, w_a, W_t, b_t, W_o, b_o, W_v=W_v, **kw)


def forward(x: np.ndarray, params) -> np.ndarray:
    """Dispatch on the parameter type."""
    if isinstance(params, AdditiveAttentionParams):
        return _additive_forward(x, params)[0]
    if isinstance(params, StandardAttentionParams):
        return attn_standard(x, params)
    if isinstance(params, TransposeAttentionParams):
        return attn_transpose(x, params)
    if isinstance(params, SeparableAttentionParams):
        return attn_separable(x, params)
    raise TypeError(f"unknown attention params {type(params).__name__}")
