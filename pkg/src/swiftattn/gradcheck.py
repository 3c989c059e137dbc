"""Central finite differences and the additive-attention gradient check."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import attention
from .attention import AttentionConfig

GRAD_FIELDS = ("W_q", "W_k", "w_a", "W_t", "b_t", "W_o", "b_o")


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar f at x, one coordinate at a time."""
    grad = np.zeros_like(x, dtype=np.float64)
    xw = np.array(x, dtype=np.float64, copy=True)
    for idx in np.ndindex(x.shape):
        orig = xw[idx]
        xw[idx] = orig + h
        fp = f(xw)
        xw[idx] = orig - h
        fm = f(xw)
        xw[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """|a - f| / max(|a|, |f|), with `floor` only guarding exact zeros."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradCheckResult:
    n: int
    d: int
    seed: int
    max_rel_error: float
    worst: str  # name of the tensor holding the worst entry


def check_additive(n: int, d: int, seed: int = 0, h: float = 1e-5, keep_value: bool = False,
                   **param_kw) -> GradCheckResult:
    """Compare attn_additive_backward with central differences of L = sum(out * R)."""
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(n=n, d=d, ablation_keep_value=keep_value)
    p = attention.init_params(cfg, seed=seed + 1, dtype=np.float64, **param_kw)
    x = rng.standard_normal((n, d))
    R = rng.standard_normal((n, d))

    def loss(xx, pp):
        return float(np.sum(attention.forward(xx, pp) * R))

    gx, grads = attention.attn_additive_backward(x, p, R)
    worst, worst_name = 0.0, ""
    errs = {"x": relative_error(gx, central_difference(lambda a: loss(a, p), x, h))}
    fields = GRAD_FIELDS + (("W_v",) if keep_value else ())
    for name in fields:
        num = central_difference(lambda a, name=name: loss(x, replace(p, **{name: a})), getattr(p, name), h)
        errs[name] = relative_error(grads[name], num)
    for name, e in errs.items():
        if e.max() > worst:
            worst, worst_name = float(e.max()), name
    return GradCheckResult(n, d, seed, worst, worst_name)


def random_cases(count: int, seed: int = 0, max_n: int = 8, max_d: int = 16) -> list[tuple[int, int, int]]:
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_d + 1)), seed * 1000 + i)
            for i in range(count)]


def directional_consistency(forward, x: np.ndarray, seed: int = 0) -> float:
    """Relative gap between directional derivatives of sum(out * R) at steps 1e-4 and 1e-5.

    For the baseline variants, which have no analytic backward, agreement of the
    two central differences confirms the forward is smooth and free of
    discontinuities along a random direction.
    """
    rng = np.random.default_rng(seed)
    R = rng.standard_normal(forward(x).shape)
    v = rng.standard_normal(x.shape)

    def slope(h):
        return (np.sum(forward(x + h * v) * R) - np.sum(forward(x - h * v) * R)) / (2 * h)

    a, b = slope(1e-4), slope(1e-5)
    return float(abs(a - b) / max(abs(a), abs(b), 1e-12))
