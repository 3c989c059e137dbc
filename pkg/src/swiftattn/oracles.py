"""Scalar-loop reference implementations.

Everything here is written element by element with Python floats and the
`math` module, sharing no code with the vectorised kernels it is used to
check.  Results come back as float64 arrays.  Only suitable for tiny sizes.
"""

from __future__ import annotations

import math

import numpy as np

# restated literally so a corrupted kernel constant cannot leak into the oracle
_GELU_C = 0.044715
_BN_EPS = 1e-5


def matmul(a, b):
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i, j] = s
    return out


def softmax_list(xs):
    m = max(xs)
    es = [math.exp(v - m) for v in xs]
    tot = sum(es)
    return [e / tot for e in es]


def gelu(v: float) -> float:
    return 0.5 * v * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (v + _GELU_C * v ** 3)))


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    C, H, W = x.shape
    Co, Cig, k, _ = weight.shape
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    cog = Co // groups
    out = np.zeros((Co, Ho, Wo))
    for o in range(Co):
        g = o // cog
        for i in range(Ho):
            for j in range(Wo):
                s = 0.0 if bias is None else float(bias[o])
                for c in range(Cig):
                    ci = g * Cig + c
                    for u in range(k):
                        for v in range(k):
                            y = i * stride + u - padding
                            z = j * stride + v - padding
                            if 0 <= y < H and 0 <= z < W:
                                s += float(x[ci, y, z]) * float(weight[o, c, u, v])
                out[o, i, j] = s
    return out


def batchnorm(x, gamma, beta, mean, var, eps=_BN_EPS):
    out = np.zeros(x.shape)
    for c in range(x.shape[0]):
        for idx in np.ndindex(x.shape[1:]):
            out[(c,) + idx] = (float(x[(c,) + idx]) - mean[c]) / math.sqrt(var[c] + eps) * gamma[c] + beta[c]
    return out


def gelu_map(x):
    out = np.zeros(x.shape)
    for idx in np.ndindex(x.shape):
        out[idx] = gelu(float(x[idx]))
    return out


def _row_norm(row):
    return math.sqrt(sum(v * v for v in row))


def _project(x, W):
    n, d = x.shape
    return [[sum(float(x[i, t]) * float(W[t, j]) for t in range(W.shape[0])) for j in range(W.shape[1])]
            for i in range(n)]


def _affine_rows(rows, W, b):
    return [[sum(r[t] * float(W[t, j]) for t in range(len(r))) + (0.0 if b is None else float(b[j]))
             for j in range(W.shape[1])] for r in rows]


def attn_standard(x, p):
    n, d = x.shape
    h = p.heads
    dh = d // h
    Q, K, V = _project(x, p.W_q), _project(x, p.W_k), _project(x, p.W_v)
    cat = [[0.0] * d for _ in range(n)]
    for head in range(h):
        lo = head * dh
        for i in range(n):
            logits = [sum(Q[i][lo + t] * K[j][lo + t] for t in range(dh)) / math.sqrt(dh) for j in range(n)]
            w = softmax_list(logits)
            for t in range(dh):
                cat[i][lo + t] = sum(w[j] * V[j][lo + t] for j in range(n))
    return np.array(_affine_rows(cat, p.W_o, p.b_o))


def attn_transpose(x, p):
    n, d = x.shape
    Q, K, V = _project(x, p.W_q), _project(x, p.W_k), _project(x, p.W_v)
    amap = []
    for a in range(d):
        logits = [sum(Q[i][a] * K[i][b] for i in range(n)) / math.sqrt(d) for b in range(d)]
        amap.append(softmax_list(logits))
    mixed = [[sum(V[i][a] * amap[a][b] for a in range(d)) for b in range(d)] for i in range(n)]
    return np.array(_affine_rows(mixed, p.W_o, p.b_o))


def attn_separable(x, p):
    n, d = x.shape
    logits = [sum(float(x[i, t]) * float(p.w_q[t]) for t in range(d)) for i in range(n)]
    scores = softmax_list(logits)
    K, V = _project(x, p.W_k), _project(x, p.W_v)
    context = [sum(scores[i] * K[i][t] for i in range(n)) for t in range(d)]
    mixed = [[V[i][t] * context[t] for t in range(d)] for i in range(n)]
    return np.array(_affine_rows(mixed, p.W_o, p.b_o))


def attn_additive(x, p, eps=1e-12):
    """Additive attention (with the value branch if p.W_v is set), token by token."""
    n, d = x.shape
    Q, K = _project(x, p.W_q), _project(x, p.W_k)
    if p.normalize:
        Q = [[v / max(_row_norm(r), eps) for v in r] for r in Q]
        K = [[v / max(_row_norm(r), eps) for v in r] for r in K]
    scale = 1.0 / math.sqrt(d)
    logits = [sum(Q[i][t] * float(p.w_a[t]) for t in range(d)) * scale for i in range(n)]
    if p.alpha_mode == "softmax":
        alpha = softmax_list(logits)
    else:
        nrm = max(math.sqrt(sum(v * v for v in logits)), eps)
        alpha = [v / nrm for v in logits]
    q = [sum(alpha[i] * Q[i][t] for i in range(n)) for t in range(d)]
    ctx = [[K[i][t] * q[t] for t in range(d)] for i in range(n)]
    T = _affine_rows(ctx, p.W_t, p.b_t)
    if p.W_v is not None:
        V = _project(x, p.W_v)
        T = [[V[i][t] * T[i][t] for t in range(d)] for i in range(n)]
    pre = [[Q[i][t] + T[i][t] for t in range(d)] for i in range(n)]
    return np.array(_affine_rows(pre, p.W_o, p.b_o))


# --- block compositions ---------------------------------------------------


def _bn(x, w, prefix):
    if f"{prefix}.gamma" not in w:
        return x
    return batchnorm(x, *(np.asarray(w[f"{prefix}.{f}"], float)
                          for f in ("gamma", "beta", "running_mean", "running_var")))


def _conv(x, w, prefix, **kw):
    return conv2d(x, w[f"{prefix}.weight"], w.get(f"{prefix}.bias"), **kw)


def conv_encoder(x, w):
    C = x.shape[0]
    y = _bn(_conv(x, w, "dw", padding=1, groups=C), w, "bn")
    y = gelu_map(_conv(y, w, "pw1"))
    return _conv(y, w, "pw2") + x


def swiftformer_encoder(x, w):
    from .attention import AdditiveAttentionParams

    C, H, W = x.shape
    y = _bn(_conv(x, w, "local.dw", padding=1, groups=C), w, "local.bn")
    y = _conv(y, w, "local.pw")
    tokens = np.array([[y[c, i, j] for c in range(C)] for i in range(H) for j in range(W)])
    names = ("W_q", "W_k", "w_a", "W_t", "b_t", "W_o", "b_o")
    p = AdditiveAttentionParams(*(np.asarray(w[f"attn.{k}"], float) for k in names),
                                W_v=None if "attn.W_v" not in w else np.asarray(w["attn.W_v"], float))
    tokens = attn_additive(tokens, p) + tokens
    y = np.zeros((C, H, W))
    for i in range(H):
        for j in range(W):
            for c in range(C):
                y[c, i, j] = tokens[i * W + j, c]
    z = gelu_map(_conv(_bn(y, w, "mlp.bn"), w, "mlp.pw1"))
    return _conv(z, w, "mlp.pw2") + y


def downsample(x, w):
    return _bn(_conv(x, w, "conv", stride=2, padding=1), w, "bn")


def patch_embed(x, w):
    y = gelu_map(_bn(_conv(x, w, "conv1", stride=2, padding=1), w, "bn1"))
    return gelu_map(_bn(_conv(y, w, "conv2", stride=2, padding=1), w, "bn2"))


BLOCKS = {
    "patch_embed": patch_embed,
    "conv_encoder": conv_encoder,
    "swiftformer_encoder": swiftformer_encoder,
    "downsample": downsample,
}
