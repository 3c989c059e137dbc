"""Small-size verification suites behind the ``selftest`` subcommand."""

from __future__ import annotations

import contextlib

import numpy as np

from . import attention, blocks, gradcheck, nnops, oracles
from . import tensor as T
from .attention import AttentionConfig
from .blocks import BlockSpec

ORACLE_TOL = 1e-10
GRAD_TOL = 1e-4
FUSION_TOL = 1e-6


@contextlib.contextmanager
def _patched(obj, attr, value):
    old = getattr(obj, attr)
    setattr(obj, attr, value)
    try:
        yield
    finally:
        setattr(obj, attr, old)


# deliberate-fault injection for checking that the suites can fail
FAULTS = {
    "gelu-coeff": lambda: _patched(nnops, "GELU_COEFF", 0.05),
    "attn-scale": lambda: _patched(attention.AdditiveAttentionParams, "scale", property(lambda self: 1.0)),
}


def random_block_weights(spec: BlockSpec, rng, dtype=np.float64) -> dict:
    w = {}
    for name, (shape, fan_in) in blocks.param_shapes(spec).items():
        if name.endswith(("gamma", "running_var")):
            w[name] = rng.uniform(0.5, 1.5, shape).astype(dtype)
        elif name.endswith(("beta", "running_mean")):
            w[name] = rng.uniform(-0.2, 0.2, shape).astype(dtype)
        else:
            a = np.sqrt(1.0 / fan_in)
            w[name] = rng.uniform(-a, a, shape).astype(dtype)
    return w


def _close(a, b, tol):
    return a.shape == b.shape and float(np.max(np.abs(a - b))) <= tol


def suite_oracle(instances: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    ok = total = 0
    for i in range(instances):
        a = rng.standard_normal((int(rng.integers(1, 7)), int(rng.integers(1, 7))))
        b = rng.standard_normal((a.shape[1], int(rng.integers(1, 7))))
        total += 1
        ok += _close(T.matmul(a, b), oracles.matmul(a, b), 1e-12)

        C = int(rng.integers(1, 5))
        x = rng.standard_normal((C, 5, 6))
        for groups, k, stride in ((1, 3, 1), (C, 3, 2), (1, 1, 1)):
            co = C * int(rng.integers(1, 3))
            p = nnops.Conv2dParams(rng.standard_normal((co, C // groups, k, k)), rng.standard_normal(co),
                                   stride=stride, padding=k // 2, groups=groups)
            ref = oracles.conv2d(x, p.weight, p.bias, stride, p.padding, groups)
            total += 2
            ok += _close(nnops.conv2d(x, p, "direct"), ref, ORACLE_TOL)
            ok += _close(nnops.conv2d(x, p, "im2col"), ref, ORACLE_TOL)

        n, d = int(rng.integers(1, 6)), 2 * int(rng.integers(1, 4))
        xt = rng.standard_normal((n, d))
        for variant, ref_fn in (("standard", oracles.attn_standard), ("transpose", oracles.attn_transpose),
                                ("separable", oracles.attn_separable), ("additive", oracles.attn_additive)):
            heads = 2 if variant == "standard" else 1
            p = attention.init_params(AttentionConfig(n, d, variant, heads=heads), seed=seed + i)
            total += 1
            ok += _close(attention.forward(xt, p), ref_fn(xt, p), ORACLE_TOL)
        p = attention.init_params(AttentionConfig(n, d, "additive", ablation_keep_value=True), seed=seed + i)
        total += 1
        ok += _close(attention.attn_additive_qkv(xt, p), oracles.attn_additive(xt, p), ORACLE_TOL)

        for kind in ("conv_encoder", "swiftformer_encoder"):
            spec = BlockSpec(kind, 3, 3)
            w = random_block_weights(spec, rng)
            xm = rng.standard_normal((3, 3, 3))
            total += 1
            ok += _close(blocks.apply(spec, xm, w), oracles.BLOCKS[kind](xm, w), ORACLE_TOL)
    return int(ok), total


def suite_gradient(cases: int = 5, seed: int = 0):
    ok = total = 0
    for n, d, s in gradcheck.random_cases(cases, seed):
        total += 1
        ok += gradcheck.check_additive(n, d, s).max_rel_error < GRAD_TOL
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 6))
    for variant in ("standard", "transpose", "separable"):
        p = attention.init_params(AttentionConfig(5, 6, variant, heads=2 if variant == "standard" else 1), seed=seed)
        total += 1
        ok += gradcheck.directional_consistency(lambda a: attention.forward(a, p), x, seed) < GRAD_TOL
    return int(ok), total


def suite_fusion(instances: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    ok = total = 0
    for _ in range(instances):
        C = int(rng.integers(1, 9))
        x = rng.standard_normal((C, 7, 7)).astype(np.float32)
        bn = nnops.BatchNormParams(*(rng.uniform(lo, hi, C).astype(np.float32)
                                     for lo, hi in ((0.5, 1.5), (-0.2, 0.2), (-0.2, 0.2), (0.5, 1.5))))
        for groups, k in ((C, 3), (1, 1), (1, 3)):
            a = 1.0 / np.sqrt(C // groups * k * k)
            conv = nnops.Conv2dParams(rng.uniform(-a, a, (C, C // groups, k, k)).astype(np.float32),
                                      padding=k // 2, groups=groups)
            ref = nnops.batchnorm_infer(nnops.conv2d(x, conv), bn)
            total += 1
            ok += _close(nnops.conv2d(x, nnops.fold_bn_into_conv(conv, bn)), ref, FUSION_TOL)
    return int(ok), total


def suite_properties(instances: int = 4, seed: int = 0):
    rng = np.random.default_rng(seed)
    ok = total = 0
    for i in range(instances):
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 9))
        x = rng.standard_normal((n, d))
        p = attention.init_params(AttentionConfig(n, d), seed=seed + i)
        perm = rng.permutation(n)
        with attention.observe() as rec:
            out = attention.attn_additive(x, p)
            out_p = attention.attn_additive(x[perm], p)
        total += 3
        ok += _close(out_p, out[perm], 1e-10)
        ok += _close(rec[0]["q"], rec[1]["q"], 1e-10)
        ok += abs(rec[0]["alpha"].sum() - 1.0) < 1e-6

        logits = rng.standard_normal(d) * 10
        total += 1
        ok += _close(T.softmax(logits + rng.normal() * 100), T.softmax(logits), 1e-12)

        total += 1
        ok += _close(_additive_with_logit_shift(x, p, 3.7), out, 1e-10)

        for kind in ("conv_encoder", "swiftformer_encoder"):
            spec = BlockSpec(kind, 3, 3)
            w = random_block_weights(spec, rng)
            xm = rng.standard_normal((3, 4, 4))
            total += 1
            ok += np.array_equal(blocks.apply(spec, xm, zero_residual_branches(spec, w)),
                                 degenerate_reference(spec, xm, w))
    return int(ok), total


def _additive_with_logit_shift(x, p, c):
    """attn_additive with a constant added to every attention logit."""
    orig = attention._normalize_alpha

    def shifted(logits, mode, eps):
        return orig(logits + c, mode, eps)

    with _patched(attention, "_normalize_alpha", shifted):
        return attention.attn_additive(x, p)


def zero_residual_branches(spec: BlockSpec, w: dict) -> dict:
    """Zero the weights of every branch that feeds a residual add."""
    if spec.kind == "conv_encoder":
        branch = ("pw2.",)
    else:
        branch = ("attn.W_o", "attn.b_o", "mlp.pw2.")
    return {k: (np.zeros_like(v) if k.startswith(branch) else v) for k, v in w.items()}


def degenerate_reference(spec: BlockSpec, x, w):
    """What a block reduces to once its residual branches are zeroed."""
    if spec.kind == "conv_encoder":
        return x
    # no residual around the local block, so the encoder collapses onto it
    C = x.shape[0]
    y = nnops.batchnorm_infer(nnops.conv2d(x, blocks.conv_params(w, "local.dw", padding=1, groups=C)),
                              blocks.bn_params(w, "local.bn"))
    return nnops.conv2d(y, blocks.conv_params(w, "local.pw"))


SUITES = {
    "oracle-equivalence": suite_oracle,
    "gradient-check": suite_gradient,
    "bn-fusion": suite_fusion,
    "properties": suite_properties,
}


def run(fault: str | None = None, seed: int = 0) -> dict[str, tuple[int, int]]:
    ctx = FAULTS[fault]() if fault else contextlib.nullcontext()
    with ctx:
        return {name: fn(seed=seed) for name, fn in SUITES.items()}
