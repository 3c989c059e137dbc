from dataclasses import replace

import numpy as np
import pytest

from swiftattn import blocks, constants, oracles
from swiftattn import model as M
from swiftattn.blocks import Prefixed
from swiftattn.tensor import DimensionError

TINY = M.ModelSpec("tiny", (4, 8), (8, 12, 16, 20), (1, 0, 1, 0), num_classes=5)


@pytest.fixture(scope="module")
def xs():
    return M.build(M.PRESETS["xs"], seed=0, dtype=np.float32)


def image(spec, size, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal((spec.in_channels, size, size)).astype(dtype)


def oracle_forward(m, img):
    x = img
    for prefix, bspec in M.layout(m.spec):
        x = oracles.BLOCKS[bspec.kind](x, Prefixed(m.weights.tensors, prefix))
    feats = [sum(x[c].ravel()) / x[c].size for c in range(x.shape[0])]
    heads = []
    for h in M.head_names(m.spec):
        W, b = m.weights[f"{h}.weight"], m.weights[f"{h}.bias"]
        heads.append(oracles.matmul(np.array([feats]), W)[0] + b)
    return sum(heads) / len(heads)


def test_tiny_model_matches_composition_oracle():
    m = M.build(TINY, seed=3)
    img = image(TINY, 32, 3)
    assert np.max(np.abs(M.forward(m, img) - oracle_forward(m, img))) < 1e-8


def test_tiny_single_head_matches_oracle():
    spec = TINY.with_head("single")
    m = M.build(spec, seed=1)
    img = image(spec, 32, 1)
    assert np.max(np.abs(M.forward(m, img) - oracle_forward(m, img))) < 1e-8


def test_build_is_deterministic():
    a, b = M.build(TINY, seed=5), M.build(TINY, seed=5)
    assert a.weights.identical(b.weights)
    assert not a.weights.identical(M.build(TINY, seed=6).weights)


def test_init_is_order_independent():
    # each tensor draws from its own stream keyed by name
    full = M.build(TINY, seed=2).weights
    for name, (shape, fan_in) in list(M.param_shapes(TINY).items())[::7]:
        np.testing.assert_array_equal(M._init_tensor(name, shape, fan_in, 2, np.float64), full[name])


def test_init_ranges():
    w = M.build(TINY, seed=0).weights
    for name, (shape, fan_in) in M.param_shapes(TINY).items():
        a = w[name]
        assert a.shape == shape and not a.flags.writeable
        if name.endswith((".gamma", ".running_var")):
            assert a.min() >= 0.5 and a.max() <= 1.5
        elif name.endswith((".beta", ".running_mean")):
            assert np.abs(a).max() <= 0.1
        else:
            assert np.abs(a).max() <= np.sqrt(1 / fan_in)


def test_xs_stage_shapes_and_logits(xs):
    outs = M.stage_outputs(xs, image(xs.spec, 224, dtype=np.float32))
    assert [o.shape for o in outs] == [(48, 56, 56), (48, 56, 56), (56, 28, 28), (112, 14, 14), (220, 7, 7)]
    logits = M.forward(xs, image(xs.spec, 224, dtype=np.float32))
    assert logits.shape == (1000,) and logits.dtype == np.float32
    assert np.all(np.isfinite(logits))


def test_xs_is_deterministic(xs):
    img = image(xs.spec, 64, 9, np.float32)
    np.testing.assert_array_equal(M.forward(xs, img), M.forward(M.build(xs.spec, 0, np.float32), img))


def test_small_input_toy(xs):
    outs = M.stage_outputs(xs, image(xs.spec, 64, dtype=np.float32))
    assert [o.shape[1:] for o in outs[1:]] == [(16, 16), (8, 8), (4, 4), (2, 2)]


def test_fused_matches_unfused(xs):
    img = image(xs.spec, 64, 4, np.float32)
    a = M.forward(xs, img)
    b = M.forward(M.fuse(xs), img)
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-4


def test_fused_double_precision_is_tight():
    m = M.build(TINY, seed=8)
    img = image(TINY, 32, 8)
    assert np.max(np.abs(M.forward(m, img) - M.forward(M.fuse(m), img))) < 1e-12


def test_direct_and_im2col_agree():
    m = M.build(TINY, seed=2)
    img = image(TINY, 32, 2)
    assert np.max(np.abs(M.forward(m, img, "direct") - M.forward(m, img))) < 1e-10


def test_input_errors(xs):
    with pytest.raises(DimensionError):
        M.forward(xs, np.ones((3, 48, 48), np.float32))
    with pytest.raises(DimensionError):
        M.forward(xs, np.ones((1, 64, 64), np.float32))
    with pytest.raises(DimensionError):
        M.mac_count(xs.spec, 100)


def test_attention_token_counts():
    assert M.attention_token_counts(M.PRESETS["xs"]) == [3136, 784, 196, 49]


@pytest.mark.parametrize("key", sorted(M.PRESETS))
def test_param_count_targets(key):
    spec = M.PRESETS[key]
    rep = M.param_count(spec)
    assert sum(rep.breakdown.values()) == rep.total
    target = constants.TARGET_PARAMS_M[key] * 1e6
    assert abs(rep.total - target) / target <= constants.PARAM_TOLERANCE


@pytest.mark.parametrize("key", sorted(M.PRESETS))
def test_mac_count_targets(key):
    rep = M.mac_count(M.PRESETS[key], 224)
    assert sum(rep.breakdown.values()) == rep.total
    target = constants.TARGET_GMACS[key] * 1e9
    assert abs(rep.total - target) / target <= constants.MAC_TOLERANCE


def test_param_count_matches_built_tensors():
    m = M.build(TINY, seed=0)
    learnable = sum(a.size for n, a in m.weights.tensors.items() if not blocks.is_buffer(n))
    assert M.param_count(m).total == learnable
    assert M.buffer_count(TINY) == sum(a.size for n, a in m.weights.tensors.items() if blocks.is_buffer(n))


def test_head_accounting():
    # a 10 -> 10 dense layer holds 110 parameters and 100 MACs
    spec = M.ModelSpec("h", (4, 7), (7, 8, 9, 10), (0, 0, 0, 0), num_classes=10, head="single")
    assert M.param_count(spec).head == 110
    assert M.mac_count(spec, 32).head == 100
    assert M.param_count(spec.with_head("dual")).head == 220


def test_mac_report_scales_with_resolution():
    spec = M.PRESETS["xs"]
    small, big = M.mac_count(spec, 224), M.mac_count(spec, 448)
    # conv and linear terms quadruple, the additive attention is linear in tokens: ratio exactly 4
    assert big.total_without_head == 4 * small.total_without_head


def test_preset_guard():
    with pytest.raises(KeyError):
        M.resolve_variant("xl")
    assert M.resolve_variant("XS") is M.PRESETS["xs"]


def test_spec_validation():
    with pytest.raises(ValueError):
        M.ModelSpec("bad", (4, 8), (8, 8, 16, 20), (1, 1, 1, 1))
    with pytest.raises(ValueError):
        M.ModelSpec("bad", (4, 6), (8, 12, 16, 20), (1, 1, 1, 1))
    with pytest.raises(ValueError):
        M.ModelSpec("bad", (4, 8), (8, 12, 16, 20), (1, 1, 1, 1), head="triple")


def test_custom_spec_parsing(tmp_path):
    text = "# toy\nstem = 4, 8\ndims = 8,12,16,20\ndepths = 1,0,1,0\nnum_classes = 5\nhead = single\n"
    path = tmp_path / "toy.spec"
    path.write_text(text)
    spec = M.resolve_variant(f"custom:{path}")
    assert spec == M.ModelSpec("toy", (4, 8), (8, 12, 16, 20), (1, 0, 1, 0), num_classes=5, head="single")
    with pytest.raises(ValueError):
        M.parse_spec_text("stem = 4,8\n")
    with pytest.raises(ValueError):
        M.parse_spec_text("stem = 4,8\ndims=8,12,16,20\ndepths=1,1,1,1\ncolour=red\n")


def test_spec_hash_depends_on_layout():
    hashes = {M.spec_hash(s) for s in M.PRESETS.values()}
    assert len(hashes) == len(M.PRESETS)
    # the name is not part of the layout
    assert M.spec_hash(TINY) == M.spec_hash(replace(TINY, name="renamed"))
    assert M.spec_hash(TINY) != M.spec_hash(replace(TINY, num_classes=6))
