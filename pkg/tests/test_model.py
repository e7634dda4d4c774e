import dataclasses

import numpy as np
import pytest

from pantiny import ops
from pantiny.gradcheck import grad_check
from pantiny.losses import composite
from pantiny.model import (BUDGETS, FUSION_KINDS, PRESETS, REFINE_KINDS, ChannelAttention, ConfigError,
                           ModelConfig, PanTiny, TransformerBlock, build, param_count, search_presets)
from pantiny.ops import ShapeError
from pantiny.tensor import Tensor, backward
from pantiny.train import AdamState, adam_step

SMALL_PARAMS = 48_614
BIG_PARAMS = 83_132

TINY = ModelConfig(channels=8, num_blocks=1)


def n_params(model) -> int:
    return sum(p.size for p in model.parameters())


def zero_(module_or_param):
    params = module_or_param.parameters() if hasattr(module_or_param, "parameters") else [module_or_param]
    for p in params:
        p.data[...] = 0


@pytest.fixture
def rng():
    return np.random.default_rng(5)


def inputs(rng, B=2, h=4, r=4, bands=4):
    lrms = rng.random((B, bands, h, h)).astype(np.float32)
    pan = rng.random((B, 1, h * r, h * r)).astype(np.float32)
    return lrms, pan


# -- budgets -------------------------------------------------------------------------------


def test_preset_param_counts_are_pinned():
    assert param_count(PRESETS["small"]) == SMALL_PARAMS
    assert param_count(PRESETS["big"]) == BIG_PARAMS


@pytest.mark.parametrize("name", ["small", "big"])
def test_presets_within_ten_percent_of_budget(name):
    assert abs(param_count(PRESETS[name]) - BUDGETS[name]) <= 0.10 * BUDGETS[name]


def test_small_and_big_land_in_budget_windows():
    assert 43_500 <= param_count(PRESETS["small"]) <= 53_100
    assert 73_500 <= param_count(PRESETS["big"]) <= 89_900


def test_search_reproduces_presets():
    found = search_presets()
    assert found["small"] == PRESETS["small"]
    assert found["big"] == PRESETS["big"]


@pytest.mark.parametrize("fusion", FUSION_KINDS)
@pytest.mark.parametrize("refine", REFINE_KINDS)
def test_param_count_matches_built_model(fusion, refine):
    cfg = ModelConfig(channels=8, num_blocks=2, attn_heads=2, fusion_kind=fusion, refine_kind=refine)
    assert n_params(PanTiny(cfg)) == param_count(cfg)


@pytest.mark.parametrize("name", ["small", "big"])
def test_preset_built_count(name):
    assert n_params(build(name)) == param_count(PRESETS[name])


def test_doubling_channels_increases_count():
    for c in (4, 8, 16, 32):
        assert param_count(ModelConfig(channels=2 * c)) > param_count(ModelConfig(channels=c))


def test_hidden_channels_is_even():
    for c in range(1, 40):
        for g in (1.0, 1.5, 2.0, 2.66, 3.0):
            assert ModelConfig(channels=c, ffn_expansion=g).hidden_channels % 2 == 0


def test_invalid_config_lists_every_violation():
    bad = ModelConfig(channels=6, attn_heads=4, fusion_kind="nope", upsample_mode="nearest")
    with pytest.raises(ConfigError) as info:
        build(bad)
    msg = str(info.value)
    assert "attn_heads" in msg and "fusion_kind" in msg and "upsample_mode" in msg


def test_build_is_deterministic():
    a, b, c = build(TINY, seed=3), build(TINY, seed=3), build(TINY, seed=4)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    assert any(not np.array_equal(pa.data, pc.data) for pa, pc in zip(a.parameters(), c.parameters()))


def test_parameter_names_unique_and_assigned():
    model = build("small")
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names)) and all(names)
    assert "body.0.attn.qkv_dwconv.weight" in names


def test_temperature_starts_at_one():
    model = build(ModelConfig(channels=8, num_blocks=2, attn_heads=2))
    for block in model.body:
        assert np.array_equal(block.attn.temperature.data, np.ones((2, 1, 1)))


# -- components ------------------------------------------------------------------------------


def test_encode_shapes_and_zero_input(rng):
    model = build(TINY)
    out = model.encode(Tensor(rng.random((2, 4, 32, 32)).astype(np.float32)))
    assert out.shape == (2, 8, 32, 32)
    zero_(model.encoder.bias)
    assert np.array_equal(model.encode(Tensor(np.zeros((1, 4, 8, 8)))).data, np.zeros((1, 8, 8, 8)))
    with pytest.raises(ShapeError):
        model.encode(Tensor(np.zeros((1, 3, 8, 8))))


def test_encoder_receives_gradient(rng):
    model = build(TINY)
    lrms, pan = inputs(rng)
    backward((model(lrms, pan) ** 2).mean())
    assert np.abs(model.encoder.weight.grad).sum() > 0


@pytest.mark.parametrize("kind", FUSION_KINDS)
def test_fusion_kinds_preserve_shape(kind, rng):
    model = build(dataclasses.replace(TINY, fusion_kind=kind))
    feats = Tensor(rng.standard_normal((2, 8, 8, 8)).astype(np.float32))
    assert model.fuse(feats, Tensor(rng.random((2, 1, 8, 8)).astype(np.float32))).shape == (2, 8, 8, 8)
    with pytest.raises(ShapeError):
        model.fuse(feats, Tensor(np.zeros((2, 1, 4, 4))))


def test_zero_pan_leaves_only_feature_path(rng):
    model = build(TINY)
    fusion = model.fusion
    zero_(fusion.pan_proj.bias)
    feats = Tensor(rng.standard_normal((1, 8, 6, 6)).astype(np.float32))
    fused = model.fuse(feats, Tensor(np.zeros((1, 1, 6, 6)))).data
    # the same computation with conv1 restricted to its feature-input channels
    w1 = Tensor(fusion.conv1.weight.data[:, :8])
    h = ops.gelu(ops.conv2d(feats, w1, fusion.conv1.bias, padding=1))
    ref = ops.conv2d(h, fusion.conv2.weight, fusion.conv2.bias, padding=1).data
    np.testing.assert_allclose(fused, ref, rtol=1e-5, atol=1e-6)


def test_attention_rows_are_probabilities(rng):
    ca = ChannelAttention(8, 2, rng)
    ca(Tensor(rng.standard_normal((3, 8, 5, 5)).astype(np.float32)))
    a = ca.last_attention
    assert a.shape == (3, 2, 4, 4)
    assert np.all((a >= 0) & (a <= 1))
    np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-6)


def test_zero_temperature_gives_channel_mean_of_v(rng):
    ca = ChannelAttention(8, 2, rng)
    ca.temperature.data[...] = 0
    x = Tensor(rng.standard_normal((2, 8, 5, 5)).astype(np.float32))
    out = ca.attend(x).data
    v = ca.qkv_dwconv(ca.qkv(x)).data[:, 16:24]
    for head in range(2):
        mean_v = v[:, 4 * head:4 * head + 4].mean(axis=1, keepdims=True)
        np.testing.assert_allclose(out[:, 4 * head:4 * head + 4], np.repeat(mean_v, 4, axis=1), rtol=1e-5, atol=1e-6)


def test_channel_attention_gradient(rng):
    ca = ChannelAttention(4, 2, rng)
    x = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
    probe = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
    params = [x, *ca.parameters()]
    assert grad_check(lambda x, *ps: (ca(x) * probe).sum(), params) < 2e-3


def test_gdfn_zero_gate_path_outputs_bias(rng):
    block = TransformerBlock(TINY, rng)
    ffn = block.ffn
    half = TINY.hidden_channels // 2
    ffn.dwconv.weight.data[:half] = 0
    ffn.dwconv.bias.data[:half] = 0
    ffn.project_out.bias.data[...] = rng.standard_normal(8)
    x = Tensor(rng.standard_normal((2, 8, 5, 5)).astype(np.float32))
    assert np.array_equal(ffn.gate(x).data, np.zeros((2, half, 5, 5), np.float32))
    expected = np.broadcast_to(ffn.project_out.bias.data.reshape(1, 8, 1, 1), (2, 8, 5, 5))
    np.testing.assert_array_equal(ffn(x).data, expected)


def test_gdfn_gradient(rng):
    block = TransformerBlock(ModelConfig(channels=4), rng)
    x = Tensor(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
    probe = Tensor(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
    assert grad_check(lambda x, *ps: (block.ffn(x) * probe).sum(), [x, *block.ffn.parameters()]) < 2e-3


def _zero_block_outputs(block):
    zero_(block.attn.project_out)
    zero_(block.ffn.project_out)


def test_block_with_zero_projections_is_identity(rng):
    block = TransformerBlock(TINY, rng)
    _zero_block_outputs(block)
    x = rng.standard_normal((2, 8, 6, 6)).astype(np.float32)
    assert np.array_equal(block(Tensor(x)).data, x)


# -- whole network -----------------------------------------------------------------------------


def test_forward_shape(rng):
    model = build(TINY)
    lrms, pan = inputs(rng, B=3)
    assert model(lrms, pan).shape == (3, 4, 16, 16)


def test_ratio_mismatch_names_both_shapes(rng):
    model = build(TINY)
    with pytest.raises(ShapeError) as info:
        model(np.zeros((1, 4, 4, 4), np.float32), np.zeros((1, 1, 12, 12), np.float32))
    assert "(1, 4, 4, 4)" in str(info.value) and "(1, 1, 12, 12)" in str(info.value)


@pytest.mark.parametrize("blocks", [1, 3])
def test_zeroed_network_is_bicubic_upsample(blocks, rng):
    model = build(ModelConfig(channels=8, num_blocks=blocks))
    for block in model.body:
        _zero_block_outputs(block)
    zero_(model.fusion)
    zero_(model.refine)
    lrms, pan = inputs(rng)
    out = model(lrms, pan).data
    assert np.array_equal(out, ops.upsample(Tensor(lrms), 4, "bicubic").data)


def test_batch_permutation_equivariance(rng):
    model = build(TINY)
    lrms, pan = inputs(rng, B=4)
    perm = np.array([2, 0, 3, 1])
    out = model(lrms, pan).data
    np.testing.assert_allclose(model(lrms[perm], pan[perm]).data, out[perm], rtol=1e-5, atol=1e-6)


def test_every_parameter_receives_gradient(rng):
    model = build(ModelConfig(channels=8, num_blocks=2))
    lrms, pan = inputs(rng)
    target = rng.random((2, 4, 16, 16)).astype(np.float32)
    backward(composite(model(lrms, pan), Tensor(target)))
    for name, p in model.named_parameters():
        assert p.grad is not None and np.abs(p.grad).sum() > 0, name


def test_predict_matches_forward(rng):
    model = build(TINY)
    lrms, pan = inputs(rng, B=5)
    np.testing.assert_array_equal(model.predict(lrms, pan, batch=2), model(lrms, pan).data)


def test_full_model_composite_gradient(rng):
    """20 random parameter coordinates of the whole network through the composite loss."""
    model = build(ModelConfig(channels=8, num_blocks=1))
    lrms = rng.random((1, 4, 8, 8)).astype(np.float32)
    pan = rng.random((1, 1, 32, 32)).astype(np.float32)
    out = model(lrms, pan).data
    # keep |O - G| well clear of the Charbonnier kink at 0
    sign = np.where(rng.random(out.shape) < 0.5, -1.0, 1.0)
    target = Tensor((out + sign * rng.uniform(0.05, 0.2, out.shape)).astype(np.float32))
    params = model.parameters()
    err = grad_check(lambda *ps: composite(model(lrms, pan), target), params, eps=1e-3, samples=20, seed=1)
    assert err < 2e-3


def test_single_sample_adam_loss_decreases(rng):
    model = build(TINY)
    lrms, pan = inputs(rng, B=1)
    hrms = Tensor(rng.random((1, 4, 16, 16)).astype(np.float32))
    params = model.parameters()
    state = AdamState.for_params(params)
    losses = []
    for _ in range(50):
        loss = composite(model(lrms, pan), hrms)
        losses.append(loss.item())
        model.zero_grad()
        backward(loss)
        adam_step(params, state, 5e-4)
    assert all(b < a for a, b in zip(losses, losses[1:]))
