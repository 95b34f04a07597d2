import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meritseg.numerics import ops
from meritseg.numerics.tensor import Tensor
from meritseg.vision_blocks import (
    Backbone,
    BackboneConfig,
    MaxViTBlock,
    MBConv,
    MultiHeadSelfAttention,
    Stem,
    block_attention,
    grid_attention,
    grid_partition,
    maxvit_block,
    mbconv,
    run_backbone,
    stem,
    window_partition,
)

from conftest import check_fd_directional, weighted_sum_fn


def tiny(res=32, window=1, **kw):
    base = dict(stem_channels=4, stage_channels=(4, 4, 8, 8), stage_depths=(1, 1, 1, 1), heads=2)
    base.update(kw)
    return BackboneConfig(res, window, **base)


def global_sa(x, attn):
    n, c, h, w = x.shape
    tokens = ops.reshape(ops.transpose(x, (0, 2, 3, 1)), (n, h * w, c))
    out = attn(tokens)
    return ops.transpose(ops.reshape(out, (n, h, w, c)), (0, 3, 1, 2))


@pytest.mark.parametrize("res,expected", [(256, 64), (224, 56), (128, 32)])
def test_stem_resolution(res, expected):
    s = Stem(4, np.random.default_rng(0))
    out = stem(Tensor(np.zeros((1, 3, res, res), np.float32)), s)
    assert out.shape == (1, 4, expected, expected)


def test_stem_indivisible():
    with pytest.raises(ValueError):
        stem(Tensor(np.zeros((1, 3, 30, 30))), Stem(4, np.random.default_rng(0)))


def test_mbconv_stride1_shape_and_zero_identity(rng):
    block = MBConv(8, 8, 1, rng)
    x = Tensor(rng.normal(size=(2, 8, 6, 6)).astype(np.float32))
    assert mbconv(x, block).shape == x.shape
    block.project.weight.data[:] = 0
    block.project.bias.data[:] = 0
    np.testing.assert_array_equal(mbconv(x, block).data, x.data)


def test_mbconv_stride2(rng):
    block = MBConv(4, 8, 2, rng)
    out = mbconv(Tensor(rng.normal(size=(1, 4, 16, 16))), block)
    assert out.shape == (1, 8, 8, 8)


def test_mbconv_bad_stride(rng):
    with pytest.raises(ValueError):
        MBConv(4, 4, 3, rng)


def test_block_attention_single_window_is_global(rng):
    attn = MultiHeadSelfAttention(8, 2, rng).astype(np.float64)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    np.testing.assert_allclose(block_attention(x, 4, attn).data, global_sa(x, attn).data, atol=1e-12)


def test_grid_attention_single_group_is_global(rng):
    attn = MultiHeadSelfAttention(8, 2, rng).astype(np.float64)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    np.testing.assert_allclose(grid_attention(x, 4, attn).data, global_sa(x, attn).data, atol=1e-12)


def test_block_attention_window_swap(rng):
    attn = MultiHeadSelfAttention(4, 2, rng).astype(np.float64)
    x = rng.normal(size=(1, 4, 8, 8))
    y = x.copy()
    y[..., 0:4, 0:4], y[..., 4:8, 4:8] = x[..., 4:8, 4:8], x[..., 0:4, 0:4]
    ox = block_attention(Tensor(x), 4, attn).data
    oy = block_attention(Tensor(y), 4, attn).data
    np.testing.assert_allclose(oy[..., 0:4, 0:4], ox[..., 4:8, 4:8], atol=1e-12)
    np.testing.assert_allclose(oy[..., 4:8, 4:8], ox[..., 0:4, 0:4], atol=1e-12)
    np.testing.assert_allclose(oy[..., 0:4, 4:8], ox[..., 0:4, 4:8], atol=1e-12)
    np.testing.assert_allclose(oy[..., 4:8, 0:4], ox[..., 4:8, 0:4], atol=1e-12)


def test_block_attention_locality(rng):
    attn = MultiHeadSelfAttention(4, 1, rng).astype(np.float64)
    x = rng.normal(size=(1, 4, 6, 9))
    base = block_attention(Tensor(x), 3, attn).data
    x2 = x.copy()
    x2[..., 3:6, 3:6] += rng.normal(size=(1, 4, 3, 3))
    out = block_attention(Tensor(x2), 3, attn).data
    changed = np.abs(out - base).max(axis=(0, 1)) > 0
    expected = np.zeros((6, 9), bool)
    expected[3:6, 3:6] = True
    np.testing.assert_array_equal(changed, expected)


def test_grid_attention_toroidal_translation(rng):
    attn = MultiHeadSelfAttention(4, 2, rng).astype(np.float64)
    x = rng.normal(size=(1, 4, 8, 12))
    g = 4
    sh, sw = 8 // g, 12 // g
    out = grid_attention(Tensor(x), g, attn).data
    rolled = grid_attention(Tensor(np.roll(x, (sh, sw), axis=(2, 3))), g, attn).data
    np.testing.assert_allclose(rolled, np.roll(out, (sh, sw), axis=(2, 3)), atol=1e-12)


@pytest.mark.parametrize("fn", [block_attention, grid_attention])
def test_attention_shape_and_divisibility(rng, fn):
    attn = MultiHeadSelfAttention(4, 2, rng)
    x = Tensor(rng.normal(size=(2, 4, 6, 6)).astype(np.float32))
    assert fn(x, 3, attn).shape == x.shape
    with pytest.raises(ValueError):
        fn(x, 4, attn)


@pytest.mark.parametrize("partition", [window_partition, grid_partition])
def test_attention_rows_sum_to_one(rng, partition):
    attn = MultiHeadSelfAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(2, 8, 8, 8)).astype(np.float32))
    tokens = partition(ops.transpose(x, (0, 2, 3, 1)), 4)
    w = attn.attention_weights(tokens).data
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)


def test_maxvit_block_shape_and_identity(rng):
    block = MaxViTBlock(8, 8, 1, 4, 2, 4.0, rng)
    x = Tensor(rng.normal(size=(1, 8, 8, 8)).astype(np.float32))
    assert maxvit_block(x, block).shape == x.shape
    block.zero_residual_branches()
    np.testing.assert_array_equal(maxvit_block(x, block).data, x.data)


def test_maxvit_block_gradient(rng):
    block = MaxViTBlock(4, 4, 1, 4, 2, 4.0, rng).astype(np.float64)
    x = Tensor(rng.normal(size=(1, 4, 8, 8)), requires_grad=True)
    build = weighted_sum_fn(lambda: maxvit_block(x, block))
    assert check_fd_directional(build, [x] + block.parameters(), n_dirs=4) <= 1e-3


@pytest.mark.parametrize("res,window,sizes", [(256, 8, (32, 16, 8, 8)), (224, 7, (28, 14, 7, 7)),
                                              (128, 4, (16, 8, 4, 4))])
def test_pyramid_schedule(res, window, sizes):
    cfg = tiny(res, window)
    bb = Backbone(cfg, np.random.default_rng(0))
    pyr = run_backbone(Tensor(np.zeros((1, 3, res, res), np.float32)), bb)
    assert pyr.spatial_sizes() == sizes
    assert [f.shape[1] for f in pyr] == list(cfg.stage_channels)
    assert cfg.stage_resolutions() == sizes


def test_backbone_resolution_mismatch():
    bb = Backbone(tiny(64, 2), np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_backbone(Tensor(np.zeros((1, 3, 32, 32))), bb)


def test_config_invariants():
    with pytest.raises(ValueError):
        BackboneConfig(100, 4)
    with pytest.raises(ValueError):
        tiny(stage_depths=(1, 0, 1, 1))
    with pytest.raises(ValueError):
        tiny(stage_channels=(4, 4, 8, 9))


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.sampled_from([(2, 4, 6, 8), (4, 4, 4, 4), (2, 2, 4, 6)]),
       st.lists(st.integers(1, 2), min_size=4, max_size=4))
def test_pyramid_schedule_property(window, mult, chans, depths):
    res = 32 * window * mult
    cfg = BackboneConfig(res, window, stem_channels=2, stage_channels=chans, stage_depths=tuple(depths), heads=2)
    bb = Backbone(cfg, np.random.default_rng(0))
    pyr = run_backbone(Tensor(np.zeros((1, 3, res, res), np.float32)), bb)
    assert pyr.spatial_sizes() == (res // 8, res // 16, res // 32, res // 32)


def test_backbone_gradient_tiny(rng):
    bb = Backbone(tiny(), rng).astype(np.float64)
    x = Tensor(rng.uniform(size=(1, 3, 32, 32)), requires_grad=True)

    def out():
        pyr = bb(x)
        return ops.concat([ops.reshape(f, (1, -1)) for f in pyr], axis=1)

    assert check_fd_directional(weighted_sum_fn(out), [x] + bb.parameters(), n_dirs=4) <= 1e-3


def test_parameter_paths_stable():
    bb = Backbone(tiny(), np.random.default_rng(0))
    names = [n for n, _ in bb.named_parameters()]
    assert "stage2.block0.mbconv.dw.weight" in names
    assert len(names) == len(set(names))
