"""Randomized gradient-check cases for every differentiable primitive and block.

Each case is a factory ``case(rng) -> (build, tensors)``: ``build()`` rebuilds
a scalar from the current ``tensors`` (all float64 leaves). Primitives are
small enough for full central differences; composite blocks are checked along
random directions.
"""

from __future__ import annotations

import numpy as np

from .cascade_decoder import CAM, AttentionGate, CascadeDecoder
from .losses import LossConfig, ce_loss, combined_loss, dice_loss, mutation_loss
from .model import MeritConfig, MeritModel, forward, make_feedback_image
from .nn import Conv2d
from .numerics import ops
from .numerics.gradcheck import check_gradients, directional_error
from .numerics.tensor import Tensor
from .vision_blocks import (
    BackboneConfig,
    FeaturePyramid,
    MaxViTBlock,
    MBConv,
    MultiHeadSelfAttention,
    block_attention,
    grid_attention,
    maxvit_block,
    mbconv,
)

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _leaf(r, *shape, scale=1.0) -> Tensor:
    return Tensor(r.normal(0.0, scale, shape), requires_grad=True)


def _shape(r, lo=1, hi=4, n=2):
    return tuple(int(v) for v in r.integers(lo, hi + 1, size=n))


def _probe(out_fn, r):
    """Scalar sum(out * w) with a fixed random w, so every output entry matters."""
    cache = {}

    def build():
        out = out_fn()
        if "w" not in cache:
            cache["w"] = r.normal(size=out.shape)
        return ops.sum(ops.mul(out, cache["w"]))

    return build


# -- primitives -----------------------------------------------------------------

def add(r):
    s = _shape(r)
    a, b = _leaf(r, *s), _leaf(r, 1, s[1])
    return lambda: ops.sum(ops.mul(ops.add(a, b), ops.add(a, b))), [a, b]


def mul(r):
    s = _shape(r, n=3)
    a, b = _leaf(r, *s), _leaf(r, *s)
    return lambda: ops.sum(ops.mul(ops.mul(a, b), a)), [a, b]


def div(r):
    s = _shape(r)
    a, b = _leaf(r, *s), Tensor(r.uniform(1, 2, s), requires_grad=True)
    return lambda: ops.sum(ops.div(a, b)), [a, b]


def matmul(r):
    n, k, m = _shape(r, n=3)
    a, b = _leaf(r, 2, n, k), _leaf(r, k, m)
    return lambda: ops.sum(ops.sigmoid(ops.matmul(a, b))), [a, b]


def conv(r):
    c = int(r.integers(1, 4))
    x, k, b = _leaf(r, 1, c, 5, 5), _leaf(r, 2, c, 3, 3), _leaf(r, 2)
    s = int(r.integers(1, 3))
    return lambda: ops.sum(ops.sigmoid(ops.conv2d(x, k, b, stride=s, padding=1))), [x, k, b]


def depthwise_conv(r):
    c = int(r.integers(1, 4))
    x, k, b = _leaf(r, 2, c, 6, 5), _leaf(r, c, 1, 3, 3), _leaf(r, c)
    s = int(r.integers(1, 3))
    return lambda: ops.sum(ops.sigmoid(ops.conv2d(x, k, b, stride=s, padding=1, groups=c))), [x, k, b]


def softmax(r):
    a = _leaf(r, *_shape(r, 2, 5))
    w = r.normal(size=a.shape)
    return lambda: ops.sum(ops.mul(ops.softmax(a, axis=-1), w)), [a]


def log_softmax(r):
    a = _leaf(r, *_shape(r, 2, 5))
    w = r.normal(size=a.shape)
    return lambda: ops.sum(ops.mul(ops.log_softmax(a, axis=0), w)), [a]


def sigmoid(r):
    a = _leaf(r, *_shape(r))
    return lambda: ops.sum(ops.mul(ops.sigmoid(a), a)), [a]


def relu(r):
    a = _leaf(r, *_shape(r))
    a.data[np.abs(a.data) < 1e-3] = 0.5     # keep clear of the kink
    return lambda: ops.sum(ops.mul(ops.relu(a), a)), [a]


def gelu(r):
    a = _leaf(r, *_shape(r), scale=2.0)
    return lambda: ops.sum(ops.gelu(a)), [a]


def layer_norm(r):
    a = _leaf(r, 2, int(r.integers(2, 6)), 3)
    w, b = _leaf(r, a.shape[1]), _leaf(r, a.shape[1])
    t = r.normal(size=a.shape)
    return lambda: ops.sum(ops.mul(ops.layer_norm(a, w, b, axis=1), t)), [a, w, b]


def avg_pool(r):
    a = _leaf(r, 2, 3, *_shape(r))
    t = r.normal(size=(2, 3, 1, 1))
    return lambda: ops.sum(ops.mul(ops.mean(a, axis=(2, 3), keepdims=True), t)), [a]


def max_pool(r):
    a = _leaf(r, 2, 3, *_shape(r, 2, 4))
    t = r.normal(size=(2, 3, 1, 1))
    return lambda: ops.sum(ops.mul(ops.max(a, axis=(2, 3), keepdims=True), t)), [a]


def reshape_transpose(r):
    a = _leaf(r, 2, 3, 4)
    t = r.normal(size=(4, 6))
    return lambda: ops.sum(ops.mul(ops.reshape(ops.transpose(a, (2, 0, 1)), (4, 6)), t)), [a]


def resize(r):
    a = _leaf(r, 1, 2, *_shape(r, 2, 5))
    mode = ops.RESIZE_MODES[int(r.integers(len(ops.RESIZE_MODES)))]
    oh, ow = _shape(r, 1, 7)
    t = r.normal(size=(1, 2, oh, ow))
    return lambda: ops.sum(ops.mul(ops.resize2d(a, oh, ow, mode), t)), [a]


def concat(r):
    a, b = _leaf(r, 2, 2, 3), _leaf(r, 2, 4, 3)
    t = r.normal(size=(2, 6, 3))
    return lambda: ops.sum(ops.mul(ops.concat([a, b], axis=1), t)), [a, b]


def getitem(r):
    a = _leaf(r, 4, 5)
    return lambda: ops.sum(ops.mul(a[1:3, ::2], a[1:3, ::2])), [a]


def attention(r):
    n, d = _shape(r, 1, 5)
    q, k, v = _leaf(r, 2, n, d), _leaf(r, 2, n, d), _leaf(r, 2, n, 3)
    t = r.normal(size=(2, n, 3))
    return lambda: ops.sum(ops.mul(ops.scaled_dot_product_attention(q, k, v), t)), [q, k, v]


PRIMITIVES = {f.__name__: f for f in (
    add, mul, div, matmul, conv, depthwise_conv, softmax, log_softmax, sigmoid, relu, gelu, layer_norm,
    avg_pool, max_pool, reshape_transpose, resize, concat, getitem, attention)}


# -- composite blocks ----------------------------------------------------------------

def _params(module):
    return module.astype(np.float64).parameters()


def mbconv_block(r):
    c = int(r.integers(2, 5))
    stride = int(r.integers(1, 3))
    block = MBConv(c, 2 * c if stride == 2 else c, stride, r)
    x = _leaf(r, 1, c, 6, 6)
    return _probe(lambda: mbconv(x, block), r), [x] + _params(block)


def block_sa(r):
    attn = MultiHeadSelfAttention(4, 2, r)
    x = _leaf(r, 1, 4, 4, 6)
    return _probe(lambda: block_attention(x, 2, attn), r), [x] + _params(attn)


def grid_sa(r):
    attn = MultiHeadSelfAttention(4, 2, r)
    x = _leaf(r, 1, 4, 6, 4)
    return _probe(lambda: grid_attention(x, 2, attn), r), [x] + _params(attn)


def attention_gate(r):
    gate = AttentionGate(4, 3, 2, r)
    g, x = _leaf(r, 1, 4, 3, 3), _leaf(r, 1, 3, 6, 6)
    return _probe(lambda: gate(g, x), r), [g, x] + _params(gate)


def cam_block(r):
    block = CAM(4, r)
    x = _leaf(r, 1, 4, 6, 6)
    return _probe(lambda: block(x), r), [x] + _params(block)


def maxvit(r):
    block = MaxViTBlock(4, 4, 1, 2, 2, 2.0, r)
    x = _leaf(r, 1, 4, 4, 4)
    return _probe(lambda: maxvit_block(x, block), r), [x] + _params(block)


def cascade_decode(r):
    dec = CascadeDecoder((4, 4, 8, 8), 3, r)
    feats = [_leaf(r, 1, c, s, s) for c, s in zip((4, 4, 8, 8), (4, 2, 1, 1))]

    def out():
        heads, _ = dec(FeaturePyramid(*feats))
        return ops.concat([ops.reshape(h, (1, -1)) for h in heads], axis=1)

    return _probe(out, r), feats + _params(dec)


def _loss_inputs(r, n_maps=1):
    maps = [_leaf(r, 2, 3, 4, 4) for _ in range(n_maps)]
    return maps, r.integers(0, 3, size=(2, 4, 4))


def dice(r):
    (x,), t = _loss_inputs(r)
    return lambda: dice_loss(x, t), [x]


def ce(r):
    (x,), t = _loss_inputs(r)
    return lambda: ce_loss(x, t), [x]


def combined(r):
    (x,), t = _loss_inputs(r)
    cfg = LossConfig.from_lambda1(float(r.uniform()))
    return lambda: combined_loss(x, t, cfg), [x]


def mutation(r):
    maps, t = _loss_inputs(r, int(r.integers(1, 5)))
    return lambda: mutation_loss(maps, t), maps


def feedback(r):
    conv = Conv2d(4, 1, 1, r)
    feat, img = _leaf(r, 1, 4, 4, 4), Tensor(r.uniform(size=(1, 3, 8, 8)), requires_grad=True)
    rule = ("multiplicative", "additive")[int(r.integers(2))]
    return _probe(lambda: make_feedback_image(feat, img, 6, conv, rule), r), [feat, img] + _params(conv)


def merit_cascaded(r):
    bb = BackboneConfig(32, 1, stem_channels=2, stage_channels=(2, 2, 4, 4), stage_depths=(1, 1, 1, 1), heads=2)
    cfg = MeritConfig(mode="cascaded", backbone_a=bb, backbone_b=bb, num_classes=2, gt_resolution=32,
                      require_multiscale=False)
    model = MeritModel(cfg, seed=int(r.integers(2**31)))
    x = Tensor(r.uniform(size=(1, 3, 32, 32)))
    t = r.integers(0, 2, size=(1, 32, 32))
    return lambda: mutation_loss(forward(x, model).maps, t), _params(model)


COMPOSITES = {f.__name__: f for f in (
    mbconv_block, block_sa, grid_sa, attention_gate, cam_block, maxvit, cascade_decode, dice, ce, combined,
    mutation, feedback, merit_cascaded)}


def run_suite(trials: int = 20, seed: int = 0) -> list[tuple[str, float, float]]:
    """Worst error per case over ``trials`` random instances: [(name, error, tolerance)]."""
    results = []
    for i, (name, case) in enumerate(PRIMITIVES.items()):
        worst = 0.0
        for t in range(trials):
            build, tensors = case(np.random.default_rng([seed, i, t]))
            worst = max(worst, check_gradients(build, tensors))
        results.append((name, worst, PRIMITIVE_TOL))
    for i, (name, case) in enumerate(COMPOSITES.items()):
        worst = 0.0
        for t in range(trials):
            r = np.random.default_rng([seed, 100 + i, t])
            build, tensors = case(r)
            worst = max(worst, directional_error(build, tensors, n_dirs=2, rng=r))
        results.append((name, worst, COMPOSITE_TOL))
    return results
