"""MaxViT-style blocks and the four-stage hierarchical backbone.

Layout conventions: backbone tensors are NCHW; attention and the FFNs work on
channels-last views of the same maps. Self-attention here is plain content
attention (no relative position bias).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .nn import Conv2d, LayerNorm, Linear, Module, zero_
from .numerics import ops
from .numerics.tensor import Tensor


@dataclass(frozen=True)
class BackboneConfig:
    input_resolution: int = 128
    window: int = 4
    stem_channels: int = 16
    stage_channels: tuple[int, int, int, int] = (16, 32, 48, 64)
    stage_depths: tuple[int, int, int, int] = (1, 1, 1, 1)
    ffn_expansion: float = 4.0
    heads: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "stage_depths", tuple(int(d) for d in self.stage_depths))
        self.validate()

    def validate(self) -> None:
        if len(self.stage_channels) != 4 or len(self.stage_depths) != 4:
            raise ValueError("backbone needs exactly four stages")
        if self.window < 1 or self.input_resolution % (32 * self.window):
            raise ValueError(
                f"input resolution {self.input_resolution} must be divisible by 32*window ({32 * self.window})")
        if min(self.stage_depths) < 1:
            raise ValueError("stage depths must be >= 1")
        if self.heads < 1 or any(c % self.heads for c in self.stage_channels):
            raise ValueError(f"heads={self.heads} must divide every stage width {self.stage_channels}")
        if self.stem_channels < 1 or min(self.stage_channels) < 1:
            raise ValueError("channel counts must be positive")

    def stage_resolutions(self) -> tuple[int, int, int, int]:
        r = self.input_resolution
        return (r // 8, r // 16, r // 32, r // 32)

    def to_dict(self) -> dict:
        return asdict(self)


def desk_backbone_a() -> BackboneConfig:
    return BackboneConfig(128, 4)


def desk_backbone_b() -> BackboneConfig:
    return BackboneConfig(96, 3)


def full_backbone(resolution: int, window: int) -> BackboneConfig:
    """MaxViT-S-sized stage layout at the given resolution and window."""
    return BackboneConfig(resolution, window, stem_channels=64, stage_channels=(96, 192, 384, 768),
                          stage_depths=(2, 2, 5, 2), heads=3)


@dataclass
class FeaturePyramid:
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    def __iter__(self) -> Iterator[Tensor]:
        return iter((self.f1, self.f2, self.f3, self.f4))

    def __getitem__(self, i: int) -> Tensor:
        return (self.f1, self.f2, self.f3, self.f4)[i]

    def spatial_sizes(self) -> tuple[int, ...]:
        return tuple(f.shape[-1] for f in self)


# -- stem ---------------------------------------------------------------------

class Stem(Module):
    def __init__(self, cout: int, rng: np.random.Generator):
        self.conv1 = Conv2d(3, cout, 3, rng, stride=2)
        self.norm = LayerNorm(cout, axis=1)
        self.conv2 = Conv2d(cout, cout, 3, rng, stride=2)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(ops.gelu(self.norm(self.conv1(x))))


def stem(image: Tensor, module: Stem) -> Tensor:
    """Downsample an NCHW image by 4 with two stride-2 convolutions."""
    h, w = image.shape[-2:]
    if h % 4 or w % 4:
        raise ValueError(f"stem needs spatial size divisible by 4, got {h}x{w}")
    return module(image)


# -- MBConv ----------------------------------------------------------------

def avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return ops.mean(ops.reshape(x, (n, c, h // 2, 2, w // 2, 2)), axis=(3, 5))


class SqueezeExcite(Module):
    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        hidden = max(1, channels // reduction)
        self.reduce = Conv2d(channels, hidden, 1, rng)
        self.expand = Conv2d(hidden, channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        s = ops.mean(x, axis=(2, 3), keepdims=True)
        s = ops.sigmoid(self.expand(ops.gelu(self.reduce(s))))
        return ops.mul(x, s)


class MBConv(Module):
    """Pre-norm inverted bottleneck: 1x1 expand, 3x3 depthwise, SE, 1x1 project."""

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator, expansion: int = 4):
        if stride not in (1, 2):
            raise ValueError("MBConv stride must be 1 or 2")
        mid = cout * expansion
        self.stride = stride
        self.norm = LayerNorm(cin, axis=1)
        self.expand = Conv2d(cin, mid, 1, rng)
        self.dw = Conv2d(mid, mid, 3, rng, stride=stride, groups=mid)
        self.se = SqueezeExcite(mid, rng)
        self.project = Conv2d(mid, cout, 1, rng)
        self.shortcut = Conv2d(cin, cout, 1, rng) if cin != cout else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.gelu(self.expand(self.norm(x)))
        y = ops.gelu(self.dw(y))
        y = self.project(self.se(y))
        res = avg_pool2(x) if self.stride == 2 else x
        if self.shortcut is not None:
            res = self.shortcut(res)
        return ops.add(res, y)


def mbconv(x: Tensor, block: MBConv) -> Tensor:
    if block.stride == 2 and (x.shape[-1] % 2 or x.shape[-2] % 2):
        raise ValueError("stride-2 MBConv needs even spatial size")
    return block(x)


# -- self-attention ----------------------------------------------------------

class MultiHeadSelfAttention(Module):
    """Multi-head SA over token batches shaped (B, T, C)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)

    def _split(self, t: Tensor) -> Tensor:
        b, n, c = t.shape
        return ops.transpose(ops.reshape(t, (b, n, self.heads, c // self.heads)), (0, 2, 1, 3))

    def attention_weights(self, tokens: Tensor) -> Tensor:
        return ops.attention_weights(self._split(self.q(tokens)), self._split(self.k(tokens)))

    def __call__(self, tokens: Tensor) -> Tensor:
        b, n, c = tokens.shape
        out = ops.scaled_dot_product_attention(
            self._split(self.q(tokens)), self._split(self.k(tokens)), self._split(self.v(tokens)))
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, n, c))
        return self.proj(out)


def _check_divisible(h: int, w: int, size: int, what: str) -> None:
    if size < 1 or h % size or w % size:
        raise ValueError(f"{what} {size} must divide feature map {h}x{w}")


def window_partition(x: Tensor, w: int) -> Tensor:
    """(N, H, W, C) -> (N*H/w*W/w, w*w, C): contiguous w x w windows."""
    n, h, wd, c = x.shape
    t = ops.reshape(x, (n, h // w, w, wd // w, w, c))
    return ops.reshape(ops.transpose(t, (0, 1, 3, 2, 4, 5)), (-1, w * w, c))


def window_reverse(t: Tensor, w: int, n: int, h: int, wd: int) -> Tensor:
    c = t.shape[-1]
    t = ops.reshape(t, (n, h // w, wd // w, w, w, c))
    return ops.reshape(ops.transpose(t, (0, 1, 3, 2, 4, 5)), (n, h, wd, c))


def grid_partition(x: Tensor, g: int) -> Tensor:
    """(N, H, W, C) -> (N*H/g*W/g, g*g, C): tokens with equal offset modulo (H/g, W/g)."""
    n, h, wd, c = x.shape
    t = ops.reshape(x, (n, g, h // g, g, wd // g, c))
    return ops.reshape(ops.transpose(t, (0, 2, 4, 1, 3, 5)), (-1, g * g, c))


def grid_reverse(t: Tensor, g: int, n: int, h: int, wd: int) -> Tensor:
    c = t.shape[-1]
    t = ops.reshape(t, (n, h // g, wd // g, g, g, c))
    return ops.reshape(ops.transpose(t, (0, 3, 1, 4, 2, 5)), (n, h, wd, c))


def _partitioned_sa_nhwc(x: Tensor, size: int, attn: MultiHeadSelfAttention, grid: bool) -> Tensor:
    n, h, w, _ = x.shape
    _check_divisible(h, w, size, "grid" if grid else "window")
    if grid:
        return grid_reverse(attn(grid_partition(x, size)), size, n, h, w)
    return window_reverse(attn(window_partition(x, size)), size, n, h, w)


def block_attention(x: Tensor, window: int, attn: MultiHeadSelfAttention) -> Tensor:
    """Multi-head SA inside each non-overlapping window of an NCHW map."""
    xt = ops.transpose(x, (0, 2, 3, 1))
    return ops.transpose(_partitioned_sa_nhwc(xt, window, attn, grid=False), (0, 3, 1, 2))


def grid_attention(x: Tensor, grid: int, attn: MultiHeadSelfAttention) -> Tensor:
    """Multi-head SA across a grid x grid lattice of strided tokens (dilated, global mixing)."""
    xt = ops.transpose(x, (0, 2, 3, 1))
    return ops.transpose(_partitioned_sa_nhwc(xt, grid, attn, grid=True), (0, 3, 1, 2))


class FFN(Module):
    def __init__(self, dim: int, expansion: float, rng: np.random.Generator):
        hidden = max(1, int(round(dim * expansion)))
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class MaxViTBlock(Module):
    """MBConv, then block SA + FFN, then grid SA + FFN (pre-norm residuals)."""

    def __init__(self, cin: int, cout: int, stride: int, window: int, heads: int, ffn_expansion: float,
                 rng: np.random.Generator):
        self.window = window
        self.mbconv = MBConv(cin, cout, stride, rng)
        self.block_norm = LayerNorm(cout)
        self.block_attn = MultiHeadSelfAttention(cout, heads, rng)
        self.block_ffn_norm = LayerNorm(cout)
        self.block_ffn = FFN(cout, ffn_expansion, rng)
        self.grid_norm = LayerNorm(cout)
        self.grid_attn = MultiHeadSelfAttention(cout, heads, rng)
        self.grid_ffn_norm = LayerNorm(cout)
        self.grid_ffn = FFN(cout, ffn_expansion, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = mbconv(x, self.mbconv)
        t = ops.transpose(x, (0, 2, 3, 1))
        t = ops.add(t, _partitioned_sa_nhwc(self.block_norm(t), self.window, self.block_attn, grid=False))
        t = ops.add(t, self.block_ffn(self.block_ffn_norm(t)))
        t = ops.add(t, _partitioned_sa_nhwc(self.grid_norm(t), self.window, self.grid_attn, grid=True))
        t = ops.add(t, self.grid_ffn(self.grid_ffn_norm(t)))
        return ops.transpose(t, (0, 3, 1, 2))

    def zero_residual_branches(self) -> None:
        """Zero every residual branch's output projection (the block becomes the identity at stride 1)."""
        for lin in (self.mbconv.project, self.block_attn.proj, self.block_ffn.fc2,
                    self.grid_attn.proj, self.grid_ffn.fc2):
            zero_(lin.weight)
            zero_(lin.bias)


def maxvit_block(x: Tensor, block: MaxViTBlock) -> Tensor:
    return block(x)


# -- backbone ----------------------------------------------------------------

class Stage(Module):
    def __init__(self, cin: int, cout: int, depth: int, downsample: bool, cfg: BackboneConfig,
                 rng: np.random.Generator):
        self.blocks = [
            MaxViTBlock(cin if i == 0 else cout, cout, 2 if (downsample and i == 0) else 1,
                        cfg.window, cfg.heads, cfg.ffn_expansion, rng)
            for i in range(depth)
        ]

    def named_parameters(self, prefix: str = ""):
        for i, b in enumerate(self.blocks):
            yield from b.named_parameters(f"{prefix}block{i}.")

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem = Stem(cfg.stem_channels, rng)
        chans = (cfg.stem_channels,) + tuple(cfg.stage_channels)
        self.stage1 = Stage(chans[0], chans[1], cfg.stage_depths[0], True, cfg, rng)
        self.stage2 = Stage(chans[1], chans[2], cfg.stage_depths[1], True, cfg, rng)
        self.stage3 = Stage(chans[2], chans[3], cfg.stage_depths[2], True, cfg, rng)
        self.stage4 = Stage(chans[3], chans[4], cfg.stage_depths[3], False, cfg, rng)

    def __call__(self, image: Tensor) -> FeaturePyramid:
        x = stem(image, self.stem)
        f1 = self.stage1(x)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        return FeaturePyramid(f1, f2, f3, f4)


def run_backbone(image: Tensor, backbone: Backbone) -> FeaturePyramid:
    res = backbone.cfg.input_resolution
    if image.ndim != 4 or image.shape[1] != 3 or image.shape[-2:] != (res, res):
        raise ValueError(f"backbone expects (N, 3, {res}, {res}) input, got {image.shape}")
    return backbone(image)
