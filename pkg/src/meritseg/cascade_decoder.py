"""Attention-gated cascaded decoding and prediction-map aggregation."""

from __future__ import annotations

from dataclasses import dataclass, astuple
from typing import Sequence

import numpy as np

from .nn import Conv2d, LayerNorm, Module
from .numerics import ops
from .numerics.tensor import Tensor
from .vision_blocks import FeaturePyramid

AGGREGATIONS = ("additive", "concatenation")

# Maps are ordered stage 1 (finest) to stage 4.
PredictionSet = list


@dataclass(frozen=True)
class HeadWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(astuple(self))):
            raise ValueError("head weights must be finite")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return astuple(self)


def _resize_to(x: Tensor, h: int, w: int, mode: str) -> Tensor:
    if x.shape[-2:] == (h, w):
        return x
    return ops.resize2d(x, h, w, mode)


class AttentionGate(Module):
    """Additive attention gate: x * sigmoid(psi(relu(Wg g + Wx x)))."""

    def __init__(self, gate_channels: int, skip_channels: int, inter_channels: int, rng: np.random.Generator,
                 interpolation: str = "bilinear"):
        self.wg = Conv2d(gate_channels, inter_channels, 1, rng)
        self.wx = Conv2d(skip_channels, inter_channels, 1, rng)
        self.psi = Conv2d(inter_channels, 1, 1, rng)
        self.interpolation = interpolation
        self.calls = 0

    def coefficients(self, g: Tensor, x: Tensor) -> Tensor:
        if g.shape[1] != self.wg.cin or x.shape[1] != self.wx.cin:
            raise ValueError(
                f"attention gate expects {self.wg.cin}/{self.wx.cin} channels, got {g.shape[1]}/{x.shape[1]}")
        g = _resize_to(g, x.shape[2], x.shape[3], self.interpolation)
        return ops.sigmoid(self.psi(ops.relu(ops.add(self.wg(g), self.wx(x)))))

    def __call__(self, g: Tensor, x: Tensor) -> Tensor:
        self.calls += 1
        return ops.mul(x, self.coefficients(g, x))


def attention_gate(g: Tensor, x: Tensor, gate: AttentionGate) -> Tensor:
    return gate(g, x)


def channel_descriptors(x: Tensor) -> tuple[Tensor, Tensor]:
    """Global average- and max-pooled (N, C, 1, 1) descriptors."""
    return ops.mean(x, axis=(2, 3), keepdims=True), ops.max(x, axis=(2, 3), keepdims=True)


class CAM(Module):
    """Channel attention, then spatial attention, then two conv-norm-relu refinements."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4, spatial_kernel: int = 7):
        hidden = max(1, channels // reduction)
        self.fc1 = Conv2d(channels, hidden, 1, rng, bias=False)
        self.fc2 = Conv2d(hidden, channels, 1, rng, bias=False)
        self.spatial = Conv2d(2, 1, spatial_kernel, rng)
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.norm1 = LayerNorm(channels, axis=1)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.norm2 = LayerNorm(channels, axis=1)
        self.calls = 0

    def channel_coefficients(self, x: Tensor) -> Tensor:
        avg, mx = channel_descriptors(x)
        return ops.sigmoid(ops.add(self.fc2(ops.relu(self.fc1(avg))), self.fc2(ops.relu(self.fc1(mx)))))

    def spatial_coefficients(self, x: Tensor) -> Tensor:
        maps = ops.concat([ops.mean(x, axis=1, keepdims=True), ops.max(x, axis=1, keepdims=True)], axis=1)
        return ops.sigmoid(self.spatial(maps))

    def __call__(self, x: Tensor) -> Tensor:
        self.calls += 1
        x = ops.mul(x, self.channel_coefficients(x))
        x = ops.mul(x, self.spatial_coefficients(x))
        x = ops.relu(self.norm1(self.conv1(x)))
        return ops.relu(self.norm2(self.conv2(x)))


def cam(x: Tensor, block: CAM) -> Tensor:
    return block(x)


def _check_pyramid(pyramid: FeaturePyramid, channels: Sequence[int]) -> None:
    for i, (f, c) in enumerate(zip(pyramid, channels)):
        if f.ndim != 4 or f.shape[1] != c:
            raise ValueError(f"pyramid stage {i + 1} has shape {f.shape}, expected {c} channels")
    if pyramid.f4.shape[0] != pyramid.f1.shape[0]:
        raise ValueError("pyramid batch sizes differ")


def _merge_extra_skips(skips: list[Tensor], extra: Sequence[Tensor] | None, mode: str) -> list[Tensor]:
    if extra is None:
        return skips
    if len(extra) != 3:
        raise ValueError("extra skips must hold exactly three maps")
    merged = []
    for s, e in zip(skips, extra):
        if e.shape[:2] != s.shape[:2]:
            raise ValueError(f"extra skip shape {e.shape} incompatible with skip {s.shape}")
        merged.append(ops.add(s, _resize_to(e, s.shape[2], s.shape[3], mode)))
    return merged


class CascadeDecoder(Module):
    """Four-stage decoder: CAM on the bottleneck, then upsample, gate skip, join, CAM, head."""

    def __init__(self, channels: Sequence[int], num_classes: int, rng: np.random.Generator,
                 aggregation: str = "additive", interpolation: str = "bilinear"):
        if aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {aggregation!r}")
        c1, c2, c3, c4 = channels
        self.channels = tuple(channels)
        self.aggregation = aggregation
        self.interpolation = interpolation
        self.cam4 = CAM(c4, rng)
        self.head4 = Conv2d(c4, num_classes, 1, rng)
        for i, (cin, cout) in zip((3, 2, 1), ((c4, c3), (c3, c2), (c2, c1))):
            setattr(self, f"up{i}", Conv2d(cin, cout, 3, rng))
            setattr(self, f"up{i}_norm", LayerNorm(cout, axis=1))
            setattr(self, f"ag{i}", AttentionGate(cout, cout, max(1, cout // 2), rng, interpolation))
            if aggregation == "concatenation":
                setattr(self, f"join{i}", Conv2d(2 * cout, cout, 1, rng))
            setattr(self, f"cam{i}", CAM(cout, rng))
            setattr(self, f"head{i}", Conv2d(cout, num_classes, 1, rng))

    def gates(self) -> list[AttentionGate]:
        return [self.ag3, self.ag2, self.ag1]

    def cams(self) -> list[CAM]:
        return [self.cam4, self.cam3, self.cam2, self.cam1]

    def __call__(self, pyramid: FeaturePyramid, extra_skips: Sequence[Tensor] | None = None):
        _check_pyramid(pyramid, self.channels)
        skips = _merge_extra_skips([pyramid.f1, pyramid.f2, pyramid.f3], extra_skips, self.interpolation)
        d = self.cam4(pyramid.f4)
        heads = {4: self.head4(d)}
        for i in (3, 2, 1):
            skip = skips[i - 1]
            up = _resize_to(d, skip.shape[2], skip.shape[3], self.interpolation)
            up = ops.relu(getattr(self, f"up{i}_norm")(getattr(self, f"up{i}")(up)))
            gated = getattr(self, f"ag{i}")(up, skip)
            if self.aggregation == "additive":
                joined = ops.add(up, gated)
            else:
                joined = getattr(self, f"join{i}")(ops.concat([up, gated], axis=1))
            d = getattr(self, f"cam{i}")(joined)
            heads[i] = getattr(self, f"head{i}")(d)
        return [heads[1], heads[2], heads[3], heads[4]], d


class PlainDecoder(Module):
    """Ablation decoder: a 1x1 prediction head directly on each pyramid stage."""

    def __init__(self, channels: Sequence[int], num_classes: int, rng: np.random.Generator,
                 interpolation: str = "bilinear"):
        self.channels = tuple(channels)
        self.interpolation = interpolation
        for i, c in enumerate(channels, start=1):
            setattr(self, f"head{i}", Conv2d(c, num_classes, 1, rng))

    def __call__(self, pyramid: FeaturePyramid, extra_skips: Sequence[Tensor] | None = None):
        _check_pyramid(pyramid, self.channels)
        skips = _merge_extra_skips([pyramid.f1, pyramid.f2, pyramid.f3], extra_skips, self.interpolation)
        feats = skips + [pyramid.f4]
        return [getattr(self, f"head{i}")(f) for i, f in enumerate(feats, start=1)], skips[0]


def decode(pyramid: FeaturePyramid, decoder: CascadeDecoder | PlainDecoder,
           extra_skips: Sequence[Tensor] | None = None) -> tuple[list[Tensor], Tensor]:
    """Return the four stage head maps (finest first) and the last decoder stage's feature."""
    return decoder(pyramid, extra_skips)


def aggregate_decoders(set_a: Sequence[Tensor], set_b: Sequence[Tensor], mode: str, out_res: int,
                       interpolation: str = "bilinear", combiners: Sequence[Conv2d] | None = None) -> list[Tensor]:
    """Resize both decoders' stage maps to ``out_res`` and merge them stage by stage."""
    if len(set_a) != len(set_b):
        raise ValueError(f"prediction sets differ in length: {len(set_a)} vs {len(set_b)}")
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {mode!r}")
    if mode == "concatenation" and (combiners is None or len(combiners) != len(set_a)):
        raise ValueError("concatenation aggregation needs one 1x1 combiner per stage")
    out = []
    for i, (pa, pb) in enumerate(zip(set_a, set_b)):
        ra = _resize_to(pa, out_res, out_res, interpolation)
        rb = _resize_to(pb, out_res, out_res, interpolation)
        if mode == "additive":
            out.append(ops.add(ra, rb))
        else:
            out.append(combiners[i](ops.concat([ra, rb], axis=1)))
    return out


def weighted_sum(p: Sequence[Tensor], w: HeadWeights = HeadWeights()) -> Tensor:
    """alpha*p1 + beta*p2 + gamma*p3 + psi*p4 (class logits, before softmax)."""
    if len(p) != 4:
        raise ValueError(f"expected 4 prediction maps, got {len(p)}")
    acc = None
    for weight, m in zip(w.as_tuple(), p):
        term = ops.mul(m, weight)
        acc = term if acc is None else ops.add(acc, term)
    return acc


def combine_predictions(p: Sequence[Tensor], w: HeadWeights = HeadWeights()) -> Tensor:
    """Class probabilities: softmax over the class axis of the weighted head sum."""
    return ops.softmax(weighted_sum(p, w), axis=1)
