"""Two-backbone, two-decoder MERIT wiring in parallel and cascaded modes.

``single`` mode (backbone A and its decoder only) exists for the
multi-scale ablation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cascade_decoder import (
    AGGREGATIONS,
    CascadeDecoder,
    HeadWeights,
    PlainDecoder,
    aggregate_decoders,
    combine_predictions,
    decode,
)
from .nn import Conv2d, Module
from .numerics import ops
from .numerics.ops import RESIZE_MODES
from .numerics.tensor import Tensor
from .vision_blocks import Backbone, BackboneConfig, FeaturePyramid, desk_backbone_a, desk_backbone_b, run_backbone

MODES = ("parallel", "cascaded", "single")
FEEDBACK_RULES = ("multiplicative", "additive")


@dataclass(frozen=True)
class MeritConfig:
    mode: str = "cascaded"
    backbone_a: BackboneConfig = field(default_factory=desk_backbone_a)
    backbone_b: BackboneConfig = field(default_factory=desk_backbone_b)
    num_classes: int = 3
    head_weights: HeadWeights = field(default_factory=HeadWeights)
    aggregation: str = "additive"
    interpolation: str = "bilinear"
    gt_resolution: int = 128
    use_cascade_decoder: bool = True
    feedback: str = "multiplicative"
    require_multiscale: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.interpolation not in RESIZE_MODES:
            raise ValueError(f"interpolation must be one of {RESIZE_MODES}")
        if self.feedback not in FEEDBACK_RULES:
            raise ValueError(f"feedback must be one of {FEEDBACK_RULES}")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.gt_resolution < 1:
            raise ValueError("gt_resolution must be positive")
        a, b = self.backbone_a, self.backbone_b
        if self.mode != "single":
            if a.input_resolution < b.input_resolution:
                raise ValueError("backbone A must take the larger input resolution")
            if self.require_multiscale and a.window == b.window and a.input_resolution == b.input_resolution:
                raise ValueError("backbones must differ in window or resolution")
        if self.mode == "cascaded" and a.stage_channels != b.stage_channels:
            raise ValueError("cascaded mode needs matching stage widths in both backbones")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "MeritConfig":
        return replace(self, **changes)


def config_from_dict(d: dict) -> MeritConfig:
    d = dict(d)
    d["backbone_a"] = BackboneConfig(**d["backbone_a"])
    d["backbone_b"] = BackboneConfig(**d["backbone_b"])
    d["head_weights"] = HeadWeights(**d["head_weights"])
    return MeritConfig(**d)


def config_json(cfg: MeritConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)


@dataclass
class MeritOutput:
    maps: list[Tensor]          # aggregated p1..p4 at gt resolution (logits)
    probs: Tensor               # softmax of the weighted head sum
    heads_a: list[Tensor]
    heads_b: list[Tensor] | None = None
    pyramid_a: FeaturePyramid | None = None
    pyramid_b: FeaturePyramid | None = None
    input_b: Tensor | None = None
    decoder_b_pyramid: FeaturePyramid | None = None

    def __iter__(self):
        return iter((self.maps, self.probs))


class MeritModel(Module):
    def __init__(self, cfg: MeritConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backboneA = Backbone(cfg.backbone_a, rng)
        self.decoderA = self._make_decoder(cfg.backbone_a, rng)
        if cfg.mode != "single":
            self.backboneB = Backbone(cfg.backbone_b, rng)
            self.decoderB = self._make_decoder(cfg.backbone_b, rng)
        if cfg.mode == "cascaded":
            self.feedback = Conv2d(cfg.backbone_a.stage_channels[0], 1, 1, rng)
        if cfg.aggregation == "concatenation" and cfg.mode != "single":
            self.combiners = [Conv2d(2 * cfg.num_classes, cfg.num_classes, 1, rng) for _ in range(4)]

    def _make_decoder(self, bcfg: BackboneConfig, rng):
        if self.cfg.use_cascade_decoder:
            return CascadeDecoder(bcfg.stage_channels, self.cfg.num_classes, rng,
                                  self.cfg.aggregation, self.cfg.interpolation)
        return PlainDecoder(bcfg.stage_channels, self.cfg.num_classes, rng, self.cfg.interpolation)

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key == "combiners":
                for i, c in enumerate(val):
                    yield from c.named_parameters(f"{prefix}combiner{i}.")
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")

    def __call__(self, image: Tensor) -> MeritOutput:
        return forward(image, self)


def _resize(x: Tensor, res: int, mode: str) -> Tensor:
    if x.shape[-2:] == (res, res):
        return x
    return ops.resize2d(x, res, res, mode)


def _check_image(image: Tensor, cfg: MeritConfig) -> None:
    gt = cfg.gt_resolution
    if image.ndim != 4 or image.shape[1] != 3 or image.shape[-2:] != (gt, gt):
        raise ValueError(f"expected image of shape (N, 3, {gt}, {gt}), got {image.shape}")


def make_feedback_image(last_stage_feature: Tensor, image: Tensor, target_res: int, conv: Conv2d,
                        rule: str = "multiplicative", mode: str = "bilinear") -> Tensor:
    """Gate the resized image with a one-channel sigmoid saliency map from decoder features."""
    m = ops.sigmoid(conv(last_stage_feature))
    m = _resize(m, target_res, mode)
    img = _resize(image, target_res, mode)
    if rule == "multiplicative":
        return ops.mul(img, m)
    return ops.add(img, m)


def _finish(cfg: MeritConfig, model: MeritModel, heads_a, heads_b) -> tuple[list[Tensor], Tensor]:
    gt, mode = cfg.gt_resolution, cfg.interpolation
    if heads_b is None:
        maps = [_resize(p, gt, mode) for p in heads_a]
    else:
        maps = aggregate_decoders(heads_a, heads_b, cfg.aggregation, gt, mode, getattr(model, "combiners", None))
    return maps, combine_predictions(maps, cfg.head_weights)


def forward_single(image: Tensor, model: MeritModel) -> MeritOutput:
    cfg = model.cfg
    _check_image(image, cfg)
    pyr_a = run_backbone(_resize(image, cfg.backbone_a.input_resolution, cfg.interpolation), model.backboneA)
    heads_a, _ = decode(pyr_a, model.decoderA)
    maps, probs = _finish(cfg, model, heads_a, None)
    return MeritOutput(maps, probs, heads_a, pyramid_a=pyr_a)


def forward_parallel(image: Tensor, model: MeritModel) -> MeritOutput:
    cfg = model.cfg
    _check_image(image, cfg)
    pyr_a = run_backbone(_resize(image, cfg.backbone_a.input_resolution, cfg.interpolation), model.backboneA)
    heads_a, _ = decode(pyr_a, model.decoderA)
    input_b = _resize(image, cfg.backbone_b.input_resolution, cfg.interpolation)
    pyr_b = run_backbone(input_b, model.backboneB)
    heads_b, _ = decode(pyr_b, model.decoderB)
    maps, probs = _finish(cfg, model, heads_a, heads_b)
    return MeritOutput(maps, probs, heads_a, heads_b, pyr_a, pyr_b, input_b, pyr_b)


def forward_cascaded(image: Tensor, model: MeritModel) -> MeritOutput:
    cfg = model.cfg
    _check_image(image, cfg)
    mode = cfg.interpolation
    pyr_a = run_backbone(_resize(image, cfg.backbone_a.input_resolution, mode), model.backboneA)
    heads_a, last_a = decode(pyr_a, model.decoderA)
    input_b = make_feedback_image(last_a, image, cfg.backbone_b.input_resolution, model.feedback,
                                  cfg.feedback, mode)
    pyr_b = run_backbone(input_b, model.backboneB)
    merged = FeaturePyramid(*[
        ops.add(fb, _resize_hw(fa, fb.shape[2], fb.shape[3], mode)) for fa, fb in zip(pyr_a, pyr_b)
    ])
    heads_b, _ = decode(merged, model.decoderB)
    maps, probs = _finish(cfg, model, heads_a, heads_b)
    return MeritOutput(maps, probs, heads_a, heads_b, pyr_a, pyr_b, input_b, merged)


def _resize_hw(x: Tensor, h: int, w: int, mode: str) -> Tensor:
    if x.shape[-2:] == (h, w):
        return x
    return ops.resize2d(x, h, w, mode)


def forward(image: Tensor, model: MeritModel) -> MeritOutput:
    mode = model.cfg.mode
    if mode == "parallel":
        return forward_parallel(image, model)
    if mode == "cascaded":
        return forward_cascaded(image, model)
    return forward_single(image, model)
