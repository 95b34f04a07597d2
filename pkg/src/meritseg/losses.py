"""Soft DICE, cross-entropy, their weighted mix, and feature-mixing loss aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import ops
from .numerics.tensor import Tensor


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.7     # DICE weight
    lambda2: float = 0.3     # CE weight
    smoothing: float = 1e-5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or abs(self.lambda1 + self.lambda2 - 1.0) > 1e-9:
            raise ValueError(f"loss weights must be non-negative and sum to 1, got {self.lambda1}, {self.lambda2}")

    @classmethod
    def from_lambda1(cls, lambda1: float, smoothing: float = 1e-5) -> "LossConfig":
        return cls(lambda1, 1.0 - lambda1, smoothing)


def one_hot(target: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(N, H, W) integer labels -> (N, C, H, W) indicator array."""
    target = np.asarray(target)
    if target.ndim != 3:
        raise ValueError(f"target must be (N, H, W), got shape {target.shape}")
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise ValueError(f"target labels must lie in [0, {num_classes})")
    return (target[:, None, :, :] == np.arange(num_classes)[None, :, None, None]).astype(dtype)


def _check_pair(x: Tensor, target: np.ndarray) -> None:
    if x.ndim != 4 or np.shape(target) != (x.shape[0],) + x.shape[2:]:
        raise ValueError(f"prediction {x.shape} and target {np.shape(target)} do not match")


def dice_loss(x: Tensor, target: np.ndarray, cfg: LossConfig = LossConfig(), from_logits: bool = True) -> Tensor:
    """1 - mean over classes of (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps).

    Sums run over batch and pixels; ``x`` holds logits unless ``from_logits`` is False.
    """
    _check_pair(x, target)
    y = one_hot(target, x.shape[1], x.dtype)
    p = ops.softmax(x, axis=1) if from_logits else x
    axes = (0, 2, 3)
    inter = ops.sum(ops.mul(p, y), axis=axes)
    denom = ops.add(ops.sum(p, axis=axes), y.sum(axis=axes) + cfg.smoothing)
    ratio = ops.div(ops.add(ops.mul(inter, 2.0), cfg.smoothing), denom)
    return ops.sub(1.0, ops.mean(ratio))


def ce_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[target]."""
    _check_pair(logits, target)
    y = one_hot(target, logits.shape[1], logits.dtype)
    n_pix = target.size
    return ops.mul(ops.sum(ops.mul(ops.log_softmax(logits, axis=1), y)), -1.0 / n_pix)


def combined_loss(logits: Tensor, target: np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    if cfg.lambda2 == 0.0:
        return dice_loss(logits, target, cfg)
    if cfg.lambda1 == 0.0:
        return ce_loss(logits, target)
    return ops.add(ops.mul(dice_loss(logits, target, cfg), cfg.lambda1),
                   ops.mul(ce_loss(logits, target), cfg.lambda2))


def enumerate_subsets(n: int) -> list[int]:
    """All non-empty subsets of {0..n-1} as bitmasks, ascending."""
    if not 1 <= n <= 16:
        raise ValueError(f"subset enumeration supports 1 <= n <= 16, got {n}")
    return list(range(1, 1 << n))


def subset_members(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def mutation_loss(maps: Sequence[Tensor], target: np.ndarray, cfg: LossConfig = LossConfig(),
                  accumulate: bool = True,
                  loss_fn: Callable[[Tensor, np.ndarray, LossConfig], Tensor] = combined_loss) -> Tensor:
    """Loss over every non-empty subset-sum of the stage prediction maps.

    With ``accumulate`` (default) the per-subset losses are summed in
    ascending-bitmask order; otherwise each subset overwrites the running
    value and only the last (all-maps) subset's loss is returned.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("mutation_loss needs at least one prediction map")
    shape = maps[0].shape
    if any(m.shape != shape for m in maps):
        raise ValueError("all prediction maps must share one shape")
    total = None
    for mask in enumerate_subsets(len(maps)):
        y_hat = None
        for i in subset_members(mask):
            y_hat = maps[i] if y_hat is None else ops.add(y_hat, maps[i])
        term = loss_fn(y_hat, target, cfg)
        total = ops.add(total, term) if (accumulate and total is not None) else term
    return total
