"""Synthetic multi-scale segmentation data: noisy anti-aliased ellipses on a flat background."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..numerics.rng import RngStream

_SUPERSAMPLE = 4


@dataclass(frozen=True)
class SynthSpec:
    image_size: int = 128
    num_classes: int = 3
    objects_per_image: tuple[int, int] = (2, 4)
    radius_small: tuple[float, float] = (7.0, 11.0)
    radius_large: tuple[float, float] = (18.0, 26.0)
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects_per_image", tuple(int(v) for v in self.objects_per_image))
        object.__setattr__(self, "radius_small", tuple(float(v) for v in self.radius_small))
        object.__setattr__(self, "radius_large", tuple(float(v) for v in self.radius_large))
        lo, hi = self.objects_per_image
        if lo < 1 or hi < lo:
            raise ValueError("objects_per_image must be a range with 1 <= lo <= hi")
        for name in ("radius_small", "radius_large"):
            r0, r1 = getattr(self, name)
            if r0 <= 0 or r1 < r0:
                raise ValueError(f"{name} must be a positive range")
        if self.num_classes < 2:
            raise ValueError("need a background and at least one object class")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def class_intensity(c: int, num_classes: int) -> float:
    """Mean brightness of class ``c`` (0 is background)."""
    return 0.15 + 0.7 * c / max(1, num_classes - 1)


def _ellipse_inside(yy, xx, cy, cx, a, b, theta):
    dy, dx = yy - cy, xx - cx
    ct, st = math.cos(theta), math.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _place(rng: np.random.Generator, size: int, r: float, placed: list[tuple[float, float, float]]):
    margin = 2.0
    for _ in range(200):
        cy, cx = rng.uniform(r + 1, size - r - 1, size=2)
        if all(math.hypot(cy - py, cx - px) > r + pr + margin for py, px, pr in placed):
            return float(cy), float(cx)
    return None


def generate_sample(spec: SynthSpec, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Return a (3, S, S) float32 image in [0, 1] and an (S, S) uint8 label mask.

    With two or more objects the first is drawn from the small radius range
    and the second from the large one; objects never touch.
    """
    g = rng.generator()
    s = spec.image_size
    n_obj = int(g.integers(spec.objects_per_image[0], spec.objects_per_image[1] + 1))
    mask = np.zeros((s, s), dtype=np.uint8)
    intensity = np.full((s, s), class_intensity(0, spec.num_classes))

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    off = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE - 0.5
    placed: list[tuple[float, float, float]] = []
    for k in range(n_obj):
        if n_obj >= 2 and k < 2:
            rr = spec.radius_small if k == 0 else spec.radius_large
        else:
            rr = spec.radius_small if g.random() < 0.5 else spec.radius_large
        a, b = g.uniform(rr[0], rr[1], size=2)
        theta = float(g.uniform(0, math.pi))
        cls = int(g.integers(1, spec.num_classes))
        r = float(max(a, b))
        pos = _place(g, s, r, placed)
        if pos is None:
            continue
        cy, cx = pos
        placed.append((cy, cx, r))
        y0, y1 = max(0, int(cy - r) - 2), min(s, int(cy + r) + 3)
        x0, x1 = max(0, int(cx - r) - 2), min(s, int(cx + r) + 3)
        sy, sx = yy[y0:y1, x0:x1], xx[y0:y1, x0:x1]
        frac = np.zeros_like(sy)
        for oy in off:
            for ox in off:
                frac += _ellipse_inside(sy + oy, sx + ox, cy, cx, a, b, theta)
        frac /= _SUPERSAMPLE ** 2
        inside = _ellipse_inside(sy, sx, cy, cx, a, b, theta)
        mask[y0:y1, x0:x1][inside] = cls
        level = class_intensity(cls, spec.num_classes)
        region = intensity[y0:y1, x0:x1]
        intensity[y0:y1, x0:x1] = region * (1 - frac) + level * frac

    img = intensity + g.normal(0.0, spec.noise_sigma, size=(s, s))
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return np.repeat(img[None], 3, axis=0), mask


def make_dataset(spec: SynthSpec, n: int, first_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``n`` samples; sample i uses stream ``first_index + i`` of ``spec.seed``."""
    images = np.empty((n, 3, spec.image_size, spec.image_size), dtype=np.float32)
    masks = np.empty((n, spec.image_size, spec.image_size), dtype=np.uint8)
    for i in range(n):
        images[i], masks[i] = generate_sample(spec, RngStream(spec.seed, first_index + i))
    return images, masks


HELDOUT_OFFSET = 1_000_000
