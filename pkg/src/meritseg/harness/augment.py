"""Random flips and rotations applied identically to an image and its mask."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

TRANSFORMS = ("identity", "hflip", "vflip", "rot90", "rotate")
MAX_SMALL_ANGLE = 15.0


def rotation_source_coords(h: int, w: int, angle_deg: float) -> np.ndarray:
    """Source (row, col) for every output pixel of a rotation about the image centre."""
    t = math.radians(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = rr - cy, cc - cx
    src_r = cy + math.cos(t) * dy - math.sin(t) * dx
    src_c = cx + math.sin(t) * dy + math.cos(t) * dx
    return np.stack([src_r, src_c])


def apply_transform(image: np.ndarray, mask: np.ndarray, op: str, k: int = 1,
                    angle: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Apply one named transform to a (C, H, W) image and (H, W) mask."""
    if op == "identity" or (op == "rotate" and angle == 0.0):
        return image.copy(), mask.copy()
    if op == "hflip":
        return image[..., ::-1].copy(), mask[..., ::-1].copy()
    if op == "vflip":
        return image[..., ::-1, :].copy(), mask[..., ::-1, :].copy()
    if op == "rot90":
        return np.rot90(image, k, axes=(-2, -1)).copy(), np.rot90(mask, k, axes=(-2, -1)).copy()
    if op == "rotate":
        coords = rotation_source_coords(mask.shape[0], mask.shape[1], angle)
        img = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="nearest") for ch in image])
        msk = ndimage.map_coordinates(mask, coords, order=0, mode="nearest")
        return img.astype(image.dtype), msk.astype(mask.dtype)
    raise ValueError(f"unknown transform {op!r}")


def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    op = TRANSFORMS[int(rng.integers(len(TRANSFORMS)))]
    k = int(rng.integers(1, 4))
    angle = float(rng.uniform(-MAX_SMALL_ANGLE, MAX_SMALL_ANGLE))
    return apply_transform(image, mask, op, k=k, angle=angle)
