"""
Block and grid attention
========================

Block attention mixes tokens inside each w x w window. Grid attention mixes
tokens that sit at the same offset of every window, which gives a sparse
global reach. The pyramid a backbone produces depends only on its input size.
"""

import numpy as np

from meritseg.numerics.tensor import Tensor
from meritseg.vision_blocks import (
    Backbone,
    BackboneConfig,
    MultiHeadSelfAttention,
    block_attention,
    grid_attention,
    run_backbone,
)

rng = np.random.default_rng(0)
attn = MultiHeadSelfAttention(8, 2, rng).astype(np.float64)
x = rng.normal(size=(1, 8, 8, 8))

###############################################################################
# Perturb one pixel and see which outputs move.
x2 = x.copy()
x2[..., 1, 1] += 1.0
for name, fn in (("block", block_attention), ("grid", grid_attention)):
    moved = np.abs(fn(Tensor(x2), 4, attn).data - fn(Tensor(x), 4, attn).data).max(axis=(0, 1)) > 0
    print(f"{name} attention: pixels affected by (1, 1)")
    print(moved.astype(int))

###############################################################################
# Stage resolutions for the two window/resolution pairs of the full model.
for res, window in ((256, 8), (224, 7)):
    cfg = BackboneConfig(res, window, stem_channels=4, stage_channels=(4, 4, 8, 8), heads=2)
    pyr = run_backbone(Tensor(np.zeros((1, 3, res, res), np.float32)), Backbone(cfg, rng))
    print(res, window, pyr.spatial_sizes())
