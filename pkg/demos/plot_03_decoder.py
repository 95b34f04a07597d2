"""
Cascaded decoding and the four prediction maps
==============================================

The decoder refines the deepest feature with a CAM, then climbs the pyramid:
upsample, gate the skip with an attention gate, merge, refine with a CAM.
Each stage has a 1x1 head. The final map is the softmax of the weighted sum
of the heads.
"""

import numpy as np

from meritseg.cascade_decoder import CascadeDecoder, HeadWeights, combine_predictions, decode
from meritseg.numerics.tensor import Tensor
from meritseg.vision_blocks import FeaturePyramid

rng = np.random.default_rng(0)
channels = (16, 32, 48, 64)
pyr = FeaturePyramid(*[Tensor(rng.normal(size=(1, c, s, s)).astype(np.float32))
                       for c, s in zip(channels, (16, 8, 4, 4))])
dec = CascadeDecoder(channels, num_classes=3, rng=rng)
heads, last = decode(pyr, dec)
print("head shapes:", [h.shape for h in heads])
print("gate calls:", [g.calls for g in dec.gates()], "CAM calls:", [c.calls for c in dec.cams()])

###############################################################################
# Head weights select or blend stages.
print("p1 only, pixel (0, 0):", combine_predictions(heads[:1] * 4, HeadWeights(1, 0, 0, 0)).data[0, :, 0, 0])
print("probabilities sum to", combine_predictions([h for h in heads[:1]] * 4).data.sum(axis=1).max())
