"""
Subset-sum loss aggregation and segmentation metrics
====================================================

With n prediction maps there are 2**n - 1 non-empty subsets; each subset sum
is scored with the DICE/CE mix and the scores are added. DSC and HD95 score
a predicted label mask against ground truth.
"""

import numpy as np

from meritseg.losses import enumerate_subsets, mutation_loss, subset_members
from meritseg.metrics import dsc, evaluate_case, hd95
from meritseg.numerics.tensor import Tensor

print([subset_members(m) for m in enumerate_subsets(4)])

rng = np.random.default_rng(0)
target = rng.integers(0, 3, size=(2, 8, 8))
maps = [Tensor(rng.normal(size=(2, 3, 8, 8))) for _ in range(4)]
print("loss over 15 subsets:", float(mutation_loss(maps, target).data))

###############################################################################
# Two single-pixel masks three pixels apart.
a = np.zeros((4, 4), int)
b = a.copy()
a[0, 0], b[0, 3] = 1, 1
print("DSC", dsc(a, b, 1), "HD95", hd95(a, b, 1))

gt = np.zeros((32, 32), int)
gt[4:12, 4:12] = 1
gt[18:30, 16:30] = 2
pred = np.roll(gt, 2, axis=1)
print(evaluate_case(gt, pred, 3))
