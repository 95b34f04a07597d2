"""
Reverse-mode gradients on numpy arrays
======================================

Every block in the package is built from a small set of differentiable
primitives. This script builds a tiny graph, pulls gradients out of it and
compares them with central differences.
"""

import numpy as np

from meritseg.numerics import ops
from meritseg.numerics.gradcheck import check_gradients
from meritseg.numerics.tensor import Tensor, grad_of

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
k = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)

###############################################################################
# A convolution, a layer norm over channels and a sigmoid, reduced to a scalar.
w = np.ones(4)
b = np.zeros(4)


def f():
    y = ops.conv2d(x, k, padding=1)
    y = ops.layer_norm(y, w, b, axis=1)
    return ops.sum(ops.sigmoid(y))


gx, gk = grad_of(f(), [x, k])
print("grad shapes:", gx.shape, gk.shape)

###############################################################################
# The same gradients from finite differences.
print("worst relative error:", check_gradients(f, [x, k]))

###############################################################################
# Resizing is a pair of small matrices, so its backward pass is exact too.
img = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
print(ops.resize2d(img, 4, 4, "bilinear").data[0, 0])
