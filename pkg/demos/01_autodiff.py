"""
Reverse-mode autodiff on numpy arrays
=====================================

A Tensor records the operation that produced it. Calling ``backward`` on a
scalar walks that record in reverse and leaves ``.grad`` on every leaf that
asked for one. Here we differentiate a tiny convolutional model by hand and
then let the finite-difference checker confirm the result.
"""

import numpy as np

from atx import ops
from atx.gradcheck import finite_difference_check
from atx.tensor import Tensor, precision

rng = np.random.default_rng(0)

# float32 is the default; switch to float64 when checking gradients
with precision(np.float64):
    x = Tensor(rng.normal(size=(2, 3, 6, 6)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
    y = np.array([0, 2])

    def loss_of(weight):
        h = ops.relu(ops.conv2d(x, weight, padding=1))
        logits = ops.flatten(ops.adaptive_avg_pool2d(h, 1))
        return ops.softmax_cross_entropy(logits, y)

    loss = loss_of(w)
    loss.backward()
    print(f"loss {loss.item():.5f}, grad norm {np.linalg.norm(w.grad):.5f}")

    # central differences on every weight coordinate
    err = finite_difference_check(loss_of, Tensor(w.data))
    print(f"max relative error against central differences: {err:.2e}")

# shapes never broadcast silently
try:
    Tensor(np.ones((2, 3))) + Tensor(np.ones(3))
except ValueError as exc:
    print("refused:", exc)
