"""
The attention-map loss
======================

Each feature plane of a student activation is flattened, scaled to unit
length and compared with the matching teacher plane. The loss is the mean
of those distances, so it ignores how strongly a plane fires and looks only
at where it fires.
"""

import math

import numpy as np

from atx.attention import attention_loss, total_loss
from atx.tensor import Tensor


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=np.float64)


# one sample, two 1x2 planes: the first pair points in orthogonal directions,
# the second pair in the same direction with different magnitude
teacher = t([[[[1.0, 0.0]], [[0.0, 2.0]]]])
student = t([[[[0.0, 1.0]], [[0.0, 4.0]]]])
print("hand case:", attention_loss(student, teacher).item(), "expected", math.sqrt(2) / 2)

rng = np.random.default_rng(1)
a = rng.normal(size=(4, 8, 5, 5))
print("identical maps:", attention_loss(t(a), t(a)).item())
print("rescaled planes:", attention_loss(t(a * 123.0), t(a)).item())
print("negated maps (the maximum):", attention_loss(t(-a), t(a)).item())

# the training objective adds the attention loss to cross-entropy with weight 1/beta
logits = t(rng.normal(size=(4, 3)))
labels = np.array([0, 1, 2, 1])
s, te = t(rng.normal(size=(4, 8, 5, 5))), t(rng.normal(size=(4, 8, 5, 5)))
for beta in (1.0, 50.0, 2000.0):
    parts = total_loss(logits, labels, s, te, beta, "multiclass").as_floats()
    print(f"beta {beta:>6g}: ce {parts['ce']:.4f} + at {parts['at']:.4f} / beta = {parts['total']:.4f}")
