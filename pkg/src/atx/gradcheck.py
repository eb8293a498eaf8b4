"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Return max over coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` maps a tensor to a scalar tensor. ``x`` must be float64; it is not
    modified. The analytic gradient comes from one backward pass, the numeric
    one from central differences ``(f(x+eps) - f(x-eps)) / (2 eps)``.
    """
    if x.dtype != np.float64:
        raise TypeError(f"finite_difference_check needs a float64 input, got {x.dtype}")
    base = x.data.copy()

    leaf = Tensor(base.copy(), requires_grad=True, dtype=np.float64)
    out = f(leaf)
    if out.size != 1:
        raise ValueError(f"f must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("f(x) is not finite")
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    def evaluate(arr):
        val = f(Tensor(arr, dtype=np.float64)).item()
        if not np.isfinite(val):
            raise FloatingPointError("f is not finite in the eps-neighbourhood of x")
        return val

    numeric = np.empty_like(base)
    probe = base.copy()
    flat_probe = probe.reshape(-1)
    for i in range(base.size):
        orig = flat_probe[i]
        flat_probe[i] = orig + eps
        up = evaluate(probe)
        flat_probe[i] = orig - eps
        down = evaluate(probe)
        flat_probe[i] = orig
        numeric.reshape(-1)[i] = (up - down) / (2 * eps)

    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
