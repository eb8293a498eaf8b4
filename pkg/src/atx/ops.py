"""Differentiable operations on :class:`~atx.tensor.Tensor`.

Convolutions follow the cross-correlation convention (no kernel flip), as in
mainstream deep-learning frameworks. Spatial tensors are laid out as NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

__all__ = [
    "add",
    "mul",
    "div",
    "neg",
    "sum",
    "mean",
    "reshape",
    "flatten",
    "concat",
    "square",
    "conv2d",
    "max_pool2d",
    "avg_pool2d",
    "adaptive_avg_pool2d",
    "pool",
    "dense",
    "relu",
    "sigmoid",
    "softmax",
    "batch_norm",
    "activation",
    "l2_norm",
    "l2_normalize",
    "binary_cross_entropy_with_logits",
    "softmax_cross_entropy",
]


def _pair(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected an int or a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check_4d(x: Tensor, name: str):
    if x.ndim != 4:
        raise ValueError(f"{name} expects an NCHW tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------


def _binary_operand(a: Tensor, b, opname: str):
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape} (no implicit broadcasting)")
        return b
    if np.ndim(b) != 0:
        raise TypeError(f"{opname}: operand must be a Tensor of shape {a.shape} or a scalar")
    return float(b)


def add(a: Tensor, b) -> Tensor:
    b = _binary_operand(a, b, "add")
    if isinstance(b, Tensor):
        return make_result("add", a.data + b.data, (a, b), lambda g: (g, g))
    return make_result("add", a.data + a.dtype.type(b), (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return make_result("neg", -a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    b = _binary_operand(a, b, "mul")
    if isinstance(b, Tensor):
        ad, bd = a.data, b.data
        return make_result("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))
    s = a.dtype.type(b)
    return make_result("mul", a.data * s, (a,), lambda g: (g * s,))


def div(a: Tensor, b: Tensor) -> Tensor:
    b = _binary_operand(a, b, "div")
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = a.data.sum(axis=axis)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return make_result("sum", np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    out = a.data.mean(axis=axis)
    shape = a.shape
    count = a.size if axis is None else int(np.prod([shape[i] for i in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / count).astype(a.dtype),)

    return make_result("mean", np.asarray(out, dtype=a.dtype), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = a.shape
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != axis % len(ref)):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", out, tensors, backward)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _out_size(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an (out, in, kh, kw) kernel."""
    _check_4d(x, "conv2d")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {ci} (weight shape {weight.shape})")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")
    s, p = int(stride), int(padding)
    if s < 1 or p < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if kh > h + 2 * p or kw > w + 2 * p:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * p}x{w + 2 * p}")
    ho, wo = _out_size(h, kh, s, p), _out_size(w, kw, s, p)
    # channel-major layout: columns are (c*kh*kw, n*ho*wo) so one GEMM covers the batch
    xc = x.data.transpose(1, 0, 2, 3)
    xp = np.pad(xc, ((0, 0), (0, 0), (p, p), (p, p))) if p else xc
    w2 = weight.data.reshape(o, -1)
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(c, kh, kw, n, ho, wo)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += gcols[:, i, j]
            if p:
                gxp = gxp[:, :, p : p + h, p : p + w]
            gx = np.ascontiguousarray(gxp.transpose(1, 0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result("conv2d", out, parents, backward)


def _scatter_windows(gxp, contrib, kh, kw, s, ho, wo):
    """Add per-window-position contributions (N,C,Ho,Wo,kh,kw) back onto the padded input grid."""
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s] += contrib(i, j)


def max_pool2d(x: Tensor, kernel_size, stride=None, padding: int = 0) -> Tensor:
    _check_4d(x, "max_pool2d")
    kh, kw = _pair(kernel_size)
    s = kh if stride is None else int(stride)
    p = int(padding)
    n, c, h, w = x.shape
    if kh > h + 2 * p or kw > w + 2 * p:
        raise ValueError(f"max_pool2d: kernel {kh}x{kw} larger than padded input")
    ho, wo = _out_size(h, kh, s, p), _out_size(w, kw, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, kh * kw)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        _scatter_windows(gxp, lambda i, j: g * (idx == i * kw + j), kh, kw, s, ho, wo)
        return (gxp[:, :, p : p + h, p : p + w] if p else gxp,)

    return make_result("max_pool2d", np.ascontiguousarray(out), (x,), backward)


def avg_pool2d(x: Tensor, kernel_size, stride=None, padding: int = 0) -> Tensor:
    """Average pooling; zero padding counts toward the window mean."""
    _check_4d(x, "avg_pool2d")
    kh, kw = _pair(kernel_size)
    s = kh if stride is None else int(stride)
    p = int(padding)
    n, c, h, w = x.shape
    if kh > h + 2 * p or kw > w + 2 * p:
        raise ValueError(f"avg_pool2d: kernel {kh}x{kw} larger than padded input")
    ho, wo = _out_size(h, kh, s, p), _out_size(w, kw, s, p)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    out = win.mean(axis=(-2, -1)).astype(x.dtype)
    scale = 1.0 / (kh * kw)

    def backward(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        gs = g * scale
        _scatter_windows(gxp, lambda i, j: gs, kh, kw, s, ho, wo)
        return (gxp[:, :, p : p + h, p : p + w] if p else gxp,)

    return make_result("avg_pool2d", out, (x,), backward)


def _adaptive_bins(size, target):
    return [((i * size) // target, -((-(i + 1) * size) // target)) for i in range(target)]


def adaptive_avg_pool2d(x: Tensor, output_size) -> Tensor:
    """Average pool to exactly ``output_size`` spatial cells."""
    _check_4d(x, "adaptive_avg_pool2d")
    th, tw = _pair(output_size)
    n, c, h, w = x.shape
    if th < 1 or tw < 1 or th > h or tw > w:
        raise ValueError(f"adaptive_avg_pool2d: target {th}x{tw} must be within input {h}x{w}")
    if h % th == 0 and w % tw == 0:
        bh, bw = h // th, w // tw
        out = x.data.reshape(n, c, th, bh, tw, bw).mean(axis=(3, 5)).astype(x.dtype)

        def backward(g):
            gx = np.broadcast_to(g[:, :, :, None, :, None] / (bh * bw), (n, c, th, bh, tw, bw))
            return (gx.reshape(n, c, h, w).astype(x.dtype),)

        return make_result("adaptive_avg_pool2d", out, (x,), backward)

    rows, cols = _adaptive_bins(h, th), _adaptive_bins(w, tw)
    out = np.empty((n, c, th, tw), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                gx[:, :, r0:r1, c0:c1] += (g[:, :, i, j] / ((r1 - r0) * (c1 - c0)))[:, :, None, None]
        return (gx,)

    return make_result("adaptive_avg_pool2d", out, (x,), backward)


def pool(x: Tensor, kind: str, kernel_or_target, stride=None, padding: int = 0) -> Tensor:
    """Dispatch to max, avg or adaptive_avg pooling."""
    if kind == "max":
        return max_pool2d(x, kernel_or_target, stride, padding)
    if kind == "avg":
        return avg_pool2d(x, kernel_or_target, stride, padding)
    if kind == "adaptive_avg":
        return adaptive_avg_pool2d(x, kernel_or_target)
    raise ValueError(f"unknown pool kind {kind!r}")


# ---------------------------------------------------------------------------
# dense layers and activations
# ---------------------------------------------------------------------------


def dense(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x of shape (N, F) and weight (K, F)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ValueError(f"dense expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"dense: input features {x.shape[1]} != weight features {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"dense: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result("dense", out, parents, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def _log_softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    out = np.exp(_log_softmax(x.data))

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", out, (x,), backward)


def batch_norm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, exponential moving average).
    """
    _check_4d(x, "batch_norm")
    n, c, h, w = x.shape
    if weight.shape != (c,) or bias.shape != (c,):
        raise ValueError(f"batch_norm: affine parameters must have shape ({c},)")
    xd = x.data
    if training:
        if n < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2 samples")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        m = n * h * w
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (xd - mu[None, :, None, None].astype(x.dtype)) * inv_std[None, :, None, None]
    gamma = weight.data
    out = xhat * gamma[None, :, None, None] + bias.data[None, :, None, None]

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        scale = (gamma * inv_std)[None, :, None, None]
        if training:
            m = n * h * w
            gx = scale * (g - gb[None, :, None, None] / m - xhat * gg[None, :, None, None] / m)
        else:
            gx = g * scale
        return gx, gg, gb

    return make_result("batch_norm", out, (x, weight, bias), backward)


def activation(x: Tensor, kind: str, **kwargs) -> Tensor:
    """Dispatch to relu, sigmoid, softmax or batch_norm."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softmax":
        return softmax(x)
    if kind == "batch_norm":
        return batch_norm(x, **kwargs)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# norms and losses
# ---------------------------------------------------------------------------


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is taken as zero."""
    nrm = np.sqrt((x.data * x.data).sum(axis=axis))

    def backward(g):
        safe = np.where(nrm > 0, nrm, 1.0)
        scale = np.where(nrm > 0, g / safe, 0.0)
        return (x.data * np.expand_dims(scale, axis),)

    return make_result("l2_norm", nrm.astype(x.dtype), (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``."""
    xd = x.data
    nrm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    clipped = nrm > eps
    denom = np.where(clipped, nrm, eps)
    out = xd / denom

    def backward(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        gx = np.where(clipped, (g - out * proj) / denom, g / eps)
        return (gx.astype(x.dtype),)

    return make_result("l2_normalize", out.astype(x.dtype), (x,), backward)


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets, in stable softplus form."""
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"binary cross-entropy: targets {y.shape} do not match logits {logits.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binary cross-entropy targets must be 0 or 1")
    z = logits.data
    softplus = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    loss = np.asarray((softplus - y * z).mean(), dtype=logits.dtype)
    count = z.size

    def backward(g):
        return ((g * (_sigmoid(z) - y) / count).astype(logits.dtype),)

    return make_result("bce_with_logits", loss, (logits,), backward)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of the target class; logits (N, K), targets int (N,)."""
    if logits.ndim != 2:
        raise ValueError(f"softmax cross-entropy expects (N, K) logits, got {logits.shape}")
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    n, k = logits.shape
    if t.shape != (n,):
        raise ValueError(f"softmax cross-entropy: targets shape {t.shape} != ({n},)")
    if not np.all(t == np.round(t)) or t.min(initial=0) < 0 or t.max(initial=0) >= k:
        raise ValueError(f"softmax cross-entropy: class targets must be integers in [0, {k})")
    t = t.astype(np.int64)
    logp = _log_softmax(logits.data)
    loss = np.asarray(-logp[np.arange(n), t].mean(), dtype=logits.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), t] -= 1.0
        return ((g * grad / n).astype(logits.dtype),)

    return make_result("softmax_cross_entropy", loss, (logits,), backward)
