"""Parameter-owning layers built on :mod:`atx.ops`."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Parameter(Tensor):
    """A leaf tensor that an optimizer may update."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Minimal container: registers parameters, buffers and child modules by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> None:
        self._children[name] = module
        object.__setattr__(self, name, module)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())
        state.update((k, b.copy()) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - set(own) - set(bufs)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
        for k, b in bufs.items():
            arr = np.asarray(state[k])
            if arr.shape != b.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {b.shape}")
            b[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(get_default_dtype())


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=False, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = int(kernel_size)
        self.stride, self.padding = int(stride), int(padding)
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, k
        self.weight = Parameter(kaiming_normal(rng, (out_channels, in_channels, k, k), in_channels * k * k))
        self.bias = Parameter(np.zeros(out_channels, dtype=get_default_dtype())) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, num_features, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        dt = get_default_dtype()
        self.num_features = num_features
        self.momentum, self.eps = momentum, eps
        self.weight = Parameter(np.ones(num_features, dtype=dt))
        self.bias = Parameter(np.zeros(num_features, dtype=dt))
        self.register_buffer("running_mean", np.zeros(num_features, dtype=dt))
        self.register_buffer("running_var", np.ones(num_features, dtype=dt))

    def forward(self, x):
        return ops.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class Linear(Module):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_features)
        dt = get_default_dtype()
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_features, in_features)).astype(dt))
        self.bias = Parameter(np.zeros(out_features, dtype=dt))

    def forward(self, x):
        return ops.dense(x, self.weight, self.bias)


class BNReLUConv(Module):
    """Pre-activation unit: batch norm, ReLU, then convolution."""

    def __init__(self, in_channels, out_channels, kernel_size, padding=0, rng=None):
        super().__init__()
        self.norm = BatchNorm2d(in_channels)
        self.conv = Conv2d(in_channels, out_channels, kernel_size, padding=padding, rng=rng)
        self.out_channels = out_channels

    def forward(self, x):
        return self.conv(ops.relu(self.norm(x)))
