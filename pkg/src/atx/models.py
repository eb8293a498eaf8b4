"""DenseNet builders with named tap points for attention extraction.

Layout (pre-activation DenseNet):

    stem (7x7 conv s2, BN, ReLU) -> pool0 (3x3 max s2) ->
    block1 -> transition1 -> block2 [-> transition2 -> block3 ...] ->
    tap_pool (adaptive avg to tap_size) -> proj1 -> proj2 ... ->
    head (BN, ReLU, global avg pool, fully-connected)

Each dense layer is BN-ReLU-1x1 conv (bottleneck_factor * growth) followed by
BN-ReLU-3x3 conv (growth) and its output is concatenated with every earlier
feature map in the block.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .nn import BatchNorm2d, BNReLUConv, Conv2d, Linear, Module
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

HEADS = ("sigmoid_multilabel", "softmax_multiclass")
REFERENCE_DENSENET40_PARAMS = 1_364_142


@dataclass(frozen=True)
class ArchConfig:
    init_channels: int = 64
    growth_rate: int = 32
    block_layer_counts: tuple = (6, 12)
    transition_compression: float = 0.5
    head: str = "sigmoid_multilabel"
    num_classes: int = 14
    projection_widths: tuple = (1024, 1024)
    tap_spec: Optional[str] = None
    in_channels: int = 3
    tap_size: int = 8
    bottleneck_factor: int = 4

    def __post_init__(self):
        object.__setattr__(self, "block_layer_counts", tuple(int(b) for b in self.block_layer_counts))
        object.__setattr__(self, "projection_widths", tuple(int(w) for w in (self.projection_widths or ())))
        self.validate()

    def validate(self) -> None:
        if not self.block_layer_counts or min(self.block_layer_counts) < 1:
            raise ValueError("block_layer_counts must be non-empty with every entry >= 1")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head == "softmax_multiclass" and self.num_classes < 2:
            raise ValueError("a multiclass head needs num_classes >= 2")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not 0.0 < self.transition_compression <= 1.0:
            raise ValueError("transition_compression must lie in (0, 1]")
        for name in ("init_channels", "growth_rate", "in_channels", "tap_size", "bottleneck_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if any(w < 1 for w in self.projection_widths):
            raise ValueError("projection widths must be positive")

    @property
    def task(self) -> str:
        return "multilabel_binary" if self.head == "sigmoid_multilabel" else "multiclass"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_layer_counts"] = list(self.block_layer_counts)
        d["projection_widths"] = list(self.projection_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ArchConfig keys: {sorted(unknown)}")
        return cls(**d)


def densenet40_config(num_classes: int = 14, head: str = "sigmoid_multilabel", projection_widths=(1024, 1024)):
    return ArchConfig(
        init_channels=64,
        growth_rate=32,
        block_layer_counts=(6, 12),
        transition_compression=0.5,
        head=head,
        num_classes=num_classes,
        projection_widths=tuple(projection_widths),
    )


class DenseLayer(Module):
    def __init__(self, in_channels, growth_rate, bottleneck_factor=4, rng=None):
        super().__init__()
        width = bottleneck_factor * growth_rate
        self.bottleneck = BNReLUConv(in_channels, width, 1, rng=rng)
        self.conv = BNReLUConv(width, growth_rate, 3, padding=1, rng=rng)

    def forward(self, x):
        return self.conv(self.bottleneck(x))


class DenseBlock(Module):
    def __init__(self, in_channels, n_layers, growth_rate, bottleneck_factor=4, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.n_layers = n_layers
        self.out_channels = in_channels + n_layers * growth_rate
        self.layer_names = []
        for i in range(n_layers):
            name = f"layer{i + 1}"
            self.add_module(name, DenseLayer(in_channels + i * growth_rate, growth_rate, bottleneck_factor, rng))
            self.layer_names.append(name)

    def forward(self, x, record=None):
        features = [x]
        out = x
        for name in self.layer_names:
            new = getattr(self, name)(out)
            features.append(new)
            out = ops.concat(features, axis=1)
            if record is not None:
                record(name, out)
        return out


def build_dense_block(in_channels: int, n_layers: int, growth_rate: int, bottleneck_factor: int = 4, rng=None):
    """Dense block whose output has ``in_channels + n_layers * growth_rate`` channels."""
    for v in (in_channels, n_layers, growth_rate, bottleneck_factor):
        if int(v) < 1:
            raise ValueError("dense block sizes must be positive integers")
    return DenseBlock(int(in_channels), int(n_layers), int(growth_rate), int(bottleneck_factor), rng)


class Transition(Module):
    def __init__(self, in_channels, compression, rng=None):
        super().__init__()
        self.out_channels = max(1, int(np.floor(compression * in_channels)))
        self.unit = BNReLUConv(in_channels, self.out_channels, 1, rng=rng)

    def forward(self, x):
        return ops.avg_pool2d(self.unit(x), 2, 2)


class Stem(Module):
    def __init__(self, in_channels, out_channels, rng=None):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 7, stride=2, padding=3, rng=rng)
        self.norm = BatchNorm2d(out_channels)

    def forward(self, x):
        return ops.relu(self.norm(self.conv(x)))


class Head(Module):
    def __init__(self, in_channels, num_classes, rng=None):
        super().__init__()
        self.norm = BatchNorm2d(in_channels)
        self.fc = Linear(in_channels, num_classes, rng=rng)

    def features(self, x):
        return ops.adaptive_avg_pool2d(ops.relu(self.norm(x)), 1)

    def classify(self, pooled):
        return self.fc(ops.flatten(pooled))


class TapAdapter(Module):
    """Student-side reconciler: adaptive average pool to the teacher's H x W, then 1x1 projection."""

    def __init__(self, in_channels, out_channels, out_hw, rng=None):
        super().__init__()
        self.out_hw = tuple(out_hw)
        self.proj = Conv2d(in_channels, out_channels, 1, rng=rng)

    def forward(self, x):
        if x.shape[2:] != self.out_hw:
            x = ops.adaptive_avg_pool2d(x, self.out_hw)
        return self.proj(x)


class DenseNet(Module):
    """DenseNet with ordered layer groups (for freezing) and named tap points."""

    def __init__(self, config: ArchConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.groups: "OrderedDict[str, Module]" = OrderedDict()

        self.stem = Stem(config.in_channels, config.init_channels, rng)
        self.groups["stem"] = self.stem
        channels = config.init_channels
        self.block_names = []
        n_blocks = len(config.block_layer_counts)
        for b, n_layers in enumerate(config.block_layer_counts, start=1):
            block = build_dense_block(channels, n_layers, config.growth_rate, config.bottleneck_factor, rng)
            self.add_module(f"block{b}", block)
            self.block_names.append(f"block{b}")
            for lname in block.layer_names:
                self.groups[f"block{b}.{lname}"] = getattr(block, lname)
            channels = block.out_channels
            if b < n_blocks:
                trans = Transition(channels, config.transition_compression, rng)
                self.add_module(f"transition{b}", trans)
                self.groups[f"transition{b}"] = trans
                channels = trans.out_channels
        self.proj_names = []
        for k, width in enumerate(config.projection_widths, start=1):
            proj = BNReLUConv(channels, width, 1, rng=rng)
            self.add_module(f"proj{k}", proj)
            self.groups[f"proj{k}"] = proj
            self.proj_names.append(f"proj{k}")
            channels = width
        self.head = Head(channels, config.num_classes, rng)
        self.groups["head"] = self.head
        self.adapter: Optional[TapAdapter] = None

        self.tap_names = [self.default_tap()] if config.tap_spec is None else [config.tap_spec]
        valid = set(self.stage_names())
        if self.tap_names[0] not in valid:
            raise ValueError(f"tap {self.tap_names[0]!r} is not a layer of this network; choose from {sorted(valid)}")
        self.frozen_groups: set = set()

    # -- structure ----------------------------------------------------------
    def default_tap(self) -> str:
        if self.proj_names:
            return self.proj_names[-1]
        last = self.block_names[-1]
        n = self.config.block_layer_counts[-1]
        return f"{last}.layer{max(n - 1, 1)}"

    def stage_names(self):
        names = ["stem", "pool0"]
        for b, bname in enumerate(self.block_names, start=1):
            block = getattr(self, bname)
            names.extend(f"{bname}.{lname}" for lname in block.layer_names)
            names.append(bname)
            if b < len(self.block_names):
                names.append(f"transition{b}")
        if self.proj_names:
            names.append("tap_pool")
            names.extend(self.proj_names)
        names.append("head_input")
        return names

    def register_tap(self, name: str) -> None:
        if name not in self.stage_names():
            raise ValueError(f"tap {name!r} is not a layer of this network")
        if name in self.tap_names:
            raise ValueError(f"tap {name!r} already registered")
        self.tap_names.append(name)

    @property
    def primary_tap(self) -> str:
        return self.tap_names[0]

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(sum(p.size for p in self.parameters() if p.requires_grad or not trainable_only))

    def group_parameters(self, group: str):
        return self.groups[group].parameters()

    @property
    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    # -- forward ------------------------------------------------------------
    def forward(self, x, taps=None, trace=None):
        """Return logits. ``taps`` (dict) receives the registered tap outputs; ``trace`` (list) stage shapes."""
        wanted = set(self.tap_names) if taps is not None else set()

        def emit(name, t):
            if name in wanted:
                taps[name] = t
            if trace is not None and "." not in name:
                trace.append((name, t.shape))

        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected input of shape (N, {self.config.in_channels}, H, W), got {x.shape}")
        out = self.stem(x)
        emit("stem", out)
        out = ops.max_pool2d(out, 3, 2, 1)
        emit("pool0", out)
        for b, bname in enumerate(self.block_names, start=1):
            out = getattr(self, bname)(out, record=lambda lname, t, _b=bname: emit(f"{_b}.{lname}", t))
            emit(bname, out)
            if b < len(self.block_names):
                out = getattr(self, f"transition{b}")(out)
                emit(f"transition{b}", out)
        if self.proj_names:
            ts = self.config.tap_size
            if out.shape[2] < ts or out.shape[3] < ts:
                raise ValueError(f"feature map {out.shape[2:]} is smaller than tap_size {ts}; use a larger input")
            out = ops.adaptive_avg_pool2d(out, ts)
            emit("tap_pool", out)
            for pname in self.proj_names:
                out = getattr(self, pname)(out)
                emit(pname, out)
        pooled = self.head.features(out)
        emit("head_input", pooled)
        return self.head.classify(pooled)

    def spatial_trace(self, input_hw, batch: int = 1):
        """Stage names with their output shapes for an input of the given spatial size (eval mode)."""
        h, w = (input_hw, input_hw) if np.isscalar(input_hw) else input_hw
        was_training = self.training
        self.eval()
        trace = []
        with no_grad():
            self.forward(Tensor(np.zeros((batch, self.config.in_channels, h, w))), trace=trace)
        self.train(was_training)
        return trace

    def tap_shape(self, input_hw, tap: Optional[str] = None):
        """(C, H, W) of a tap (primary by default) for the given input size, before any adapter."""
        h, w = (input_hw, input_hw) if np.isscalar(input_hw) else input_hw
        was_training = self.training
        self.eval()
        taps = {}
        tap = tap or self.primary_tap
        saved = self.tap_names
        self.tap_names = [tap]
        try:
            with no_grad():
                self.forward(Tensor(np.zeros((1, self.config.in_channels, h, w))), taps=taps)
        finally:
            self.tap_names = saved
            self.train(was_training)
        return tuple(taps[tap].shape[1:])


def build_densenet_scaled(config: ArchConfig, seed: int = 0) -> DenseNet:
    """DenseNet from an arbitrary :class:`ArchConfig` (desk-scale teachers and students)."""
    return DenseNet(config, seed=seed)


def build_densenet40(
    num_classes: int = 14,
    head: str = "sigmoid_multilabel",
    projection_widths=(1024, 1024),
    seed: int = 0,
    verbose: bool = True,
) -> DenseNet:
    """The two-block light DenseNet: DenseNet-121 truncated after its second dense block."""
    model = DenseNet(densenet40_config(num_classes, head, projection_widths), seed=seed)
    count = model.num_parameters(trainable_only=True)
    model.param_report = {
        "trainable_parameters": count,
        "reference": REFERENCE_DENSENET40_PARAMS,
        "deviation": count - REFERENCE_DENSENET40_PARAMS,
    }
    msg = f"DenseNet-40: {count:,} trainable parameters (reference {REFERENCE_DENSENET40_PARAMS:,}"
    if count != REFERENCE_DENSENET40_PARAMS:
        msg += f", deviation {count - REFERENCE_DENSENET40_PARAMS:+,})"
    else:
        msg += ", exact match)"
    logger.info(msg)
    if verbose:
        print(msg)
    return model


def attach_adapter(student: DenseNet, teacher_tap_shape, input_hw, seed: int = 0) -> Optional[TapAdapter]:
    """Insert a trainable adapter when the student's tap shape differs from the teacher's.

    Returns the adapter (or None when shapes already agree). Raises if the
    student's tap is spatially smaller than the teacher's.
    """
    ct, ht, wt = teacher_tap_shape
    cs, hs, ws = student.tap_shape(input_hw)
    if (cs, hs, ws) == (ct, ht, wt):
        student.adapter = None
        return None
    if hs < ht or ws < wt:
        raise ValueError(f"student tap {hs}x{ws} is smaller than teacher tap {ht}x{wt}; cannot reconcile")
    adapter = TapAdapter(cs, ct, (ht, wt), rng=np.random.default_rng(seed))
    student.adapter = adapter
    student.add_module("adapter", adapter)
    return adapter


def forward_with_taps(model: DenseNet, batch: Tensor):
    """Run the model and return ``(logits, {tap name: AttentionTap})``.

    A fully frozen model (a teacher) must be in eval mode so that batch norm
    uses its running statistics.
    """
    from .attention import AttentionTap

    frozen = model.is_frozen
    if frozen and model.training:
        raise RuntimeError("frozen model must be put in eval mode (model.eval()) before extracting taps")
    raw = {}
    logits = model(batch, taps=raw)
    if model.adapter is not None:
        raw[model.primary_tap] = model.adapter(raw[model.primary_tap])
    source = "teacher" if frozen else "student"
    return logits, {name: AttentionTap(raw[name], source) for name in model.tap_names}


_UNFREEZE_RE = re.compile(r"^unfreeze_last_k\((\d+)\)$")


def parse_freeze_policy(policy):
    """Normalize a policy to ``("all_trainable",)``, ``("frozen",)`` or ``("unfreeze_last_k", k)``."""
    if isinstance(policy, (tuple, list)):
        kind, *rest = policy
        if kind == "unfreeze_last_k" and len(rest) == 1:
            return ("unfreeze_last_k", int(rest[0]))
        if not rest and kind in ("all_trainable", "frozen"):
            return (kind,)
    elif isinstance(policy, str):
        if policy in ("all_trainable", "frozen"):
            return (policy,)
        m = _UNFREEZE_RE.match(policy.replace(" ", ""))
        if m:
            return ("unfreeze_last_k", int(m.group(1)))
    raise ValueError(f"unknown freeze policy {policy!r}")


def freeze_layers(model: DenseNet, policy) -> DenseNet:
    """Mark parameter groups trainable or frozen.

    Groups are ordered stem, each dense layer, transitions, projections, head;
    ``unfreeze_last_k(k)`` leaves the last k groups trainable. A tap adapter,
    if attached, stays trainable unless the policy is ``frozen``.
    """
    kind = parse_freeze_policy(policy)
    names = list(model.groups)
    if kind[0] == "all_trainable":
        trainable = set(names)
    elif kind[0] == "frozen":
        trainable = set()
    else:
        k = kind[1]
        if k < 1:
            raise ValueError("unfreeze_last_k needs k >= 1; use the 'frozen' policy to freeze everything")
        if k > len(names):
            raise ValueError(f"unfreeze_last_k({k}) exceeds the {len(names)} layer groups")
        trainable = set(names[-k:])
    for name, module in model.groups.items():
        for p in module.parameters():
            p.requires_grad = name in trainable
    if model.adapter is not None:
        for p in model.adapter.parameters():
            p.requires_grad = kind[0] != "frozen"
    model.frozen_groups = set(names) - trainable
    return model
