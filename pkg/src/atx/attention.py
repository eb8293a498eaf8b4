"""Attention-transfer loss and the combined teacher-student objective.

For a tap with C feature planes of size H x W, each plane is flattened,
l2-normalized, and the l2 distance between the student's and the teacher's
normalized plane is averaged over the C planes, then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor

DEFAULT_EPS = 1e-8
TASKS = ("multilabel_binary", "multiclass")


@dataclass
class AttentionTap:
    planes: Tensor  # (N, C, H, W)
    source: str = "student"

    def __post_init__(self):
        if self.source not in ("teacher", "student"):
            raise ValueError(f"source must be 'teacher' or 'student', got {self.source!r}")
        if self.planes.ndim != 4 or min(self.planes.shape) < 1:
            raise ValueError(f"tap planes must be a non-empty (N, C, H, W) tensor, got {self.planes.shape}")

    @property
    def shape(self):
        return self.planes.shape


@dataclass
class LossBreakdown:
    ce: Tensor
    at: Tensor
    beta: float
    total: Tensor

    def as_floats(self) -> dict:
        return {"ce": self.ce.item(), "at": self.at.item(), "beta": self.beta, "total": self.total.item()}


def _planes(x) -> Tensor:
    return x.planes if isinstance(x, AttentionTap) else x


def attention_loss(student, teacher, eps: float = DEFAULT_EPS) -> Tensor:
    """Mean over planes (and batch) of ``|| s/|s| - t/|t| ||_2``; lies in [0, 2].

    Each norm denominator is ``max(||q||, eps)``, so an all-zero plane maps to
    the zero vector and contributes distance 1 against any nonzero plane.
    The teacher side is treated as a constant.
    """
    s, t = _planes(student), _planes(teacher)
    if s.shape != t.shape:
        raise ValueError(f"attention_loss: student tap {s.shape} and teacher tap {t.shape} differ")
    if s.ndim != 4:
        raise ValueError(f"attention_loss expects (N, C, H, W) taps, got {s.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not (np.isfinite(s.data).all() and np.isfinite(t.data).all()):
        raise FloatingPointError("attention_loss: non-finite activations")
    n, c, h, w = s.shape
    t_const = Tensor(t.data, dtype=s.dtype)
    qs = ops.l2_normalize(ops.reshape(s, (n, c, h * w)), axis=-1, eps=eps)
    qt = ops.l2_normalize(ops.reshape(t_const, (n, c, h * w)), axis=-1, eps=eps)
    return ops.mean(ops.l2_norm(qs - qt, axis=-1))


def cross_entropy(logits: Tensor, targets, task: str) -> Tensor:
    """Multi-label binary CE (mean over batch and labels) or multiclass CE (mean over batch)."""
    if task == "multilabel_binary":
        return ops.binary_cross_entropy_with_logits(logits, targets)
    if task == "multiclass":
        return ops.softmax_cross_entropy(logits, targets)
    raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def total_loss(logits, targets, student_tap, teacher_tap, beta: float, task: str, eps: float = DEFAULT_EPS):
    """Cross-entropy plus the attention loss weighted by ``1/beta``."""
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    ce = cross_entropy(logits, targets, task)
    at = attention_loss(student_tap, teacher_tap, eps)
    total = ce + at * (1.0 / beta)
    return LossBreakdown(ce=ce, at=at, beta=float(beta), total=total)
