"""Adam, the step-halving learning-rate schedule, and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ops
from .attention import cross_entropy, total_loss
from .checkpoint import save_checkpoint
from .data.augment import AugmentConfig
from .data.dataset import ImageDataset
from .data.split import SplitAssignment
from .metrics import evaluate_predictions
from .models import DenseNet, forward_with_taps, freeze_layers, parse_freeze_policy
from .tensor import no_grad

logger = logging.getLogger(__name__)

MODES = ("transfer_learning", "attention_transfer")
SELECTION_METRICS = ("mean_multilabel_auc", "weighted_f1")
EPOCH_LOG_COLUMNS = ("epoch", "lr", "ce", "at", "total", "val_metric")


class TrainingError(RuntimeError):
    """Training aborted; ``record`` holds the epochs completed so far."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class NonFiniteGradientError(FloatingPointError):
    pass


class TapMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "transfer_learning"
    beta: Optional[float] = None
    base_lr: float = 5e-5
    lr_halving_period_epochs: int = 16
    max_epochs: int = 128
    batch_size: int = 32
    seed: int = 0
    freeze_policy: str = "all_trainable"
    selection_metric: str = "mean_multilabel_auc"
    repetitions: int = 3
    image_size: int = 256
    augment: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if (self.beta is not None) != (self.mode == "attention_transfer"):
            raise ValueError("beta is required for attention_transfer and only allowed in that mode")
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be > 0")
        for name in ("lr_halving_period_epochs", "max_epochs", "batch_size", "repetitions", "image_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"selection_metric must be one of {SELECTION_METRICS}")
        parse_freeze_policy(self.freeze_policy)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def lr_schedule(epoch: int, base_lr: float = 5e-5, period: int = 16) -> float:
    """Step decay: halve the learning rate every ``period`` epochs."""
    if epoch < 0 or period < 1:
        raise ValueError("epoch must be >= 0 and period >= 1")
    return base_lr * 0.5 ** (epoch // period)


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params):
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None) -> AdamState:
    """One bias-corrected Adam update, in place on ``params[i].data``.

    A ``None`` gradient leaves that parameter and its moments untouched.
    """
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    for i, g in enumerate(grads):
        if g is not None and not np.isfinite(g).all():
            name = names[i] if names else f"#{i}"
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if m.shape != p.shape:
            raise ValueError("moment buffer shape mismatch")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


@dataclass
class EpochLog:
    epoch: int
    lr: float
    ce: float
    at: float
    total: float
    val_metric: float
    val_auc: float = float("nan")
    val_f1: Optional[float] = None
    checkpoints: list = field(default_factory=list)


@dataclass
class RunRecord:
    config: dict
    config_hash: str
    selection_metric: str
    epochs: list = field(default_factory=list)
    steps: list = field(default_factory=list)  # (epoch, ce, at, beta, total) per optimizer step
    checkpoints: list = field(default_factory=list)
    wall_clock: float = 0.0
    aborted_epoch: Optional[int] = None
    best_epoch: Optional[int] = None
    test_report: Optional[dict] = None

    @property
    def val_metrics(self):
        return [e.val_metric for e in self.epochs]

    def write_epoch_log(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EPOCH_LOG_COLUMNS)
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.lr), repr(e.ce), repr(e.at), repr(e.total), repr(e.val_metric)])
        return path

    def summary(self) -> dict:
        d = {
            "config": self.config,
            "config_hash": self.config_hash,
            "selection_metric": self.selection_metric,
            "epochs": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_metric": self.epochs[self.best_epoch].val_metric if self.best_epoch is not None else None,
            "val_auc": [e.val_auc for e in self.epochs],
            "val_f1": [e.val_f1 for e in self.epochs],
            "checkpoints": sorted({Path(c).name for c in self.checkpoints}),
            "aborted_epoch": self.aborted_epoch,
            "test_report": self.test_report,
        }
        return d

    def write_summary(self, path) -> Path:
        """Deterministic for a fixed seed; wall-clock time goes to ``timing.json`` beside it."""
        path = Path(path)
        path.write_text(json.dumps(_jsonable(self.summary()), indent=2, sort_keys=True))
        (path.parent / "timing.json").write_text(json.dumps({"wall_clock_seconds": self.wall_clock}) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def read_epoch_log(path) -> list:
    """Parse an epoch log back into dict rows; epochs must run contiguously from 0."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != EPOCH_LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for i, row in enumerate(reader):
            epoch = int(row["epoch"])
            if epoch != i:
                raise ValueError(f"{path}: epochs not contiguous (expected {i}, found {epoch})")
            rows.append({k: (epoch if k == "epoch" else float(row[k])) for k in EPOCH_LOG_COLUMNS})
    return rows


def select_best(run: RunRecord, criterion: Optional[str] = None):
    """Epoch with the highest validation criterion (earliest on ties) and its best checkpoint, if any."""
    criterion = criterion or run.selection_metric
    if criterion == "mean_multilabel_auc":
        values = [e.val_auc for e in run.epochs]
    elif criterion == "weighted_f1":
        values = [np.nan if e.val_f1 is None else e.val_f1 for e in run.epochs]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0 or np.isnan(vals).all():
        raise ValueError("no epoch has a finite validation metric")
    best = int(np.flatnonzero(vals == np.nanmax(vals))[0])
    ckpt = None
    for e in run.epochs[: best + 1]:
        for c in e.checkpoints:
            if Path(c).name.startswith("best"):
                ckpt = c
    return best, ckpt


def predict(model: DenseNet, dataset: ImageDataset, batch_size: int = 64) -> np.ndarray:
    """Sigmoid scores (multi-label) or softmax probabilities (multiclass) in eval mode."""
    was_training = model.training
    model.eval()
    outs = []
    with no_grad():
        for x, _ in dataset.batches(batch_size, "eval"):
            logits = model(x)
            act = ops.sigmoid(logits) if model.config.task == "multilabel_binary" else ops.softmax(logits)
            outs.append(act.data.astype(np.float64))
    model.train(was_training)
    return np.concatenate(outs) if outs else np.zeros((0, model.config.num_classes))


def evaluate(model: DenseNet, dataset: ImageDataset, batch_size: int = 64):
    return evaluate_predictions(predict(model, dataset, batch_size), dataset.targets, model.config.task, model.config.num_classes)


def _metric_value(report, selection_metric):
    if selection_metric == "weighted_f1":
        return report.weighted_f1 if report.weighted_f1 is not None else float("nan")
    return report.mean_auc


def check_tap_compatibility(student: DenseNet, teacher: DenseNet, image_size: int):
    t_shape = teacher.tap_shape(image_size)
    s_shape = student.tap_shape(image_size)
    if student.adapter is not None:
        c = student.adapter.proj.weight.shape[0]
        s_shape = (c, *student.adapter.out_hw)
    if s_shape != t_shape:
        raise TapMismatchError(
            f"student tap {student.primary_tap} {s_shape} does not match teacher tap {teacher.primary_tap} {t_shape}; "
            "attach an adapter (atx.models.attach_adapter)"
        )


def train(
    config: TrainConfig,
    student: DenseNet,
    teacher: Optional[DenseNet],
    data: SplitAssignment,
    out_dir=None,
    augment_config: Optional[AugmentConfig] = None,
    datasets: Optional[dict] = None,
    restore_best: bool = True,
) -> RunRecord:
    """Optimize ``student`` on the training split; validate every epoch.

    In attention-transfer mode the loss is cross-entropy plus the attention
    loss against the frozen ``teacher`` weighted by ``1/beta``. With
    ``out_dir`` the epoch log, run summary and ``best``/``last`` checkpoints
    are written there. ``datasets`` may supply prebuilt ``train``/``validation``
    :class:`ImageDataset` objects. With ``restore_best`` the student ends up
    holding the weights of the best validation epoch.
    """
    at_mode = config.mode == "attention_transfer"
    if at_mode != (teacher is not None):
        raise ValueError("a teacher is required in attention_transfer mode and not allowed otherwise")
    if teacher is not None:
        if not teacher.is_frozen or teacher.training:
            raise ValueError("the teacher must be frozen (freeze_layers(teacher, 'frozen')) and in eval mode")
        check_tap_compatibility(student, teacher, config.image_size)
    task = student.config.task
    if data.manifest.task != task or data.manifest.num_classes != student.config.num_classes:
        raise ValueError(
            f"student head ({task}, {student.config.num_classes} classes) does not fit the data "
            f"({data.manifest.task}, {data.manifest.num_classes} classes)"
        )
    if config.selection_metric == "weighted_f1" and task != "multiclass":
        raise ValueError("weighted_f1 selection needs a multiclass head")

    aug = augment_config or AugmentConfig(size=config.image_size)
    if aug.size != config.image_size:
        raise ValueError("augment size and config.image_size differ")
    datasets = datasets or {}
    train_ds = datasets.get("train") or ImageDataset(data.manifest, data.records("train"), aug)
    val_ds = datasets.get("validation") or ImageDataset(data.manifest, data.records("validation"), aug)
    if len(train_ds) < 2:
        raise ValueError("training split needs at least two images")

    freeze_layers(student, config.freeze_policy)
    named = [(n, p) for n, p in student.named_parameters() if p.requires_grad]
    names = [n for n, _ in named]
    params = [p for _, p in named]
    state = AdamState.for_params(params)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    record = RunRecord(config=config.to_dict(), config_hash=config.config_hash(), selection_metric=config.selection_metric)
    best_metric, best_state = -np.inf, None
    train_mode = "train" if config.augment else "eval"
    start = time.perf_counter()

    for epoch in range(config.max_epochs):
        lr = lr_schedule(epoch, config.base_lr, config.lr_halving_period_epochs)
        student.train()
        sums = np.zeros(3)
        n_seen = 0
        for x, y in train_ds.batches(config.batch_size, train_mode, config.seed, epoch, shuffle=True):
            for p in params:
                p.grad = None
            logits, staps = forward_with_taps(student, x)
            if at_mode:
                with no_grad():
                    _, ttaps = forward_with_taps(teacher, x)
                br = total_loss(logits, y, staps[student.primary_tap], ttaps[teacher.primary_tap], config.beta, task)
                loss = br.total
                ce_v, at_v = br.ce.item(), br.at.item()
            else:
                loss = cross_entropy(logits, y, task)
                ce_v, at_v = loss.item(), float("nan")
            total_v = loss.item()
            if not math.isfinite(total_v):
                record.aborted_epoch = epoch
                record.wall_clock = time.perf_counter() - start
                raise TrainingError(f"non-finite loss at epoch {epoch}", record)
            record.steps.append((epoch, ce_v, at_v, config.beta, total_v))
            loss.backward()
            grads = [p.grad for p in params]
            if config.weight_decay:
                grads = [None if g is None else g + config.weight_decay * p.data for g, p in zip(grads, params)]
            if config.grad_clip:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads if g is not None))
                if norm > config.grad_clip:
                    grads = [None if g is None else g * (config.grad_clip / norm) for g in grads]
            try:
                adam_step(params, grads, state, lr, config.adam_beta1, config.adam_beta2, config.adam_eps, names)
            except NonFiniteGradientError as exc:
                record.aborted_epoch = epoch
                raise TrainingError(str(exc), record) from exc
            b = len(y)
            sums += b * np.array([ce_v, at_v if at_mode else 0.0, total_v])
            n_seen += b

        report = evaluate(student, val_ds)
        metric = _metric_value(report, config.selection_metric)
        means = sums / max(n_seen, 1)
        log = EpochLog(
            epoch=epoch,
            lr=lr,
            ce=float(means[0]),
            at=float(means[1]) if at_mode else float("nan"),
            total=float(means[2]),
            val_metric=float(metric),
            val_auc=float(report.mean_auc),
            val_f1=report.weighted_f1,
        )
        improved = math.isfinite(metric) and metric > best_metric
        if improved:
            best_metric = metric
            record.best_epoch = epoch
            if restore_best:
                best_state = student.state_dict()
        if out_dir is not None:
            snap = {"val_metric": metric, "val_auc": report.mean_auc, "val_f1": report.weighted_f1}
            log.checkpoints.append(str(save_checkpoint(out_dir / "last.ckpt", student, epoch, snap)))
            if improved:
                log.checkpoints.append(str(save_checkpoint(out_dir / "best.ckpt", student, epoch, snap)))
            record.checkpoints.extend(log.checkpoints)
        record.epochs.append(log)
        logger.info("epoch %d lr %.3g ce %.4f total %.4f val %.4f", epoch, lr, log.ce, log.total, metric)
        if out_dir is not None:
            record.write_epoch_log(out_dir / "epochs.csv")

    record.wall_clock = time.perf_counter() - start
    if restore_best and best_state is not None:
        student.load_state_dict(best_state)
    if out_dir is not None:
        record.write_summary(out_dir / "summary.json")
    return record
