"""Desk-scale scenarios that exercise the full teacher-student protocol on a CPU.

Two small studies run end to end on synthetic data:

* :func:`directional_run` trains a teacher on a 400-patient corpus, then
  compares transfer-learning and attention-transfer students on a 100-patient
  training subset over several seeds (best validation AUC and late-epoch
  fluctuation).
* :func:`size_trend_run` trains a teacher on a separate source corpus and
  sweeps the student's training-set size, reporting the mean test AUC per
  size for both modes.

Both return plain dicts and leave their run directories under ``work_dir``.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .experiments import (
    ExperimentSpec,
    PreparedData,
    desk_student_arch,
    desk_synthetic_spec,
    desk_teacher_arch,
    desk_train_config,
    late_fluctuation,
    prepare_data,
    run_repetitions,
    size_sweep,
)
from .models import build_densenet_scaled, freeze_layers
from .trainer import TrainConfig, train

TEACHER_SEED = 100
SIZE_TREND_IMAGE = 32


def train_teacher(spec: ExperimentSpec, data: PreparedData, out_dir, epochs: int = 12, seed: int = TEACHER_SEED):
    """Train ``spec.teacher`` on ``data``'s training split; returns ``(frozen teacher, RunRecord)``."""
    teacher = build_densenet_scaled(spec.teacher, seed=seed)
    cfg = TrainConfig(
        base_lr=spec.train.base_lr, lr_halving_period_epochs=max(1, epochs // 2), max_epochs=epochs,
        batch_size=spec.train.batch_size, image_size=spec.train.image_size,
    )
    record = train(
        cfg, teacher, None, data.split, out_dir=out_dir,
        augment_config=data.augment, datasets={"train": data.train, "validation": data.validation},
    )
    freeze_layers(teacher, "frozen")
    teacher.eval()
    return teacher, record


def directional_spec(**train_overrides) -> ExperimentSpec:
    return ExperimentSpec(
        name="directional",
        synthetic=desk_synthetic_spec(),
        split=(0.6, 0.2, 0.2),
        student=desk_student_arch(),
        teacher=desk_teacher_arch(),
        train=desk_train_config(**train_overrides),
    )


def directional_run(work_dir, seeds=(0, 1, 2), subset_patients: int = 100, beta: float = 1.0, teacher=None) -> dict:
    """Teacher on the full training split; TL and AT students on a ``subset_patients`` subset."""
    work_dir = Path(work_dir)
    spec = directional_spec()
    data = prepare_data(spec, work_dir)
    teacher_auc = None
    if teacher is None:
        teacher, record = train_teacher(spec, data, work_dir / "teacher")
        teacher_auc = max(record.val_metrics)

    def subset(seed):
        return data.split.subsample_train(subset_patients, seed)

    out = {"teacher_val_auc": teacher_auc, "seeds": list(seeds)}
    for mode, b in (("transfer_learning", None), ("attention_transfer", beta)):
        cfg = dataclasses.replace(spec.train, mode=mode, beta=b)
        summary = run_repetitions(cfg, spec.student, data, teacher if b is not None else None, work_dir / mode, seeds, subset)
        out[mode] = {
            "best_val": [r.best_val for r in summary["results"]],
            "fluctuation": [late_fluctuation(r.record.val_metrics) for r in summary["results"]],
            "run_dir": str(work_dir / mode),
        }
    (work_dir / "directional.json").write_text(json.dumps(out, indent=2))
    out["teacher"] = teacher
    return out


def size_trend_specs(sizes=(50, 200, 800)):
    """Target and source corpora for the size sweep (32px, one image per patient, larger lesions)."""
    corpus = dict(image_size=SIZE_TREND_IMAGE, images_per_patient=1, blob_radius=0.15)
    train_cfg = desk_train_config(image_size=SIZE_TREND_IMAGE)
    student = dataclasses.replace(desk_student_arch(), tap_size=2)
    teacher = dataclasses.replace(desk_teacher_arch(), tap_size=2)
    target = ExperimentSpec(
        name="size-trend",
        synthetic=desk_synthetic_spec(n_patients=max(sizes) + 500, **corpus),
        split=(max(sizes), 250, 250),
        student=student,
        teacher=teacher,
        train=train_cfg,
        sizes=tuple(sizes),
        sweep_beta=1.0,
    )
    source = dataclasses.replace(
        target, name="size-trend-source", synthetic=desk_synthetic_spec(n_patients=400, **corpus),
        synthetic_seed=99, split=(300, 80, 20),
    )
    return target, source


def size_trend_run(work_dir, seeds=(0, 1, 2), sizes=(50, 200, 800)) -> dict:
    """Size sweep for both modes; the teacher learns from a separate source corpus."""
    work_dir = Path(work_dir)
    target, source = size_trend_specs(sizes)
    teacher, record = train_teacher(source, prepare_data(source, work_dir / "source"), work_dir / "source" / "teacher")
    data = prepare_data(target, work_dir)
    curves = size_sweep(target, data, teacher, work_dir / "sweep", seeds)
    out = {
        "teacher_val_auc": max(record.val_metrics),
        "curves": {mode: [{"size": s, "mean": m, "ci": c, "per_seed": v} for s, m, c, v in rows] for mode, rows in curves.items()},
    }
    (work_dir / "size_trend.json").write_text(json.dumps(out, indent=2))
    return out
