import math

import numpy as np
import pytest

from atx.models import build_densenet_scaled, freeze_layers
from atx.tensor import Tensor
from atx.trainer import (
    AdamState,
    EpochLog,
    NonFiniteGradientError,
    RunRecord,
    TrainConfig,
    adam_step,
    lr_schedule,
    read_epoch_log,
    select_best,
    train,
)

from conftest import snapshot, tiny_arch, tiny_config


def _adam_oracle(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_matches_scalar_oracle():
    p = Tensor(np.array([1.0, -2.0]), dtype=np.float64)
    state = AdamState.for_params([p])
    history = [[0.5, -3.0], [0.1, 2.0], [-1.0, 0.25]]
    for g in history:
        adam_step([p], [np.array(g)], state, 5e-5)
    expected = [_adam_oracle(1.0, [h[0] for h in history], 5e-5), _adam_oracle(-2.0, [h[1] for h in history], 5e-5)]
    np.testing.assert_allclose(p.data, expected, rtol=0, atol=1e-15)


def test_adam_first_step_moves_by_lr_and_zero_gradient_does_not():
    p = Tensor(np.array([1.0, 1.0]), dtype=np.float64)
    adam_step([p], [np.array([2.0, 0.0])], AdamState.for_params([p]), 5e-5)
    assert p.data[0] == pytest.approx(1.0 - 5e-5, abs=1e-12)
    assert p.data[1] == 1.0


def test_adam_none_gradient_and_non_finite_gradient():
    a, b = Tensor(np.ones(2), dtype=np.float64), Tensor(np.ones(2), dtype=np.float64)
    state = AdamState.for_params([a, b])
    adam_step([a, b], [np.ones(2), None], state, 0.1)
    assert np.all(a.data < 1) and np.all(b.data == 1) and not state.v[1].any()
    with pytest.raises(NonFiniteGradientError, match="w2"):
        adam_step([a, b], [np.ones(2), np.array([np.nan, 0.0])], state, 0.1, names=["w1", "w2"])


def test_lr_schedule_halves_every_period():
    assert lr_schedule(0) == 5e-5
    assert lr_schedule(15) == 5e-5
    assert lr_schedule(16) == 2.5e-5
    assert lr_schedule(47) == 1.25e-5
    assert lr_schedule(48) == 6.25e-6
    assert lr_schedule(9, base_lr=1.0, period=4) == 0.25
    with pytest.raises(ValueError):
        lr_schedule(-1)


def test_train_config_invariants():
    assert TrainConfig().base_lr == 5e-5 and TrainConfig().max_epochs == 128 and TrainConfig().batch_size == 32
    with pytest.raises(ValueError, match="beta"):
        TrainConfig(mode="attention_transfer")
    with pytest.raises(ValueError, match="beta"):
        TrainConfig(beta=10.0)
    with pytest.raises(ValueError, match="beta"):
        TrainConfig(mode="attention_transfer", beta=0.0)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    assert TrainConfig(seed=1).config_hash() != TrainConfig(seed=2).config_hash()


def _record(aucs, f1s=None, metric="mean_multilabel_auc"):
    f1s = f1s or [None] * len(aucs)
    epochs = [EpochLog(i, 1e-3, 0.5, float("nan"), 0.5, a, val_auc=a, val_f1=f) for i, (a, f) in enumerate(zip(aucs, f1s))]
    return RunRecord(config={}, config_hash="x", selection_metric=metric, epochs=epochs)


def test_select_best_takes_earliest_maximum():
    assert select_best(_record([0.6, 0.8, 0.7]))[0] == 1
    assert select_best(_record([0.8, 0.8]))[0] == 0
    assert select_best(_record([float("nan"), 0.55, 0.5]))[0] == 1
    with pytest.raises(ValueError):
        select_best(_record([float("nan")]))


def test_select_best_routes_by_criterion():
    run = _record([0.9, 0.7, 0.8], f1s=[0.2, 0.6, 0.4], metric="weighted_f1")
    assert select_best(run)[0] == 1
    assert select_best(run, "mean_multilabel_auc")[0] == 0
    with pytest.raises(ValueError):
        select_best(run, "accuracy")


def test_two_epoch_run_writes_logs_and_checkpoints(tmp_path, tiny_split, tiny_datasets):
    student = build_densenet_scaled(tiny_arch(), seed=0)
    record = train(tiny_config(), student, None, tiny_split, out_dir=tmp_path, datasets=tiny_datasets)
    assert len(record.epochs) == 2 and record.best_epoch in (0, 1)
    assert (tmp_path / "last.ckpt").exists() and (tmp_path / "best.ckpt").exists()
    assert (tmp_path / "summary.json").exists()
    rows = read_epoch_log(tmp_path / "epochs.csv")
    assert [r["epoch"] for r in rows] == [0, 1]
    for row, e in zip(rows, record.epochs):
        assert row["total"] == e.total and row["val_metric"] == e.val_metric
        assert math.isnan(row["at"])
    best, ckpt = select_best(record)
    assert best == record.best_epoch and ckpt.endswith("best.ckpt")


def test_epoch_log_rejects_gaps(tmp_path):
    path = tmp_path / "epochs.csv"
    path.write_text("epoch,lr,ce,at,total,val_metric\n0,1,1,1,1,0.5\n2,1,1,1,1,0.5\n")
    with pytest.raises(ValueError, match="contiguous"):
        read_epoch_log(path)
    path.write_text("epoch,lr,total\n0,1,1\n")
    with pytest.raises(ValueError, match="columns"):
        read_epoch_log(path)


def test_logged_total_is_ce_plus_at_over_beta(tiny_split, tiny_datasets, tiny_teacher):
    cfg = tiny_config(mode="attention_transfer", beta=3.0, max_epochs=3)
    record = train(cfg, build_densenet_scaled(tiny_arch(), seed=0), tiny_teacher, tiny_split, datasets=tiny_datasets)
    n = len(tiny_datasets["train"])
    per_epoch = n // 8 + (n % 8 > 1)  # a lone trailing sample is dropped
    assert len(record.steps) == 3 * per_epoch
    for epoch, ce, at, beta, total in record.steps:
        assert beta == 3.0 and 0.0 <= at <= 2.0
        assert abs(total - (ce + at / beta)) <= 1e-6


def test_huge_beta_reproduces_transfer_learning(tiny_split, tiny_datasets, tiny_teacher):
    tl = train(tiny_config(max_epochs=3), build_densenet_scaled(tiny_arch(), seed=4), None, tiny_split, datasets=tiny_datasets)
    at_cfg = tiny_config(max_epochs=3, mode="attention_transfer", beta=1e12)
    at = train(at_cfg, build_densenet_scaled(tiny_arch(), seed=4), tiny_teacher, tiny_split, datasets=tiny_datasets)
    for a, b in zip(tl.epochs, at.epochs):
        assert abs(a.val_metric - b.val_metric) <= 1e-6
        assert abs(a.ce - b.ce) <= 1e-6


def test_teacher_must_be_frozen_and_is_left_unchanged(tiny_split, tiny_datasets, tiny_teacher):
    cfg = tiny_config(mode="attention_transfer", beta=1.0)
    before = snapshot(tiny_teacher)
    buffers = {n: np.array(b, copy=True) for n, b in tiny_teacher.named_buffers()}
    train(cfg, build_densenet_scaled(tiny_arch(), seed=0), tiny_teacher, tiny_split, datasets=tiny_datasets)
    for name, value in snapshot(tiny_teacher).items():
        np.testing.assert_array_equal(value, before[name])
    for name, value in tiny_teacher.named_buffers():
        np.testing.assert_array_equal(value, buffers[name])

    loose = build_densenet_scaled(tiny_arch(growth_rate=6), seed=11)
    loose.eval()
    with pytest.raises(ValueError, match="frozen"):
        train(cfg, build_densenet_scaled(tiny_arch(), seed=0), loose, tiny_split, datasets=tiny_datasets)
    with pytest.raises(ValueError, match="teacher"):
        train(tiny_config(), build_densenet_scaled(tiny_arch(), seed=0), tiny_teacher, tiny_split, datasets=tiny_datasets)


def test_tap_mismatch_without_adapter_is_rejected(tiny_split, tiny_datasets):
    from atx.trainer import TapMismatchError

    teacher = build_densenet_scaled(tiny_arch(projection_widths=(12,)), seed=0)
    freeze_layers(teacher, "frozen")
    teacher.eval()
    cfg = tiny_config(mode="attention_transfer", beta=1.0)
    with pytest.raises(TapMismatchError, match="adapter"):
        train(cfg, build_densenet_scaled(tiny_arch(), seed=0), teacher, tiny_split, datasets=tiny_datasets)


def test_same_seed_gives_identical_epoch_logs(tmp_path, tiny_split, tiny_datasets):
    for run in ("a", "b"):
        train(tiny_config(), build_densenet_scaled(tiny_arch(), seed=2), None, tiny_split, out_dir=tmp_path / run, datasets=tiny_datasets)
    assert (tmp_path / "a" / "epochs.csv").read_bytes() == (tmp_path / "b" / "epochs.csv").read_bytes()


def test_head_must_fit_the_data(tiny_split, tiny_datasets):
    sigmoid = build_densenet_scaled(tiny_arch(head="sigmoid_multilabel"), seed=0)
    with pytest.raises(ValueError, match="does not fit"):
        train(tiny_config(), sigmoid, None, tiny_split, datasets=tiny_datasets)
