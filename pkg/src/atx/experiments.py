"""Experiment specs and the drivers behind the command line.

A spec is a TOML file with a versioned schema::

    schema_version = 1
    name = "desk"

    [dataset]                 # either manifest = "..." or a [dataset.synthetic] table
    split = [0.6, 0.2, 0.2]   # fractions or record counts
    split_seed = 0

    [dataset.synthetic]       # SyntheticSpec fields plus seed
    n_patients = 400
    seed = 0

    [student]                 # ArchConfig fields
    [teacher]                 # optional; checked against the --teacher checkpoint
    [train]                   # TrainConfig fields
    [augment]                 # optional AugmentConfig fields (size comes from train.image_size)
    [sweep]                   # beta_grid, sizes, size_unit, beta

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import model_from_checkpoint
from .data.augment import AugmentConfig
from .data.dataset import ImageDataset
from .data.manifest import load_manifest
from .data.split import SplitAssignment, split_by_patient
from .data.synthetic import SyntheticSpec, generate_synthetic
from .metrics import MetricReport, confidence_interval
from .models import ArchConfig, DenseNet, attach_adapter, build_densenet_scaled, freeze_layers
from .trainer import RunRecord, TrainConfig, evaluate, read_epoch_log, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_BETA_GRID = (1.0, 20.0, 30.0, 50.0, 60.0, 100.0, 1000.0, 2000.0)
LATE_FRACTION = 0.25
COMPARISON_COLUMNS = (
    "run",
    "selection_metric",
    "repetitions",
    "best_val_mean",
    "best_val_ci",
    "late_fluctuation",
    "test_metric_mean",
    "test_metric_ci",
)


class SpecError(ValueError):
    pass


# -- desk-scale presets -------------------------------------------------------

def desk_teacher_arch(num_classes: int = 2, head: str = "softmax_multiclass") -> ArchConfig:
    """Three-block teacher, about 24k parameters."""
    return ArchConfig(
        init_channels=16, growth_rate=8, block_layer_counts=(2, 2, 2), head=head,
        num_classes=num_classes, projection_widths=(32, 32), tap_size=4,
    )


def desk_student_arch(num_classes: int = 2, head: str = "softmax_multiclass") -> ArchConfig:
    """Two-block student whose tap matches the desk teacher's (32 x 4 x 4)."""
    return ArchConfig(
        init_channels=16, growth_rate=8, block_layer_counts=(2, 2), head=head,
        num_classes=num_classes, projection_widths=(32, 32), tap_size=4,
    )


def desk_synthetic_spec(**overrides) -> SyntheticSpec:
    """Two-class corpus whose classes differ only slightly in grating frequency."""
    base = dict(n_patients=400, image_size=64, class_frequencies=(0.12, 0.16), signal_amplitude=0.12, noise_level=0.12)
    base.update(overrides)
    return SyntheticSpec(**base)


def desk_train_config(**overrides) -> TrainConfig:
    base = dict(base_lr=2e-3, lr_halving_period_epochs=8, max_epochs=20, image_size=64)
    base.update(overrides)
    return TrainConfig(**base)


# -- spec ---------------------------------------------------------------------

def _check_keys(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise SpecError(f"unknown key(s) in {where}: {unknown}; allowed: {sorted(allowed)}")


def _fields(cls):
    return [f.name for f in dataclasses.fields(cls)]


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    manifest: Optional[Path] = None
    num_classes: Optional[int] = None
    synthetic: Optional[SyntheticSpec] = None
    synthetic_seed: int = 0
    split: tuple = (0.6, 0.2, 0.2)
    split_seed: int = 0
    student: ArchConfig = field(default_factory=desk_student_arch)
    teacher: Optional[ArchConfig] = None
    train: TrainConfig = field(default_factory=desk_train_config)
    augment: dict = field(default_factory=dict)
    beta_grid: tuple = DEFAULT_BETA_GRID
    sizes: tuple = ()
    size_unit: str = "patients"
    sweep_beta: Optional[float] = None

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentSpec":
        base_dir = Path(base_dir)
        _check_keys(d, {"schema_version", "name", "dataset", "student", "teacher", "train", "augment", "sweep"}, "spec")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SpecError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
        try:
            return cls._build(d, base_dir)
        except SpecError:
            raise
        except (TypeError, ValueError) as exc:
            raise SpecError(str(exc)) from exc

    @classmethod
    def _build(cls, d, base_dir):
        ds = d.get("dataset")
        if not isinstance(ds, dict):
            raise SpecError("spec needs a [dataset] table")
        _check_keys(ds, {"manifest", "num_classes", "synthetic", "split", "split_seed"}, "[dataset]")
        if ("manifest" in ds) == ("synthetic" in ds):
            raise SpecError("[dataset] needs exactly one of 'manifest' or a [dataset.synthetic] table")
        synthetic, syn_seed, manifest = None, 0, None
        if "synthetic" in ds:
            syn = dict(ds["synthetic"])
            _check_keys(syn, _fields(SyntheticSpec) + ["seed"], "[dataset.synthetic]")
            syn_seed = int(syn.pop("seed", 0))
            synthetic = SyntheticSpec(**syn)
        else:
            manifest = Path(ds["manifest"])
            if not manifest.is_absolute():
                manifest = base_dir / manifest
        if "student" not in d:
            raise SpecError("spec needs a [student] table")
        for section, cls_ in (("student", ArchConfig), ("teacher", ArchConfig), ("train", TrainConfig)):
            if section in d:
                _check_keys(d[section], _fields(cls_), f"[{section}]")
        aug = dict(d.get("augment", {}))
        _check_keys(aug, [f for f in _fields(AugmentConfig) if f != "size"], "[augment]")
        sweep = dict(d.get("sweep", {}))
        _check_keys(sweep, {"beta_grid", "sizes", "size_unit", "beta"}, "[sweep]")
        spec = cls(
            name=str(d.get("name", "experiment")),
            manifest=manifest,
            num_classes=ds.get("num_classes"),
            synthetic=synthetic,
            synthetic_seed=syn_seed,
            split=tuple(ds.get("split", (0.6, 0.2, 0.2))),
            split_seed=int(ds.get("split_seed", 0)),
            student=ArchConfig(**d["student"]),
            teacher=ArchConfig(**d["teacher"]) if "teacher" in d else None,
            train=TrainConfig(**d.get("train", {})),
            augment=aug,
            beta_grid=tuple(float(b) for b in sweep.get("beta_grid", DEFAULT_BETA_GRID)),
            sizes=tuple(int(s) for s in sweep.get("sizes", ())),
            size_unit=sweep.get("size_unit", "patients"),
            sweep_beta=float(sweep["beta"]) if "beta" in sweep else None,
        )
        if spec.size_unit not in ("patients", "records"):
            raise SpecError("sweep.size_unit must be 'patients' or 'records'")
        return spec

    def augment_config(self) -> AugmentConfig:
        kw = dict(self.augment)
        for key in ("mean", "std"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return AugmentConfig(size=self.train.image_size, **kw)


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise SpecError(f"spec file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"{path}: {exc}") from None
    return ExperimentSpec.from_dict(raw, base_dir=path.parent)


# -- data and models ----------------------------------------------------------

@dataclass
class PreparedData:
    split: SplitAssignment
    augment: AugmentConfig
    train: ImageDataset
    validation: ImageDataset
    test: Optional[ImageDataset]

    def train_subset(self, subset: SplitAssignment) -> ImageDataset:
        return self.train.subset(subset.records("train"))


def prepare_data(spec: ExperimentSpec, work_dir) -> PreparedData:
    """Load (or generate under ``work_dir/data``) the corpus, split it by patient and decode it."""
    if spec.synthetic is not None:
        corpus = generate_synthetic(spec.synthetic, spec.synthetic_seed, Path(work_dir) / "data")
        manifest = corpus.manifest
    else:
        manifest = load_manifest(spec.manifest, spec.num_classes)
    if manifest.num_classes != spec.student.num_classes:
        raise SpecError(f"dataset has {manifest.num_classes} classes but the student head has {spec.student.num_classes}")
    split = split_by_patient(manifest, spec.split, spec.split_seed)
    aug = spec.augment_config()
    test_records = split.records("test")
    return PreparedData(
        split=split,
        augment=aug,
        train=ImageDataset(manifest, split.records("train"), aug),
        validation=ImageDataset(manifest, split.records("validation"), aug),
        test=ImageDataset(manifest, test_records, aug) if test_records else None,
    )


def load_teacher(path, expected: Optional[ArchConfig] = None) -> DenseNet:
    """Load a checkpoint as a frozen, eval-mode teacher."""
    teacher = model_from_checkpoint(path)
    if expected is not None and teacher.config != expected:
        raise SpecError(f"teacher checkpoint {path} does not match the spec's [teacher] architecture")
    freeze_layers(teacher, "frozen")
    teacher.eval()
    return teacher


def build_student(arch: ArchConfig, seed: int, teacher: Optional[DenseNet], image_size: int) -> DenseNet:
    student = build_densenet_scaled(arch, seed=seed)
    if teacher is not None:
        adapter = attach_adapter(student, teacher.tap_shape(image_size), image_size, seed=seed)
        if adapter is not None:
            logger.info("attached tap adapter %s -> %s", student.tap_shape(image_size), teacher.tap_shape(image_size))
    return student


# -- single runs and repetitions ------------------------------------------------

def late_fluctuation(values, fraction: float = LATE_FRACTION) -> float:
    """Population std of the validation metric over the final ``fraction`` of epochs (at least one)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no epochs")
    k = max(1, int(math.ceil(fraction * v.size)))
    return float(v[-k:].std())


def _metric_of(report: MetricReport, selection_metric: str) -> float:
    if selection_metric == "weighted_f1":
        return float("nan") if report.weighted_f1 is None else float(report.weighted_f1)
    return float(report.mean_auc)


@dataclass
class RunResult:
    seed: int
    record: RunRecord
    test_report: Optional[MetricReport]
    out_dir: Optional[Path]

    @property
    def best_val(self) -> float:
        return self.record.epochs[self.record.best_epoch].val_metric

    @property
    def test_metric(self) -> float:
        if self.test_report is None:
            return float("nan")
        return _metric_of(self.test_report, self.record.selection_metric)


def run_one(
    config: TrainConfig,
    arch: ArchConfig,
    data: PreparedData,
    teacher: Optional[DenseNet],
    out_dir=None,
    subset: Optional[SplitAssignment] = None,
) -> RunResult:
    """Train one student (seeded by ``config.seed``) and score its best weights on the test split."""
    split = subset or data.split
    train_ds = data.train_subset(subset) if subset is not None else data.train
    student = build_student(arch, config.seed, teacher if config.mode == "attention_transfer" else None, config.image_size)
    record = train(
        config, student, teacher if config.mode == "attention_transfer" else None, split,
        out_dir=out_dir, augment_config=data.augment,
        datasets={"train": train_ds, "validation": data.validation},
    )
    report = evaluate(student, data.test) if data.test is not None else None
    if report is not None:
        record.test_report = report.to_dict()
        if out_dir is not None:
            record.write_summary(Path(out_dir) / "summary.json")
            (Path(out_dir) / "metrics.json").write_text(json.dumps(_clean(report.to_dict()), indent=2, sort_keys=True))
    return RunResult(config.seed, record, report, Path(out_dir) if out_dir is not None else None)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _mean_ci(values):
    v = [x for x in values if x is not None and math.isfinite(x)]
    if not v:
        return float("nan"), float("nan")
    if len(v) == 1:
        return float(v[0]), float("nan")
    return confidence_interval(v)


def run_repetitions(
    config: TrainConfig,
    arch: ArchConfig,
    data: PreparedData,
    teacher: Optional[DenseNet],
    out_dir,
    seeds,
    subset_fn=None,
) -> dict:
    """One run per seed under ``out_dir/rep_<seed>``; writes and returns an aggregate summary.

    ``subset_fn(seed)`` may supply a reduced training split per seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=int(seed))
        subset = subset_fn(seed) if subset_fn is not None else None
        results.append(run_one(cfg, arch, data, teacher, out_dir / f"rep_{seed}", subset))
    summary = aggregate_results(results, config)
    (out_dir / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True))
    (out_dir / "report.txt").write_text(format_report(summary))
    summary["results"] = results
    return summary


def aggregate_results(results, config: TrainConfig) -> dict:
    best = [r.best_val for r in results]
    test = [r.test_metric for r in results]
    reps = []
    for r in results:
        rep = {"seed": r.seed, "best_epoch": r.record.best_epoch, "best_val": r.best_val}
        if r.test_report is not None:
            rep.update(mean_auc=r.test_report.mean_auc, weighted_f1=r.test_report.weighted_f1)
        reps.append(rep)
    return {
        "mode": config.mode,
        "beta": config.beta,
        "selection_metric": config.selection_metric,
        "seeds": [r.seed for r in results],
        "best_val": dict(zip(("mean", "ci"), _mean_ci(best))),
        "test_metric": dict(zip(("mean", "ci"), _mean_ci(test))),
        "late_fluctuation": [late_fluctuation(r.record.val_metrics) for r in results],
        "repetitions": reps,
        "ci_method": "normal approximation (1.96 s / sqrt(n)) over repetitions",
    }


def format_report(summary: dict) -> str:
    lines = [
        f"mode: {summary['mode']}",
        f"beta: {summary['beta']}",
        f"selection_metric: {summary['selection_metric']}",
        f"seeds: {' '.join(str(s) for s in summary['seeds'])}",
        f"best_val: {summary['best_val']['mean']:.6f} +/- {summary['best_val']['ci']:.6f}",
        f"test_metric: {summary['test_metric']['mean']:.6f} +/- {summary['test_metric']['ci']:.6f}",
        f"late_fluctuation: {' '.join(f'{v:.6f}' for v in summary['late_fluctuation'])}",
        f"ci_method: {summary['ci_method']}",
    ]
    return "\n".join(lines) + "\n"


# -- beta search ----------------------------------------------------------------

def pick_beta(table) -> float:
    """Beta with the highest metric; ties go to the smaller beta. ``table`` is ``[(beta, metric), ...]``."""
    rows = [(float(b), float(m)) for b, m in table if m is not None and math.isfinite(m)]
    if not rows:
        raise ValueError("no beta produced a finite validation metric")
    return min(rows, key=lambda r: (-r[1], r[0]))[0]


def beta_search(spec: ExperimentSpec, data: PreparedData, teacher: DenseNet, out_dir, seed: int, grid=None) -> dict:
    """One attention-transfer training per beta; the best validation metric picks beta."""
    grid = tuple(spec.beta_grid if grid is None else grid)
    if not grid:
        raise SpecError("beta grid is empty")
    if any(not b > 0 for b in grid):
        raise SpecError("beta grid values must be > 0")
    out_dir = Path(out_dir)
    table = []
    for beta in sorted(set(float(b) for b in grid)):
        cfg = dataclasses.replace(spec.train, mode="attention_transfer", beta=beta, seed=seed)
        res = run_one(cfg, spec.student, data, teacher, out_dir / f"beta_{beta:g}")
        table.append((beta, res.best_val))
    best = pick_beta(table)
    with open(out_dir / "beta_search.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "val_metric"])
        for beta, metric in table:
            w.writerow([repr(beta), repr(metric)])
    (out_dir / "best_beta.txt").write_text(f"{best!r}\n")
    return {"table": table, "best_beta": best}


# -- size sweep -----------------------------------------------------------------

def size_sweep(
    spec: ExperimentSpec,
    data: PreparedData,
    teacher: Optional[DenseNet],
    out_dir,
    seeds,
    sizes=None,
) -> dict:
    """Train at every size for every seed; subsets nest because each seed reuses one patient order.

    Transfer learning always runs; attention transfer runs when a teacher is
    given, with ``sweep.beta`` (or ``train.beta``). Writes ``curve_<mode>.csv``
    with ``size,metric,ci`` rows (test metric of the best-validation weights).
    """
    sizes = tuple(spec.sizes if sizes is None else sizes)
    if not sizes:
        raise SpecError("size sweep needs a non-empty list of sizes")
    if data.test is None:
        raise SpecError("size sweep reports test metrics; the split has no test patients")
    available = len(data.split.train) if spec.size_unit == "patients" else len(data.split.records("train"))
    too_big = [s for s in sizes if s > available]
    if too_big:
        raise SpecError(f"sizes {too_big} exceed the {available} training {spec.size_unit} available")
    modes = [("transfer_learning", None)]
    if teacher is not None:
        beta = spec.sweep_beta if spec.sweep_beta is not None else spec.train.beta
        if beta is None:
            raise SpecError("attention-transfer size sweep needs sweep.beta or train.beta")
        modes.append(("attention_transfer", beta))
    out_dir = Path(out_dir)
    curves = {}
    for mode, beta in modes:
        rows = []
        for size in sorted(sizes):
            cfg = dataclasses.replace(spec.train, mode=mode, beta=beta)
            summary = run_repetitions(
                cfg, spec.student, data, teacher if beta is not None else None,
                out_dir / mode / f"size_{size}", seeds,
                subset_fn=lambda s, size=size: data.split.subsample_train(size, s, spec.size_unit),
            )
            rows.append((size, summary["test_metric"]["mean"], summary["test_metric"]["ci"], [r.test_metric for r in summary["results"]]))
        write_curve(out_dir / f"curve_{mode}.csv", [(s, m, c) for s, m, c, _ in rows])
        curves[mode] = rows
    plot_size_curves(curves, out_dir / "size_sweep.png")
    return curves


def write_curve(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["size", "metric", "ci"])
        for size, metric, ci in rows:
            w.writerow([int(size), repr(float(metric)), repr(float(ci))])
    return path


def read_curve(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["size", "metric", "ci"]:
            raise ValueError(f"{path}: expected columns size,metric,ci")
        return [(int(r["size"]), float(r["metric"]), float(r["ci"])) for r in reader]


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_size_curves(curves: dict, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode, rows in curves.items():
        sizes = [r[0] for r in rows]
        means = np.array([r[1] for r in rows])
        cis = np.nan_to_num(np.array([r[2] for r in rows]))
        ax.errorbar(sizes, means, yerr=cis, marker="o", capsize=3, label=mode)
    ax.set_xscale("log")
    ax.set_xlabel("training size")
    ax.set_ylabel("test metric")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


# -- comparison -----------------------------------------------------------------

def _run_logs(run_dir: Path):
    """``[(epoch log path, summary dict)]`` for a run directory or a directory of ``rep_*`` runs."""
    if (run_dir / "epochs.csv").exists():
        dirs = [run_dir]
    else:
        dirs = sorted(p for p in run_dir.glob("rep_*") if (p / "epochs.csv").exists())
    if not dirs:
        raise FileNotFoundError(f"{run_dir}: no epochs.csv (or rep_*/epochs.csv) found")
    out = []
    for d in dirs:
        summary_path = d / "summary.json"
        if not summary_path.exists():
            raise FileNotFoundError(f"{summary_path}: missing run summary")
        out.append((d / "epochs.csv", json.loads(summary_path.read_text())))
    return out


def compare_runs(run_dirs, out_dir=None, names=None) -> dict:
    """Aligned validation curves and a mean +/- CI table for two or more run directories.

    Writes ``curves.csv``, ``comparison.csv``, ``comparison.md`` and
    ``curves.png`` into ``out_dir`` when given.
    """
    run_dirs = [Path(d) for d in run_dirs]
    if len(run_dirs) < 2:
        raise ValueError("compare needs at least two run directories")
    names = list(names) if names else _unique_names(run_dirs)
    rows, curves, metric = [], {}, None
    for name, run_dir in zip(names, run_dirs):
        logs = _run_logs(run_dir)
        series, best, test, fluct = [], [], [], []
        for path, summary in logs:
            sel = summary.get("selection_metric")
            if metric is None:
                metric = sel
            elif sel != metric:
                raise ValueError(f"{path.parent}: selection metric {sel!r} differs from {metric!r}")
            entries = read_epoch_log(path)
            if len(entries) != summary.get("epochs"):
                raise ValueError(f"{path}: {len(entries)} epochs logged but the summary records {summary.get('epochs')}")
            vals = [e["val_metric"] for e in entries]
            series.append(vals)
            best.append(max(vals))
            fluct.append(late_fluctuation(vals))
            report = summary.get("test_report")
            if report:
                key = "weighted_f1" if sel == "weighted_f1" else "mean_auc"
                test.append(report.get(key))
        n = max(len(s) for s in series)
        padded = np.full((len(series), n), np.nan)
        for i, s in enumerate(series):
            padded[i, : len(s)] = s
        curves[name] = np.nanmean(padded, axis=0) if len(series) > 1 else padded[0]
        bm, bc = _mean_ci(best)
        tm, tc = _mean_ci(test)
        rows.append({
            "run": name, "selection_metric": metric, "repetitions": len(series),
            "best_val_mean": bm, "best_val_ci": bc, "late_fluctuation": float(np.mean(fluct)),
            "test_metric_mean": tm, "test_metric_ci": tc,
        })
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_curves(out_dir / "curves.csv", curves)
        write_comparison_table(out_dir / "comparison.csv", rows)
        (out_dir / "comparison.md").write_text(comparison_markdown(rows))
        plot_curves(curves, out_dir / "curves.png", metric)
    return {"rows": rows, "curves": curves, "selection_metric": metric}


def _unique_names(dirs):
    names = [d.name or str(d) for d in dirs]
    if len(set(names)) == len(names):
        return names
    return [f"{i}:{n}" for i, n in enumerate(names)]


def write_curves(path, curves: dict) -> Path:
    n = max(len(c) for c in curves.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *curves])
        for e in range(n):
            w.writerow([e, *(repr(float(c[e])) if e < len(c) else "" for c in curves.values())])
    return Path(path)


def write_comparison_table(path, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in COMPARISON_COLUMNS])
    return Path(path)


def read_comparison_table(path) -> list:
    """Parse a table written by :func:`write_comparison_table` back into row dicts."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COMPARISON_COLUMNS:
            raise ValueError(f"{path}: not a comparison table")
        out = []
        for r in reader:
            row = {"run": r["run"], "selection_metric": r["selection_metric"], "repetitions": int(r["repetitions"])}
            for c in COMPARISON_COLUMNS[3:]:
                row[c] = float(r[c])
            out.append(row)
    return out


def comparison_markdown(rows) -> str:
    lines = [
        "| run | reps | best validation | late fluctuation | test |",
        "|---|---|---|---|---|",
    ]
    for r in rows:
        lines.append(
            f"| {r['run']} | {r['repetitions']} | {r['best_val_mean']:.4f} ± {r['best_val_ci']:.4f} "
            f"| {r['late_fluctuation']:.4f} | {r['test_metric_mean']:.4f} ± {r['test_metric_ci']:.4f} |"
        )
    return "\n".join(lines) + "\n"


def plot_curves(curves: dict, path, metric: str) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, c in curves.items():
        ax.plot(np.arange(len(c)), c, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"validation {metric}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)
