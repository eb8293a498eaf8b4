"""Seeded synthetic image corpora standing in for chest X-ray / fundus datasets.

Each patient has a smooth "anatomy" background shared by all of their images.
Class evidence is a set of Gaussian-windowed gratings ("lesions") whose
spatial frequency depends on the class and whose mean brightness carries a
weaker, linearly detectable cue. In multi-label corpora each finding's
lesions sit in their own horizontal band of the image. ``domain_shift`` in [0, 1] raises the grating
frequencies, tilts their orientations and applies a gamma curve, emulating a
source domain that differs from the target.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..metrics import mean_multilabel_auc
from .manifest import DatasetManifest, Record, write_manifest

logger = logging.getLogger(__name__)

MIN_PROBE_AUC = 0.6


@dataclass(frozen=True)
class SyntheticSpec:
    n_patients: int = 200
    images_per_patient: int = 2
    image_size: int = 64
    n_classes: int = 2
    task: str = "multiclass"
    class_frequencies: tuple = ()  # cycles per pixel, one per class; defaults spread over [0.07, 0.25]
    blob_count: int = 3
    blob_radius: float = 0.09  # fraction of the image side
    signal_amplitude: float = 0.22
    brightness_cue: float = 0.06
    noise_level: float = 0.08
    domain_shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "class_frequencies", tuple(float(f) for f in self.class_frequencies))
        if self.n_patients < 1 or self.images_per_patient < 1 or self.image_size < 8:
            raise ValueError("n_patients, images_per_patient must be >= 1 and image_size >= 8")
        if self.task not in ("multiclass", "multilabel_binary"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "multiclass" and self.n_classes < 2:
            raise ValueError("multiclass corpora need n_classes >= 2")
        if self.class_frequencies and len(self.class_frequencies) != self.n_classes:
            raise ValueError("class_frequencies needs one entry per class")
        if not 0.0 <= self.domain_shift <= 1.0:
            raise ValueError("domain_shift must lie in [0, 1]")

    def frequencies(self) -> np.ndarray:
        if self.class_frequencies:
            return np.asarray(self.class_frequencies)
        return np.linspace(0.07, 0.25, self.n_classes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_frequencies"] = list(self.class_frequencies)
        return d


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    manifest_path: Path
    probe_auc: float
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)


def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.35 + 0.1 * rng.random() + 0.08 * (yy - 0.5)
    for _ in range(3):
        cy, cx = rng.uniform(0.2, 0.8, 2)
        s = rng.uniform(0.15, 0.35)
        img += rng.uniform(-0.08, 0.08) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    return img


def _lesion(rng, size, freq, spec: SyntheticSpec, cue: float, band=(0.2, 0.8)):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(band[0] * size, band[1] * size)
    cx = rng.uniform(0.2 * size, 0.8 * size)
    r = spec.blob_radius * size * rng.uniform(0.8, 1.25)
    theta = rng.uniform(0, np.pi) * (1 - spec.domain_shift) + spec.domain_shift * rng.normal(np.pi / 4, 0.2)
    phase = rng.uniform(0, 2 * np.pi)
    envelope = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    grating = np.cos(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    return envelope * (spec.signal_amplitude * grating + cue)


def render_image(rng, background, present, spec: SyntheticSpec) -> np.ndarray:
    """One uint8 image: patient background + lesions of every present class + noise."""
    size = spec.image_size
    freqs = spec.frequencies() * (1.0 + 0.5 * spec.domain_shift)
    jitter = rng.integers(-2, 3, size=2)
    img = np.roll(background, tuple(jitter), axis=(0, 1)).copy()
    for k in present:
        if spec.task == "multiclass":
            cue = spec.brightness_cue * k / (spec.n_classes - 1)
            band = (0.2, 0.8)
        else:
            # each finding has its own typical vertical location
            cue = spec.brightness_cue
            band = (0.2 + 0.6 * k / spec.n_classes, 0.2 + 0.6 * (k + 1) / spec.n_classes)
        for _ in range(spec.blob_count):
            img += _lesion(rng, size, freqs[k], spec, cue, band)
    img += rng.normal(0.0, spec.noise_level, img.shape)
    img = np.clip(img, 0.0, 1.0) ** (1.0 + spec.domain_shift)
    return np.round(img * 255).astype(np.uint8)


def generate_images(spec: SyntheticSpec, seed: int):
    """Yield ``(patient_id, index, image, labels)`` deterministically for ``seed``."""
    for p in range(spec.n_patients):
        prng = np.random.default_rng([int(seed), p])
        background = _background(prng, spec.image_size)
        for i in range(spec.images_per_patient):
            if spec.task == "multiclass":
                label = int(prng.integers(spec.n_classes))
                present = [label]
            else:
                flags = prng.random(spec.n_classes) < 0.5
                present = list(np.flatnonzero(flags))
                # absent findings are reported as negative, uncertain or unmentioned
                label = tuple(1 if f else [0, -1, None][int(prng.integers(3))] for f in flags)
            yield f"p{p:05d}", i, render_image(prng, background, present, spec), label


def linear_probe_auc(images: np.ndarray, targets: np.ndarray, patients, task: str, n_classes: int, seed: int = 0):
    """Ridge-regression probe on 16x16 average-pooled pixels; mean AUC on a held-out 30% of patients."""
    n, h, w = images.shape
    f = 16 if h % 16 == 0 and w % 16 == 0 else 1
    feats = images.reshape(n, f, h // f, f, w // f).mean(axis=(2, 4)).reshape(n, -1) if f > 1 else images.reshape(n, -1)
    feats = (feats - feats.mean(axis=0)) / (feats.std(axis=0) + 1e-8)
    feats = np.hstack([feats, np.ones((n, 1))])
    ids = np.array(sorted(set(patients)))
    np.random.default_rng(seed).shuffle(ids)
    held = set(ids[: max(1, int(0.3 * len(ids)))])
    test = np.array([p in held for p in patients])
    y = np.eye(n_classes)[targets] if task == "multiclass" else targets.astype(np.float64)
    xtr, ytr = feats[~test], y[~test]
    lam = 10.0 * len(xtr)
    coef = np.linalg.solve(xtr.T @ xtr + lam * np.eye(xtr.shape[1]), xtr.T @ ytr)
    _, mean = mean_multilabel_auc(feats[test] @ coef, y[test].astype(np.int64))
    return mean


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir, self_check: bool = True) -> SyntheticDataset:
    """Write PNG images plus ``manifest.csv`` under ``out_dir``.

    With ``self_check`` the generator fits a linear probe on raw pixels and
    raises if its held-out AUC does not exceed 0.6.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records, images, labels, patients = [], [], [], []
    for pid, i, img, label in generate_images(spec, seed):
        rel = f"images/{pid}_{i}.png"
        Image.fromarray(img, mode="L").save(out_dir / rel, optimize=False)
        records.append(Record(rel, pid, label))
        images.append(img.astype(np.float64) / 255.0)
        labels.append(label)
        patients.append(pid)
    if spec.task == "multiclass":
        class_names = [f"class_{k}" for k in range(spec.n_classes)]
    else:
        class_names = [f"finding_{k}" for k in range(spec.n_classes)]
    manifest = DatasetManifest(records=records, class_names=class_names, task=spec.task, root=out_dir)
    path = write_manifest(manifest, out_dir / "manifest.csv")
    probe = float("nan")
    if self_check:
        targets = manifest.targets()
        probe = linear_probe_auc(np.stack(images), targets, patients, spec.task, spec.n_classes, seed)
        if not probe > MIN_PROBE_AUC:
            raise ValueError(f"synthetic class signal too weak: linear probe AUC {probe:.3f} <= {MIN_PROBE_AUC}")
        logger.info("linear probe AUC %.3f", probe)
    return SyntheticDataset(manifest=manifest, manifest_path=path, probe_auc=probe, spec=spec)
