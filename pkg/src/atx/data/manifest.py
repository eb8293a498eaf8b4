"""CSV dataset manifests and U-zero label mapping.

Multi-label header: ``image_path,patient_id,<class_1>,...,<class_K>`` with cell
values ``1`` (positive), ``0`` (negative), ``-1`` (uncertain) or empty
(not mentioned). Multiclass header: ``image_path,patient_id,class_index``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MISSING = None
_TOKENS = {"1": 1, "1.0": 1, "0": 0, "0.0": 0, "-1": -1, "-1.0": -1, "": MISSING}
TASKS = ("multilabel_binary", "multiclass")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    image_path: str
    patient_id: str
    raw_labels: object  # tuple of {1, 0, -1, None} (multi-label) or int (multiclass)


@dataclass
class DatasetManifest:
    records: list
    class_names: list
    task: str
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ManifestError(f"unknown task {self.task!r}")
        seen = set()
        for r in self.records:
            if not r.patient_id:
                raise ManifestError(f"empty patient id for {r.image_path}")
            if r.image_path in seen:
                raise ManifestError(f"duplicate image path {r.image_path}")
            seen.add(r.image_path)

    def __len__(self):
        return len(self.records)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def patients(self) -> list:
        return sorted({r.patient_id for r in self.records})

    def resolve(self, record: Record) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() else self.root / p

    def targets(self, records=None) -> np.ndarray:
        """Training targets: U-zero binary matrix (multi-label) or class indices (multiclass)."""
        records = self.records if records is None else records
        if self.task == "multiclass":
            return np.array([r.raw_labels for r in records], dtype=np.int64)
        if not records:
            return np.zeros((0, self.num_classes), dtype=np.int64)
        return np.stack([map_labels_uzero(r.raw_labels) for r in records])


def map_labels_uzero(raw) -> np.ndarray:
    """Map positive to 1 and negative, uncertain or missing to 0."""
    return np.array([1 if v == 1 else 0 for v in raw], dtype=np.int64)


def load_manifest(path, num_classes: Optional[int] = None) -> DatasetManifest:
    """Parse a manifest strictly; errors name the offending line."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ManifestError(f"{path}: empty file (missing header)") from None
        if header[:2] != ["image_path", "patient_id"] or len(header) < 3:
            raise ManifestError(f"{path}: header must start with image_path,patient_id and name label columns")
        multiclass = header[2:] == ["class_index"]
        records = []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            image_path, patient_id = row[0].strip(), row[1].strip()
            if not image_path or not patient_id:
                raise ManifestError(f"{path}:{lineno}: empty image path or patient id")
            if image_path in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate image path {image_path}")
            seen.add(image_path)
            if multiclass:
                tok = row[2].strip()
                if not tok.isdigit():
                    raise ManifestError(f"{path}:{lineno}: class_index must be a non-negative integer, got {tok!r}")
                labels = int(tok)
                if num_classes is not None and labels >= num_classes:
                    raise ManifestError(f"{path}:{lineno}: class_index {labels} >= {num_classes}")
            else:
                labels = []
                for tok in row[2:]:
                    tok = tok.strip()
                    if tok not in _TOKENS:
                        raise ManifestError(f"{path}:{lineno}: invalid label token {tok!r}")
                    labels.append(_TOKENS[tok])
                labels = tuple(labels)
            records.append(Record(image_path, patient_id, labels))
    if multiclass:
        k = num_classes if num_classes is not None else (max((r.raw_labels for r in records), default=-1) + 1)
        class_names = [f"class_{i}" for i in range(max(k, 0))]
        task = "multiclass"
    else:
        class_names = header[2:]
        task = "multilabel_binary"
    return DatasetManifest(records=records, class_names=class_names, task=task, root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if manifest.task == "multiclass":
            w.writerow(["image_path", "patient_id", "class_index"])
            for r in manifest.records:
                w.writerow([r.image_path, r.patient_id, int(r.raw_labels)])
        else:
            w.writerow(["image_path", "patient_id", *manifest.class_names])
            for r in manifest.records:
                w.writerow([r.image_path, r.patient_id, *("" if v is None else v for v in r.raw_labels)])
    return path
