"""Patient-disjoint train/validation/test splitting."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .manifest import DatasetManifest

SPLITS = ("train", "validation", "test")


class SplitError(ValueError):
    pass


@dataclass
class SplitAssignment:
    manifest: DatasetManifest
    train: frozenset
    validation: frozenset
    test: frozenset
    seed: int

    def __post_init__(self):
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise SplitError("a patient appears in more than one split")

    def patients(self, split: str) -> frozenset:
        if split not in SPLITS:
            raise KeyError(split)
        return getattr(self, split)

    def records(self, split: str) -> list:
        ids = self.patients(split)
        return [r for r in self.manifest.records if r.patient_id in ids]

    def sizes(self) -> dict:
        return {s: len(self.records(s)) for s in SPLITS}

    def train_patient_order(self, seed: int) -> list:
        """Training patients in one seeded order; prefixes give nested subsets."""
        order = sorted(self.train)
        np.random.default_rng(seed).shuffle(order)
        return order

    def subsample_train(self, size: int, seed: int, unit: str = "patients") -> "SplitAssignment":
        """Copy with the training split cut down to a prefix of the seeded patient order.

        ``unit='patients'`` keeps exactly ``size`` patients; ``unit='records'``
        keeps whole patients until at least ``size`` records are covered.
        """
        order = self.train_patient_order(seed)
        if unit == "patients":
            if size > len(order):
                raise SplitError(f"requested {size} training patients but only {len(order)} available")
            keep = order[:size]
        elif unit == "records":
            counts = Counter(r.patient_id for r in self.manifest.records)
            total = sum(counts[p] for p in order)
            if size > total:
                raise SplitError(f"requested {size} training records but only {total} available")
            keep, covered = [], 0
            for p in order:
                if covered >= size:
                    break
                keep.append(p)
                covered += counts[p]
        else:
            raise ValueError(f"unknown size unit {unit!r}")
        if size < 1:
            raise SplitError("training subset size must be positive")
        return SplitAssignment(self.manifest, frozenset(keep), self.validation, self.test, self.seed)


def _targets(sizes, total):
    sizes = [float(s) for s in sizes]
    if len(sizes) != 3 or min(sizes) < 0:
        raise SplitError("need three non-negative sizes (train, validation, test)")
    if max(sizes) <= 1.0 and abs(sum(sizes) - 1.0) < 1e-9:
        return [s * total for s in sizes]
    if all(s.is_integer() for s in sizes):
        if sum(sizes) > total:
            raise SplitError(f"requested {int(sum(sizes))} records but the manifest holds {total}")
        return sizes
    raise SplitError(f"sizes must be fractions summing to 1 or integer record counts, got {sizes}")


def split_by_patient(manifest: DatasetManifest, sizes, seed: int) -> SplitAssignment:
    """Shuffle patients with a seeded RNG and fill train, then validation, by record count.

    ``sizes`` are fractions summing to 1 or record counts. A patient is never
    divided between splits, so a split may overshoot its target; the test split
    receives every remaining patient.
    """
    counts = Counter(r.patient_id for r in manifest.records)
    patients = sorted(counts)
    total = sum(counts.values())
    targets = _targets(sizes, total)
    np.random.default_rng(seed).shuffle(patients)
    assigned = {"train": [], "validation": []}
    it = iter(patients)
    for split, target in zip(("train", "validation"), targets[:2]):
        covered = 0
        while covered < target - 1e-9:
            try:
                p = next(it)
            except StopIteration:
                raise SplitError(f"not enough patients to fill the {split} split") from None
            assigned[split].append(p)
            covered += counts[p]
    rest = list(it)
    if targets[2] > 0 and not rest:
        raise SplitError("no patients left for the test split")
    return SplitAssignment(
        manifest,
        frozenset(assigned["train"]),
        frozenset(assigned["validation"]),
        frozenset(rest),
        seed,
    )
