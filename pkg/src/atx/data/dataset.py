"""In-memory image datasets feeding the trainer."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..tensor import Tensor
from .augment import AugmentConfig, augment_prepared, decode_image, resize_center_crop, sample_rng
from .manifest import DatasetManifest

WORKERS_ENV = "ATX_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = worker_count()
    if n == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


class ImageDataset:
    """Decoded, resized and cropped images for a list of records, plus their targets.

    Decoding happens once; the random part of the augmentation is redrawn per
    epoch from a stream keyed on (seed, epoch, sample index).
    """

    def __init__(self, manifest: DatasetManifest, records, config: AugmentConfig = AugmentConfig()):
        self.manifest = manifest
        self.records = list(records)
        self.config = config
        self.targets = manifest.targets(self.records)
        self.images = _map(
            lambda r: resize_center_crop(decode_image(manifest.resolve(r)), config.size, config.interpolation),
            self.records,
        )
        self._eval_cache = None

    def __len__(self):
        return len(self.records)

    def subset(self, records) -> "ImageDataset":
        """A dataset over some of these records that shares the decoded images."""
        index = {r.image_path: i for i, r in enumerate(self.records)}
        missing = [r.image_path for r in records if r.image_path not in index]
        if missing:
            raise KeyError(f"records not in this dataset: {missing[:3]}")
        sub = object.__new__(ImageDataset)
        sub.manifest, sub.config = self.manifest, self.config
        sub.records = list(records)
        sub.targets = self.manifest.targets(sub.records)
        sub.images = [self.images[index[r.image_path]] for r in sub.records]
        sub._eval_cache = None
        return sub

    def sample(self, index: int, mode: str, seed: int = 0, epoch: int = 0) -> np.ndarray:
        rng = sample_rng(seed, epoch, index) if mode == "train" else None
        return augment_prepared(self.images[index], mode, rng, self.config)

    def eval_array(self) -> np.ndarray:
        if self._eval_cache is None:
            self._eval_cache = np.stack([self.sample(i, "eval") for i in range(len(self))])
        return self._eval_cache

    def batches(self, batch_size: int, mode: str, seed: int = 0, epoch: int = 0, shuffle: bool = False):
        """Yield ``(Tensor batch, targets)``; a trailing batch of one sample is dropped in train mode."""
        order = np.arange(len(self))
        if shuffle:
            order = np.random.default_rng([int(seed), int(epoch), 7919]).permutation(len(self))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if mode == "train" and len(idx) < 2:
                continue
            if mode == "eval":
                x = self.eval_array()[idx]
            else:
                x = np.stack(_map(lambda i: self.sample(int(i), mode, seed, epoch), idx))
            yield Tensor(x), self.targets[idx]
