"""
From manifest to augmented batches
==================================

A synthetic corpus stands in for chest X-rays: each class draws its
"lesions" as gratings of a slightly different frequency. The corpus is
written as PNG files plus a CSV manifest, split by patient, and fed through
the resize, crop, rotate, flip and normalize pipeline.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from atx.data.augment import AugmentConfig, augment, decode_image, sample_rng
from atx.data.manifest import map_labels_uzero
from atx.data.split import split_by_patient
from atx.data.synthetic import SyntheticSpec, generate_synthetic

out = Path(__file__).parent / "out" / "data"
corpus = generate_synthetic(SyntheticSpec(n_patients=120, image_size=64), seed=0, out_dir=out)
print(f"{len(corpus.manifest)} images, linear-probe AUC {corpus.probe_auc:.3f}")

split = split_by_patient(corpus.manifest, (0.6, 0.2, 0.2), seed=0)
print("records per split:", split.sizes())
print("patients shared between train and test:", len(split.train & split.test))

# uncertain, negative and missing findings all count as negative
print("U-zero:", map_labels_uzero([1, -1, 0, None]))

cfg = AugmentConfig(size=64)
image = decode_image(out / corpus.manifest.records[0].image_path)
views = [augment(image, "eval", config=cfg).data]
views += [augment(image, "train", rng=sample_rng(0, epoch, 0), config=cfg).data for epoch in range(3)]

fig, axes = plt.subplots(1, 4, figsize=(8, 2.2))
for ax, v, title in zip(axes, views, ["eval", "epoch 0", "epoch 1", "epoch 2"]):
    ax.imshow(v[0], cmap="gray")
    ax.set_title(title)
    ax.axis("off")
fig.tight_layout()
fig.savefig(out.parent / "augment.png", dpi=100)
print("wrote", out.parent / "augment.png")
