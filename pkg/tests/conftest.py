import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")  # single-threaded BLAS keeps runs bit-reproducible

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from atx.data.augment import AugmentConfig  # noqa: E402
from atx.data.dataset import ImageDataset  # noqa: E402
from atx.data.split import split_by_patient  # noqa: E402
from atx.data.synthetic import SyntheticSpec, generate_synthetic  # noqa: E402
from atx.models import ArchConfig, build_densenet_scaled, freeze_layers  # noqa: E402
from atx.trainer import TrainConfig  # noqa: E402

ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

TINY_SIZE = 16


def tiny_arch(blocks=(1, 1), **kw):
    base = dict(init_channels=8, growth_rate=4, block_layer_counts=blocks, num_classes=2, projection_widths=(8,), tap_size=2, head="softmax_multiclass")
    base.update(kw)
    return ArchConfig(**base)


def tiny_config(**kw):
    base = dict(base_lr=1e-3, max_epochs=2, batch_size=8, image_size=TINY_SIZE)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    spec = SyntheticSpec(n_patients=30, images_per_patient=1, image_size=TINY_SIZE)
    return generate_synthetic(spec, seed=0, out_dir=tmp_path_factory.mktemp("tiny"), self_check=False)


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return split_by_patient(tiny_corpus.manifest, (0.6, 0.2, 0.2), seed=0)


@pytest.fixture(scope="session")
def tiny_datasets(tiny_split):
    aug = AugmentConfig(size=TINY_SIZE)
    return {s: ImageDataset(tiny_split.manifest, tiny_split.records(s), aug) for s in ("train", "validation", "test")}


@pytest.fixture
def tiny_teacher():
    teacher = build_densenet_scaled(tiny_arch(growth_rate=6), seed=11)
    freeze_layers(teacher, "frozen")
    teacher.eval()
    return teacher


def snapshot(model):
    return {n: np.array(p.data, copy=True) for n, p in model.named_parameters()}


TINY_SPEC = """\
schema_version = 1
name = "tiny"

[dataset]
split = [0.6, 0.2, 0.2]

[dataset.synthetic]
n_patients = 40
image_size = 32
seed = 3

[student]
init_channels = 8
growth_rate = 4
block_layer_counts = [1, 1]
head = "softmax_multiclass"
num_classes = 2
projection_widths = [8]
tap_size = 2

[train]
base_lr = 2e-3
max_epochs = 2
batch_size = 16
image_size = 32
repetitions = 2
"""


def write_spec(path, *edits, text=TINY_SPEC):
    """Write the tiny spec with ``(old, new)`` text substitutions applied."""
    for old, new in edits:
        assert old in text, old
        text = text.replace(old, new)
    path.write_text(text)
    return path
