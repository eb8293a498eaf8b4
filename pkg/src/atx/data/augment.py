"""Image decoding and the resize / crop / rotate / flip / normalize stack."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from ..tensor import Tensor, get_default_dtype

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
SUPPORTED_FORMATS = ("PNG", "PPM")  # Pillow reports PGM files as PPM


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentConfig:
    size: int = 256
    max_rotation: float = 15.0
    flip_prob: float = 0.5
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    interpolation: str = "bilinear"

    def value_bounds(self):
        """Lowest and highest normalized value any pixel can take."""
        lo = (0.0 - max(self.mean)) / min(self.std)
        hi = (1.0 - min(self.mean)) / min(self.std)
        return lo, hi


_RESAMPLE = {"bilinear": Image.BILINEAR, "nearest": Image.NEAREST, "bicubic": Image.BICUBIC}


def decode_image(path) -> np.ndarray:
    """Read an 8-bit PNG or PGM file as an H x W x 3 uint8 array (grayscale is replicated)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in SUPPORTED_FORMATS:
                raise ImageDecodeError(f"{path}: unsupported image format {im.format}")
            if im.mode not in ("L", "RGB", "P", "LA", "RGBA"):
                raise ImageDecodeError(f"{path}: unsupported pixel mode {im.mode} (8-bit images only)")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    return arr


def _to_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected an H x W x C image with 1 or 3 channels, got shape {image.shape}")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.dtype != np.uint8:
        raise ValueError("expected an 8-bit image")
    return image


def resize_center_crop(image: np.ndarray, size: int, interpolation: str = "bilinear") -> np.ndarray:
    """Resize the shorter side to ``size`` then center-crop to ``size x size``; returns float32 in [0, 1]."""
    image = _to_rgb(image)
    h, w = image.shape[:2]
    if (h, w) != (size, size):
        scale = size / min(h, w)
        nh, nw = max(size, round(h * scale)), max(size, round(w * scale))
        image = np.asarray(Image.fromarray(image).resize((nw, nh), _RESAMPLE[interpolation]))
        top, left = (nh - size) // 2, (nw - size) // 2
        image = image[top : top + size, left : left + size]
    return image.astype(np.float32) / 255.0


def random_transform(image: np.ndarray, angle: float, flip: bool) -> np.ndarray:
    """Rotate (degrees, zero fill outside the frame) and optionally mirror left-right."""
    if angle != 0.0:
        image = ndimage.rotate(image, angle, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)
        image = np.clip(image, 0.0, 1.0)
    if flip:
        image = image[:, ::-1]
    return image


def normalize(image: np.ndarray, config: AugmentConfig) -> np.ndarray:
    mean = np.asarray(config.mean, dtype=np.float32)
    std = np.asarray(config.std, dtype=np.float32)
    return ((image - mean) / std).transpose(2, 0, 1)


def augment(
    image: np.ndarray,
    mode: str,
    rng: Optional[np.random.Generator] = None,
    config: AugmentConfig = AugmentConfig(),
    angle: Optional[float] = None,
    flip: Optional[bool] = None,
) -> Tensor:
    """Decoded H x W x C uint8 image to a normalized (3, size, size) tensor.

    Eval mode resizes, center-crops and normalizes. Train mode also rotates by
    an angle drawn uniformly from [-max_rotation, max_rotation] and mirrors with
    probability ``flip_prob``; ``angle``/``flip`` override the random draws.
    """
    prepared = resize_center_crop(image, config.size, config.interpolation)
    return Tensor(augment_prepared(prepared, mode, rng, config, angle, flip), dtype=get_default_dtype())


def augment_prepared(prepared, mode, rng=None, config=AugmentConfig(), angle=None, flip=None) -> np.ndarray:
    """Random part of :func:`augment` applied to an already resized and cropped image."""
    if mode == "train":
        if angle is None or flip is None:
            if rng is None:
                raise ValueError("train-mode augmentation needs an rng")
            draw_angle = rng.uniform(-config.max_rotation, config.max_rotation)
            draw_flip = rng.random() < config.flip_prob
            angle = draw_angle if angle is None else angle
            flip = draw_flip if flip is None else flip
        prepared = random_transform(prepared, float(angle), bool(flip))
    elif mode != "eval":
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return np.ascontiguousarray(normalize(prepared, config), dtype=get_default_dtype())


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample stream fixed by (seed, epoch, sample index), independent of worker scheduling."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])
