"""Image preprocessing and random augmentation (numpy/scipy, HxWxC floats in [0, 1])."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentationSpec:
    resize_to: int = 256
    crop_to: int = 224
    random_crop: bool = True
    hflip_prob: float = 0.5
    jitter_range: tuple[float, float] = (0.8, 1.2)
    affine_degrees: tuple[float, float] = (-10.0, 10.0)
    max_translate: float = 0.0625
    affine_scale: tuple[float, float] = (0.8, 1.1)

    def __post_init__(self):
        for name in ("jitter_range", "affine_degrees", "affine_scale"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.crop_to > self.resize_to:
            raise ValueError("crop_to must not exceed resize_to")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must be in [0, 1]")
        if self.max_translate < 0 or self.jitter_range[0] < 0 or self.affine_scale[0] <= 0:
            raise ValueError("augmentation ranges must be non-negative")

    @classmethod
    def identity(cls, resize_to: int, crop_to: int | None = None) -> "AugmentationSpec":
        return cls(resize_to=resize_to, crop_to=crop_to or resize_to, random_crop=False,
                   hflip_prob=0.0, jitter_range=(1.0, 1.0), affine_degrees=(0.0, 0.0),
                   max_translate=0.0, affine_scale=(1.0, 1.0))

    @classmethod
    def desk_scale(cls) -> "AugmentationSpec":
        return cls(resize_to=36, crop_to=32)


def _as_hwc(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image[..., None] if image.ndim == 2 else image


def pad_square(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    if h == w:
        return image
    size = max(h, w)
    top, left = (size - h) // 2, (size - w) // 2
    return np.pad(image, ((top, size - h - top), (left, size - w - left), (0, 0)))


def resize(image: np.ndarray, size: int) -> np.ndarray:
    image = pad_square(_as_hwc(image))
    if image.shape[0] == size:
        return image
    f = size / image.shape[0]
    out = ndimage.zoom(image, (f, f, 1), order=1, mode="nearest", grid_mode=True)
    return out[:size, :size]


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    top, left = (h - size) // 2, (w - size) // 2
    return image[top:top + size, left:left + size]


def preprocess_eval(image: np.ndarray, spec: AugmentationSpec) -> np.ndarray:
    """Deterministic resize + center crop used at evaluation time."""
    return center_crop(resize(image, spec.resize_to), spec.crop_to)


def _affine(image: np.ndarray, degrees: float, scale: float, shift: tuple[float, float]) -> np.ndarray:
    theta = math.radians(degrees)
    # output -> input coordinate map: rotate by -theta and divide by scale, around the center
    inv = np.array([[math.cos(theta), math.sin(theta)],
                    [-math.sin(theta), math.cos(theta)]]) / scale
    center = (np.array(image.shape[:2]) - 1) / 2.0
    offset = center - inv @ (center + np.asarray(shift))
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.affine_transform(image[..., c], inv, offset=offset, order=1,
                                               mode="constant", cval=0.0)
    return out


def augment(image: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Resize, crop, flip, jitter brightness/contrast, random affine, clamp to [0, 1]."""
    img = resize(image, spec.resize_to)
    if spec.random_crop and spec.resize_to > spec.crop_to:
        top = int(rng.integers(0, spec.resize_to - spec.crop_to + 1))
        left = int(rng.integers(0, spec.resize_to - spec.crop_to + 1))
        img = img[top:top + spec.crop_to, left:left + spec.crop_to]
    else:
        img = center_crop(img, spec.crop_to)
    if rng.random() < spec.hflip_prob:
        img = img[:, ::-1]

    brightness = rng.uniform(*spec.jitter_range)
    contrast = rng.uniform(*spec.jitter_range)
    if brightness != 1.0:
        img = img * brightness
    if contrast != 1.0:
        mean = img.mean()
        img = mean + contrast * (img - mean)

    degrees = rng.uniform(*spec.affine_degrees)
    scale = rng.uniform(*spec.affine_scale)
    max_px = spec.max_translate * spec.crop_to
    shift = (rng.uniform(-max_px, max_px), rng.uniform(-max_px, max_px))
    if degrees != 0.0 or scale != 1.0 or shift != (0.0, 0.0):
        img = _affine(img, degrees, scale, shift)
    return np.clip(img, 0.0, 1.0)
