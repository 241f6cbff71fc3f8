"""Reading and writing 8-bit RGB images and binary masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageDecodeError(ValueError):
    pass


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def save_image(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)
    return path


def load_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return (np.asarray(im.convert("L")) > 0).astype(np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeError(f"cannot decode mask {path}: {exc}") from exc


def save_mask(mask: np.ndarray, path) -> Path:
    """Store a 0/1 raster as a 1-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)
    return path


def as_image(obj) -> np.ndarray:
    """Accept a path or an array; return an HxWx3 uint8 array."""
    if isinstance(obj, (str, Path)):
        return load_image(obj)
    image = np.asarray(obj)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8 or image.size == 0:
        raise ImageDecodeError(f"expected an HxWx3 uint8 image, got {image.dtype} {image.shape}")
    return image
