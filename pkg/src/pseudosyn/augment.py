"""Declarative image augmentation pipelines.

Two pipelines are provided. ``baseline`` covers geometric jitter plus RGB
shift and brightness/contrast; ``extended`` swaps the RGB shift for blur,
median blur, downscaling and three non-rigid distortions. Every random draw
comes from a ``numpy.random.Generator`` seeded per call, so identical
``(spec, image, seed)`` triples give identical outputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

BASELINE_STEPS = (
    "resize",
    "random_crop",
    "vertical_flip",
    "horizontal_flip",
    "shift_scale_rotate",
    "rgb_shift",
    "random_brightness_contrast",
    "normalize",
)
EXTENDED_STEPS = (
    "resize",
    "random_crop",
    "vertical_flip",
    "horizontal_flip",
    "shift_scale_rotate",
    "random_brightness_contrast",
    "blur",
    "median_blur",
    "downscale",
    "elastic_transform",
    "optical_distortion",
    "grid_distortion",
    "normalize",
)

# Magnitudes are not part of the published recipe; these follow common practice.
DEFAULT_PARAMS = {
    "resize": {"height": 256, "width": 256},
    "random_crop": {"height": 224, "width": 224},
    "vertical_flip": {"p": 0.5},
    "horizontal_flip": {"p": 0.5},
    "shift_scale_rotate": {"p": 0.5, "shift_limit": 0.0625, "scale_limit": 0.1, "rotate_limit": 45},
    "rgb_shift": {"p": 0.5, "r_shift_limit": 20, "g_shift_limit": 20, "b_shift_limit": 20},
    "random_brightness_contrast": {"p": 0.5, "brightness_limit": 0.2, "contrast_limit": 0.2},
    "blur": {"p": 0.3, "blur_limit": [3, 7]},
    "median_blur": {"p": 0.3, "blur_limit": [3, 7]},
    "downscale": {"p": 0.3, "scale_min": 0.25, "scale_max": 0.5},
    "elastic_transform": {"p": 0.3, "alpha": 34.0, "sigma": 4.0},
    "optical_distortion": {"p": 0.3, "distort_limit": 0.05, "shift_limit": 0.05},
    "grid_distortion": {"p": 0.3, "num_steps": 5, "distort_limit": 0.3},
    "normalize": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD), "max_pixel_value": 255.0},
}


class AugmentationError(ValueError):
    pass


@dataclass
class AugmentationStep:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class AugmentationSpec:
    kind: str
    steps: list[AugmentationStep]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.steps]

    @property
    def output_size(self) -> tuple[int, int]:
        crop = self.step("random_crop").params
        return int(crop["height"]), int(crop["width"])

    def step(self, name: str) -> AugmentationStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "steps": [{"name": s.name, **s.params} for s in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentationSpec":
        steps = []
        for item in data["steps"]:
            item = dict(item)
            name = item.pop("name")
            if name not in _TRANSFORMS:
                raise AugmentationError(f"unknown transform {name!r}")
            steps.append(AugmentationStep(name, item))
        spec = cls(data["kind"], steps)
        _validate(spec)
        return spec

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    @classmethod
    def load(cls, path) -> "AugmentationSpec":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def build_augmentation(kind: str = "baseline", image_size: int = 224, **overrides) -> AugmentationSpec:
    """Build the ``baseline`` or ``extended`` pipeline for ``image_size`` output.

    ``overrides`` maps a step name to a dict of parameters that replace the
    defaults for that step.
    """
    if kind == "baseline":
        names = BASELINE_STEPS
    elif kind == "extended":
        names = EXTENDED_STEPS
    else:
        raise AugmentationError(f"unknown augmentation kind {kind!r}")
    steps = []
    for name in names:
        params = copy.deepcopy(DEFAULT_PARAMS[name])
        if name == "resize":
            params.update(height=image_size * 8 // 7, width=image_size * 8 // 7)
        elif name == "random_crop":
            params.update(height=image_size, width=image_size)
        params.update(overrides.get(name, {}))
        steps.append(AugmentationStep(name, params))
    spec = AugmentationSpec(kind, steps)
    _validate(spec)
    return spec


def _validate(spec: AugmentationSpec) -> None:
    names = spec.names
    if names[:2] != ["resize", "random_crop"] or names[-1] != "normalize":
        raise AugmentationError("pipeline must start with resize, random_crop and end with normalize")
    resize, crop = spec.steps[0].params, spec.steps[1].params
    if crop["height"] > resize["height"] or crop["width"] > resize["width"]:
        raise AugmentationError("crop larger than resized frame")


def _check_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise AugmentationError(f"expected an HxWx3 image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise AugmentationError(f"expected uint8 pixels, got {image.dtype}")
    return image


def apply_augmentation(spec: AugmentationSpec, image, seed: int) -> np.ndarray:
    """Run ``spec`` on an 8-bit RGB image; returns a float32 HxWx3 array."""
    image = _check_image(image)
    rng = np.random.default_rng(seed)
    out = image
    for step in spec.steps:
        p = step.params.get("p", 1.0)
        # always consume the draw so later steps see the same stream
        fire = rng.random() < p
        if fire:
            out = _TRANSFORMS[step.name](out, rng, **{k: v for k, v in step.params.items() if k != "p"})
    return out


def preprocess(image, image_size: int = 224, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """Deterministic inference-time transform: resize then normalize."""
    image = _check_image(image)
    out = _resize(image, None, height=image_size, width=image_size)
    return _normalize(out, None, mean=mean, std=std)


# --- transforms -----------------------------------------------------------
# Each takes (image, rng, **params); intermediate images stay uint8.


def _resize(img, rng, height, width):
    if img.shape[:2] == (height, width):
        return img.copy()
    return cv2.resize(img, (width, height), interpolation=cv2.INTER_LINEAR)


def _random_crop(img, rng, height, width):
    h, w = img.shape[:2]
    if height > h or width > w:
        raise AugmentationError("crop larger than image")
    y = int(rng.integers(0, h - height + 1))
    x = int(rng.integers(0, w - width + 1))
    return img[y : y + height, x : x + width].copy()


def _vflip(img, rng):
    return img[::-1].copy()


def _hflip(img, rng):
    return img[:, ::-1].copy()


def _shift_scale_rotate(img, rng, shift_limit, scale_limit, rotate_limit):
    h, w = img.shape[:2]
    angle = rng.uniform(-rotate_limit, rotate_limit)
    scale = 1.0 + rng.uniform(-scale_limit, scale_limit)
    dx, dy = rng.uniform(-shift_limit, shift_limit, size=2)
    matrix = cv2.getRotationMatrix2D((w / 2, h / 2), angle, scale)
    matrix[0, 2] += dx * w
    matrix[1, 2] += dy * h
    return cv2.warpAffine(img, matrix, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101)


def _rgb_shift(img, rng, r_shift_limit, g_shift_limit, b_shift_limit):
    shift = np.array(
        [rng.uniform(-lim, lim) for lim in (r_shift_limit, g_shift_limit, b_shift_limit)], dtype=np.float32
    )
    return np.clip(img.astype(np.float32) + shift, 0, 255).astype(np.uint8)


def _brightness_contrast(img, rng, brightness_limit, contrast_limit):
    alpha = 1.0 + rng.uniform(-contrast_limit, contrast_limit)
    beta = rng.uniform(-brightness_limit, brightness_limit) * 255.0
    return np.clip(img.astype(np.float32) * alpha + beta, 0, 255).astype(np.uint8)


def _odd_kernel(rng, blur_limit):
    lo, hi = blur_limit
    choices = [k for k in range(lo, hi + 1) if k % 2 == 1]
    return int(rng.choice(choices))


def _blur(img, rng, blur_limit):
    k = _odd_kernel(rng, blur_limit)
    return cv2.blur(img, (k, k), borderType=cv2.BORDER_REFLECT_101)


def _median_blur(img, rng, blur_limit):
    k = _odd_kernel(rng, blur_limit)
    return cv2.medianBlur(np.ascontiguousarray(img), k)


def _downscale(img, rng, scale_min, scale_max):
    h, w = img.shape[:2]
    scale = rng.uniform(scale_min, scale_max)
    small = cv2.resize(img, (max(1, int(w * scale)), max(1, int(h * scale))), interpolation=cv2.INTER_NEAREST)
    return cv2.resize(small, (w, h), interpolation=cv2.INTER_NEAREST)


def _remap(img, map_x, map_y):
    return cv2.remap(
        img,
        map_x.astype(np.float32),
        map_y.astype(np.float32),
        interpolation=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REFLECT_101,
    )


def _elastic(img, rng, alpha, sigma):
    h, w = img.shape[:2]
    dx = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    dy = gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return _remap(img, xs + dx, ys + dy)


def _optical(img, rng, distort_limit, shift_limit):
    h, w = img.shape[:2]
    k = rng.uniform(-distort_limit, distort_limit)
    cx = w / 2 + rng.uniform(-shift_limit, shift_limit) * w
    cy = h / 2 + rng.uniform(-shift_limit, shift_limit) * h
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    nx, ny = (xs - cx) / w, (ys - cy) / h
    factor = 1.0 + k * (nx**2 + ny**2) * 4
    return _remap(img, cx + nx * factor * w, cy + ny * factor * h)


def _grid_axis(rng, size, num_steps, distort_limit):
    step = size / num_steps
    knots = np.arange(num_steps + 1) * step
    lengths = step * (1.0 + rng.uniform(-distort_limit, distort_limit, num_steps))
    warped = np.concatenate([[0.0], np.cumsum(lengths)])
    warped *= (size - 1) / warped[-1]
    knots *= (size - 1) / knots[-1]
    return np.interp(np.arange(size), knots, warped)


def _grid(img, rng, num_steps, distort_limit):
    h, w = img.shape[:2]
    xs = _grid_axis(rng, w, num_steps, distort_limit)
    ys = _grid_axis(rng, h, num_steps, distort_limit)
    map_x, map_y = np.meshgrid(xs, ys)
    return _remap(img, map_x, map_y)


def _normalize(img, rng, mean, std, max_pixel_value=255.0):
    mean = np.asarray(mean, dtype=np.float32) * max_pixel_value
    std = np.asarray(std, dtype=np.float32) * max_pixel_value
    return ((img.astype(np.float32) - mean) / std).astype(np.float32)


_TRANSFORMS = {
    "resize": _resize,
    "random_crop": _random_crop,
    "vertical_flip": _vflip,
    "horizontal_flip": _hflip,
    "shift_scale_rotate": _shift_scale_rotate,
    "rgb_shift": _rgb_shift,
    "random_brightness_contrast": _brightness_contrast,
    "blur": _blur,
    "median_blur": _median_blur,
    "downscale": _downscale,
    "elastic_transform": _elastic,
    "optical_distortion": _optical,
    "grid_distortion": _grid,
    "normalize": _normalize,
}
