"""Binary Canny edge masks used to condition the image synthesis models.

Pipeline: grayscale, Gaussian blur, Sobel gradients, non-maximum
suppression along the gradient direction, then double-threshold hysteresis.
Thresholds are given as percentages; by default they are percentages of the
largest suppressed gradient magnitude (``threshold_mode="max"``), the
alternative ``"percentile"`` reads them as percentiles of the non-zero
suppressed magnitudes.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .catalog import Catalog, Split
from .imageio import ImageDecodeError, as_image, save_mask
from .labels import ClassLabel

logger = logging.getLogger(__name__)

# Gradient sectors of 45 degrees, counter-clockwise from +x in (row, col) steps.
_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
# Relative tolerance under which two magnitudes count as a tie.
_TIE_RTOL = 1e-9

LUMA = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class CannyParams:
    radius: float = 0.0
    sigma: float = 1.0
    low_percent: float = 10.0
    high_percent: float = 30.0
    threshold_mode: str = "max"

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.low_percent <= self.high_percent <= 100:
            raise ValueError("need 0 <= low_percent <= high_percent <= 100")
        if self.threshold_mode not in ("max", "percentile"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")

    @property
    def kernel_radius(self) -> int:
        return int(self.radius) if self.radius > 0 else int(math.ceil(3 * self.sigma))


@dataclass(frozen=True)
class EdgeMask:
    pixels: np.ndarray
    source_id: str | None
    params: CannyParams
    source_class: ClassLabel | None = None

    @property
    def shape(self):
        return self.pixels.shape


def to_gray(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.float64) / (255.0 if image.dtype == np.uint8 else 1.0)
    image = as_image(image)
    return image.astype(np.float64) @ np.array(LUMA) / 255.0


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


def gradients(gray: np.ndarray, params: CannyParams) -> tuple[np.ndarray, np.ndarray]:
    kernel = gaussian_kernel(params.sigma, params.kernel_radius)
    smooth = ndimage.correlate1d(gray, kernel, axis=0, mode="reflect")
    smooth = ndimage.correlate1d(smooth, kernel, axis=1, mode="reflect")
    gx = ndimage.sobel(smooth, axis=1, mode="reflect")
    gy = ndimage.sobel(smooth, axis=0, mode="reflect")
    return gx, gy


def direction_sector(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return np.mod(np.rint(np.arctan2(gy, gx) / (np.pi / 4)).astype(int), 8)


def non_maximum_suppression(mag: np.ndarray, sector: np.ndarray) -> np.ndarray:
    """Keep pixels that peak along their gradient direction.

    On an exact tie the pixel on the dark side of the edge (the one the
    gradient points away from) wins, so a symmetric step edge gives a line
    one pixel wide and the rule rotates with the image.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1)
    tol = _TIE_RTOL * (mag.max() if mag.size else 0.0)
    keep = np.zeros_like(mag, dtype=bool)
    rows, cols = np.mgrid[0:h, 0:w]
    for s, (dy, dx) in enumerate(_OFFSETS):
        sel = sector == s
        if not sel.any():
            continue
        r, c = rows[sel] + 1, cols[sel] + 1
        ahead = padded[r + dy, c + dx]
        behind = padded[r - dy, c - dx]
        m = mag[sel]
        keep[sel] = (m > 0) & (m >= ahead - tol) & (m > behind + tol)
    return keep


def hysteresis(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    """Weak pixels survive when 8-connected (through weak pixels) to a strong one."""
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros_like(weak, dtype=bool)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(labels[strong & weak])] = True
    hit[0] = False
    return hit[labels]


def thresholds(suppressed: np.ndarray, params: CannyParams) -> tuple[float, float]:
    if params.threshold_mode == "max":
        top = suppressed.max()
        return params.low_percent / 100 * top, params.high_percent / 100 * top
    values = suppressed[suppressed > 0]
    low, high = np.percentile(values, [params.low_percent, params.high_percent])
    return float(low), float(high)


def canny(image, params: CannyParams | None = None, source_id: str | None = None, source_class=None) -> EdgeMask:
    params = params or CannyParams()
    gray = to_gray(image)
    if gray.shape[0] < 2 or gray.shape[1] < 2:
        warnings.warn(f"image {gray.shape} too small for edge detection; returning empty mask", stacklevel=2)
        return EdgeMask(np.zeros(gray.shape, np.uint8), source_id, params, source_class)
    gx, gy = gradients(gray, params)
    mag = np.hypot(gx, gy)
    peaks = non_maximum_suppression(mag, direction_sector(gx, gy))
    suppressed = np.where(peaks, mag, 0.0)
    if not peaks.any():
        return EdgeMask(np.zeros(gray.shape, np.uint8), source_id, params, source_class)
    low, high = thresholds(suppressed, params)
    strong = peaks & (suppressed >= high)
    weak = peaks & (suppressed >= low)
    edges = hysteresis(strong, weak)
    cls = ClassLabel.parse(source_class) if source_class is not None else None
    return EdgeMask(edges.astype(np.uint8), source_id, params, cls)


class CannyEdgeDetector(TransformerMixin, BaseEstimator):
    """Stateless transformer: images -> stacked 0/1 edge masks."""

    def __init__(self, radius=0.0, sigma=1.0, low_percent=10.0, high_percent=30.0, threshold_mode="max"):
        self.radius = radius
        self.sigma = sigma
        self.low_percent = low_percent
        self.high_percent = high_percent
        self.threshold_mode = threshold_mode

    @property
    def params_(self) -> CannyParams:
        return CannyParams(self.radius, self.sigma, self.low_percent, self.high_percent, self.threshold_mode)

    def fit(self, X=None, y=None):
        _ = self.params_  # constructing the params validates them
        return self

    def transform(self, X):
        params = self.params_
        return np.stack([canny(x, params).pixels for x in X])


def mask_filename(image_id: str) -> str:
    return f"{image_id.replace('/', '__')}_edge.png"


def batch_masks(catalog: Catalog, class_filter, params: CannyParams | None = None, out_dir=None):
    """Edge masks for every labeled training record of the given class(es).

    Returns ``(masks, failures)``; undecodable images are reported in
    ``failures`` as ``(record_id, message)`` and skipped.
    """
    params = params or CannyParams()
    masks, failures = [], []
    for record in catalog.select(split=Split.TRAIN_LABELED, label=class_filter):
        try:
            image = as_image(catalog.resolve(record))
        except ImageDecodeError as exc:
            logger.warning("skipping %s: %s", record.id, exc)
            failures.append((record.id, str(exc)))
            continue
        masks.append(canny(image, params, source_id=record.id, source_class=record.label))
    if out_dir is not None:
        write_mask_manifest(masks, out_dir)
    return masks, failures


def write_mask_manifest(masks, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "masks.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mask_path", "source_id", "source_class"])
        for m in masks:
            name = mask_filename(m.source_id)
            save_mask(m.pixels, out_dir / name)
            writer.writerow([name, m.source_id, m.source_class.key if m.source_class is not None else ""])
    return manifest


def read_mask_manifest(path) -> list[tuple[Path, str, ClassLabel | None]]:
    path = Path(path)
    with path.open(newline="") as fh:
        return [
            (
                path.parent / row["mask_path"],
                row["source_id"],
                ClassLabel.parse(row["source_class"]) if row["source_class"] else None,
            )
            for row in csv.DictReader(fh)
        ]
