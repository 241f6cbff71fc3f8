"""Local perturbation-based explanations over superpixels.

The image is split into superpixels; random on/off patterns switch segments
to the image mean color and the black box is queried on every perturbed
copy. A weighted ridge regression of the predicted-class probability on the
on/off pattern gives one signed weight per superpixel (positive weights
raise the probability of the predicted class, one vs. rest).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.segmentation import slic
from sklearn.linear_model import Ridge

from .ensemble import check_probabilities
from .imageio import as_image, save_image
from .labels import CLASS_NAMES, ClassLabel, round_half_up


class SegmentationError(ValueError):
    pass


@dataclass
class Explanation:
    image_id: str | None
    predicted_class: ClassLabel
    confidence: float
    segments: np.ndarray
    weights: dict[int, float]
    top_k: list[tuple[int, int]]  # (superpixel id, sign)
    intercept: float = 0.0

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["superpixel", "coefficient"])
            for sid, w in sorted(self.weights.items()):
                writer.writerow([sid, repr(w)])
        return path

    def overlay(self, image, alpha: float = 0.45) -> np.ndarray:
        """Top-k superpixels tinted green (supporting) or red (opposing)."""
        out = as_image(image).astype(np.float32)
        colors = {1: np.array([0, 255, 0], np.float32), -1: np.array([255, 0, 0], np.float32)}
        for sid, sign in self.top_k:
            region = self.segments == sid
            out[region] = (1 - alpha) * out[region] + alpha * colors[sign]
        return out.round().clip(0, 255).astype(np.uint8)

    def save_overlay(self, image, path) -> Path:
        return save_image(self.overlay(image), path)


def _as_predictor(model):
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise TypeError("predictor must be callable or expose predict_proba")


class LimeImageExplainer:
    """Superpixel explainer.

    Parameters
    ----------
    num_samples : int
        Number of perturbed images (the first is always the unperturbed one).
    top_k : int
        Number of superpixels reported in ``Explanation.top_k``.
    n_segments, compactness :
        SLIC segmentation settings.
    kernel_width : float
        Width of the exponential kernel on cosine distance to the
        all-on pattern.
    alpha : float
        Ridge regularization strength.
    """

    def __init__(
        self,
        num_samples=3000,
        top_k=10,
        n_segments=50,
        compactness=10.0,
        kernel_width=0.25,
        alpha=1.0,
        batch_size=100,
        random_state=0,
    ):
        if num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        self.num_samples = num_samples
        self.top_k = top_k
        self.n_segments = n_segments
        self.compactness = compactness
        self.kernel_width = kernel_width
        self.alpha = alpha
        self.batch_size = batch_size
        self.random_state = random_state

    def segment(self, image) -> np.ndarray:
        image = as_image(image)
        seg = slic(image, n_segments=self.n_segments, compactness=self.compactness, start_label=0)
        _, seg = np.unique(seg, return_inverse=True)
        return seg.reshape(image.shape[:2])

    def sample_patterns(self, n_segments: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.integers(0, 2, size=(self.num_samples, n_segments)).astype(np.uint8)
        z[0] = 1
        return z

    @staticmethod
    def perturb(image, segments, pattern, fill) -> np.ndarray:
        out = image.copy()
        off = ~pattern.astype(bool)[segments]
        out[off] = fill
        return out

    def kernel(self, patterns: np.ndarray) -> np.ndarray:
        z = patterns.astype(np.float64)
        norms = np.linalg.norm(z, axis=1)
        cos = np.divide(z.sum(axis=1), norms * np.sqrt(z.shape[1]), out=np.zeros(len(z)), where=norms > 0)
        d = 1.0 - cos
        return np.sqrt(np.exp(-(d**2) / self.kernel_width**2))

    def explain(self, predictor, image, image_id=None, segments=None, seed=None) -> Explanation:
        image = as_image(image)
        predict = _as_predictor(predictor)
        segments = self.segment(image) if segments is None else np.asarray(segments)
        n_seg = int(segments.max()) + 1
        if n_seg < 2:
            raise SegmentationError("need at least two superpixels")
        rng = np.random.default_rng(self.random_state if seed is None else seed)
        patterns = self.sample_patterns(n_seg, rng)
        fill = image.reshape(-1, 3).mean(axis=0).round().astype(np.uint8)

        probs = []
        for start in range(0, len(patterns), self.batch_size):
            batch = np.stack([self.perturb(image, segments, z, fill) for z in patterns[start : start + self.batch_size]])
            probs.append(check_probabilities(predict(batch)))
        probs = np.concatenate(probs)
        target = int(np.argmax(probs[0]))
        y = probs[:, target]

        weights = np.zeros(n_seg)
        intercept = float(y.mean())
        # superpixels never switched off carry no information
        active = patterns.min(axis=0) != patterns.max(axis=0)
        if active.any():
            model = Ridge(alpha=self.alpha, fit_intercept=True)
            model.fit(patterns[:, active].astype(np.float64), y, sample_weight=self.kernel(patterns))
            weights[active] = model.coef_
            intercept = float(model.intercept_)
        order = sorted(range(n_seg), key=lambda i: (-abs(weights[i]), i))[: min(self.top_k, n_seg)]
        top = [(i, 1 if weights[i] >= 0 else -1) for i in order]
        return Explanation(
            image_id=image_id,
            predicted_class=ClassLabel(target),
            confidence=float(probs[0, target]),
            segments=segments,
            weights={i: float(w) for i, w in enumerate(weights)},
            top_k=top,
            intercept=intercept,
        )


def explain(predictor, image, num_samples=3000, k=10, seed=0, **options) -> Explanation:
    return LimeImageExplainer(num_samples=num_samples, top_k=k, random_state=seed, **options).explain(predictor, image)


_SHORT = {"none": "none", "infection": "inf.", "ischaemia": "isc.", "both": "both"}


def prediction_summary(predictions: dict, image_ids, truth=None) -> list[dict]:
    """Per-model class and confidence for each image.

    ``predictions`` maps a model name to an ``(n_images, 4)`` probability
    array. A cell is flagged when it disagrees with ``truth``.
    """
    rows = []
    truth = [ClassLabel.parse(t) for t in truth] if truth is not None else None
    for name, probs in predictions.items():
        probs = check_probabilities(probs)
        for j, image_id in enumerate(image_ids):
            cls = int(np.argmax(probs[j]))
            rows.append(
                {
                    "model": name,
                    "image": image_id,
                    "class": CLASS_NAMES[cls],
                    "confidence": float(probs[j, cls]),
                    "false_positive": truth is not None and cls != int(truth[j]),
                }
            )
    return rows


def format_summary(rows: list[dict], image_ids) -> str:
    models = list(dict.fromkeys(r["model"] for r in rows))
    cells = {(r["model"], r["image"]): r for r in rows}
    width = max(len(m) for m in models) if models else 5
    lines = [f"{'model':<{width}} " + " ".join(f"{str(i):>14}" for i in image_ids)]
    for m in models:
        parts = []
        for i in image_ids:
            r = cells[(m, i)]
            mark = "*" if r["false_positive"] else " "
            parts.append(f"{_SHORT[r['class']]:>5} {str(round_half_up(100 * r['confidence'])):>6}{mark}")
        lines.append(f"{m:<{width}} " + " ".join(f"{p:>14}" for p in parts))
    lines.append("* false positive")
    return "\n".join(lines)
