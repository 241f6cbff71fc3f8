"""Small synthetic wound-like dataset for smoke runs and tests.

Each image is a skin-toned background with an elliptical lesion whose color
pattern depends on the class, so a tiny network can learn the task in a few
epochs on a CPU. The generator also writes a desk-scale pipeline config.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import yaml

from .catalog import Catalog, ImageRecord, Provenance, Split, write_manifest
from .imageio import save_image
from .labels import ClassLabel

TOY_SIZE = 64

_SKIN = np.array([205, 160, 135])
# (lesion fill, rim or spot color) per class
_LESION = {
    ClassLabel.NONE: ((225, 125, 125), None),
    ClassLabel.INFECTION: ((205, 195, 70), (200, 40, 40)),
    ClassLabel.ISCHAEMIA: ((70, 50, 95), None),
    ClassLabel.BOTH: ((70, 50, 95), (215, 205, 60)),
}


def toy_image(label, rng: np.random.Generator, size: int = TOY_SIZE) -> np.ndarray:
    """One RGB uint8 image of the given class."""
    label = ClassLabel.parse(label)
    tone = _SKIN + rng.integers(-20, 21, size=3)
    img = np.empty((size, size, 3), np.float64)
    img[:] = tone
    fill, accent = _LESION[label]
    center = tuple(int(v) for v in rng.integers(size // 3, 2 * size // 3, size=2))
    axes = tuple(int(v) for v in rng.integers(size // 7, size // 4, size=2))
    angle = float(rng.uniform(0, 180))
    fill = np.clip(np.array(fill) + rng.integers(-15, 16, size=3), 0, 255)
    if label is ClassLabel.INFECTION:
        rim = tuple(int(a + 4) for a in axes)
        cv2.ellipse(img, center, rim, angle, 0, 360, tuple(float(c) for c in accent), -1)
    cv2.ellipse(img, center, axes, angle, 0, 360, tuple(float(c) for c in fill), -1)
    if label is ClassLabel.BOTH:
        for _ in range(3):
            spot = (int(center[0] + rng.integers(-axes[0] // 2, axes[0] // 2 + 1)),
                    int(center[1] + rng.integers(-axes[1] // 2, axes[1] // 2 + 1)))
            cv2.circle(img, spot, 2, tuple(float(c) for c in accent), -1)
    img += rng.normal(0, 6, img.shape)
    return np.clip(img, 0, 255).round().astype(np.uint8)


def make_toy_dataset(
    out_dir,
    per_class: int = 10,
    unlabeled: int = 20,
    validation_per_class: int = 3,
    seed: int = 0,
    size: int = TOY_SIZE,
) -> Path:
    """Write images plus ``manifest.csv`` under ``out_dir``; returns the manifest path.

    Unlabeled images are drawn evenly over the classes; their true class is
    kept out of the manifest.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    records = []

    def add(record_id, split, label, record_label):
        rel = Path("images") / split.value / f"{record_id}.png"
        save_image(toy_image(label, rng, size), out_dir / rel)
        records.append(
            ImageRecord(record_id, rel.as_posix(), split, record_label, Provenance.REAL, width=size, height=size)
        )

    for label in ClassLabel:
        for i in range(per_class):
            add(f"train_{label.key}_{i:02d}", Split.TRAIN_LABELED, label, label)
    for i in range(unlabeled):
        add(f"unlabeled_{i:02d}", Split.TRAIN_UNLABELED, ClassLabel(i % len(ClassLabel)), None)
    for label in ClassLabel:
        for i in range(validation_per_class):
            add(f"val_{label.key}_{i:02d}", Split.VALIDATION, label, label)
    return write_manifest(Catalog(tuple(records), root=out_dir.resolve()), out_dir / "manifest.csv")


def toy_pipeline_config(manifest="manifest.csv", output_dir="run", seed: int = 0) -> dict:
    """Pipeline settings small enough to run all phases on a CPU in minutes."""
    classifier = dict(
        backbone="tiny-cnn",
        epochs_train=30,
        lr_train=3e-3,
        batch_size=8,
        image_size=32,
        mixed_precision=False,
    )
    return {
        "manifest": str(manifest),
        "output_dir": str(output_dir),
        "seed": seed,
        "classifiers": {
            "b1": dict(classifier),
            "b2": dict(classifier, oversampling=True, augmentation="extended", lr_train=2e-3),
        },
        "ensemble": {
            "baseline": ["b1", "b2"],
            "extended_base": "auto",
            "extended_members": {"e1": "tiny-cnn", "e2": "tiny-cnn", "e3": "tiny-cnn"},
            "extended_overrides": {"epochs_train": 15},
        },
        "pseudo": {"threshold": 0.7, "sources": ["train_unlabeled"]},
        "canny": {"sigma": 1.0, "low_percent": 10.0, "high_percent": 30.0},
        "gan": {
            "defaults": dict(
                load_size=TOY_SIZE,
                batch_size=8,
                epochs_initial=5,
                epochs_decay=5,
                ngf=8,
                ndf=8,
                n_downsampling=2,
                n_blocks=1,
                mixed_precision=False,
            ),
            # rarer classes get the larger budget, as at full scale
            "per_class": {
                "ischaemia": {"epochs_initial": 10, "epochs_decay": 10},
                "both": {"epochs_initial": 10, "epochs_decay": 10},
            },
        },
        "balance": {"strict": True},
        "evaluation": {"split": "validation", "cv_folds": 0},
    }


def write_toy_config(path, **kwargs) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(toy_pipeline_config(**kwargs), sort_keys=False))
    return path
