"""Image classifier training and inference.

:class:`TrainingConfig` is the declarative description of one training run
(backbone, warm-up, optimizer, scheduler, augmentation, ...).
:class:`ImageClassifier` is the matching scikit-learn style estimator; its
constructor arguments are exactly the config fields, so ``get_params`` /
``set_params`` and cloning work as usual.

Training runs in up to two phases. During warm-up only the freshly attached
classification head is trainable (backbone frozen, in eval mode) at
``lr_warmup``; afterwards all parameters train at ``lr_train``, optionally
decayed by ``gamma`` every ``step_size`` epochs.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from .augment import apply_augmentation, build_augmentation, preprocess
from .catalog import Catalog, FoldAssignment, Split
from .imageio import ImageDecodeError, as_image
from .labels import N_CLASSES, ClassLabel
from .metrics import evaluate

logger = logging.getLogger(__name__)

DEVICE_ENV = "PSEUDOSYN_DEVICE"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    backbone: str = "efficientnet-b1"
    epochs_warmup: int = 0
    lr_warmup: float | None = None
    epochs_train: int = 30
    lr_train: float = 1e-4
    batch_size: int = 225
    oversampling: bool = False
    augmentation: str = "baseline"
    optimizer: str = "adam"
    scheduler: str = "none"
    step_size: int | None = None
    gamma: float | None = None
    dropout: float = 0.3
    image_size: int = 224
    mixed_precision: bool = True
    seed: int = 0
    pretrained: bool = False
    weight_decay: float = 0.0
    num_workers: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs_warmup < 0 or self.epochs_train < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.epochs_warmup > 0 and not (self.lr_warmup and self.lr_warmup > 0):
            raise ValueError("warm-up epochs need a positive lr_warmup")
        if self.lr_train <= 0:
            raise ValueError("lr_train must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.scheduler not in ("none", "step"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.scheduler == "step":
            if not self.step_size or self.step_size < 1:
                raise ValueError("step scheduler needs a positive step_size")
            if self.gamma is None or not 0 < self.gamma < 1:
                raise ValueError("step scheduler needs gamma in (0, 1)")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.augmentation not in ("baseline", "extended", "none"):
            raise ValueError(f"unknown augmentation {self.augmentation!r}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; known: {sorted(BACKBONES)}")

    @property
    def total_epochs(self) -> int:
        return self.epochs_warmup + self.epochs_train

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls(**yaml.safe_load(Path(path).read_text()))


def lr_schedule(config: TrainingConfig, epoch: int) -> float:
    """Learning rate in force during (0-based) ``epoch``."""
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    if epoch < config.epochs_warmup:
        return float(config.lr_warmup)
    t = epoch - config.epochs_warmup
    if config.scheduler == "step":
        return config.lr_train * config.gamma ** (t // config.step_size)
    return config.lr_train


# --- backbones ---------------------------------------------------------------


class TinyCNN(nn.Module):
    """Small convolutional feature extractor for desk-scale runs."""

    out_features = 32

    def __init__(self):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1),
            nn.BatchNorm2d(32),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
        )

    def forward(self, x):
        return self.body(x)


def _efficientnet(variant: str) -> Callable[[bool], tuple[nn.Module, int]]:
    def build(pretrained: bool):
        import torchvision

        ctor = getattr(torchvision.models, f"efficientnet_{variant}")
        net = ctor(weights="DEFAULT" if pretrained else None)
        dim = net.classifier[1].in_features
        return nn.Sequential(net.features, net.avgpool, nn.Flatten()), dim

    return build


def _tiny(pretrained: bool):
    if pretrained:
        raise ValueError("tiny-cnn has no pretrained weights")
    return TinyCNN(), TinyCNN.out_features


BACKBONES: dict[str, Callable[[bool], tuple[nn.Module, int]]] = {
    "efficientnet-b0": _efficientnet("b0"),
    "efficientnet-b1": _efficientnet("b1"),
    "efficientnet-b2": _efficientnet("b2"),
    "tiny-cnn": _tiny,
}


def register_backbone(name: str, factory: Callable[[bool], tuple[nn.Module, int]]) -> None:
    BACKBONES[name] = factory


class ClassifierNet(nn.Module):
    def __init__(self, backbone: str, dropout: float, pretrained: bool = False):
        super().__init__()
        self.backbone, dim = BACKBONES[backbone](pretrained)
        self.head = nn.Sequential(nn.Dropout(dropout), nn.Linear(dim, N_CLASSES))

    def forward(self, x):
        return self.head(self.backbone(x))


OPTIMIZERS = {
    "adam": torch.optim.Adam,
    "rmsprop": torch.optim.RMSprop,
}


# Hyperparameter sets of the four baseline models.
PRESETS = {
    "b1": TrainingConfig(backbone="efficientnet-b1", epochs_train=30, batch_size=225),
    "b2": TrainingConfig(
        backbone="efficientnet-b0", epochs_train=100, batch_size=300, oversampling=True, augmentation="extended"
    ),
    "b3": TrainingConfig(
        backbone="efficientnet-b2", epochs_train=30, batch_size=225, scheduler="step", step_size=10, gamma=0.1
    ),
    "b4": TrainingConfig(
        backbone="efficientnet-b1",
        epochs_warmup=3,
        lr_warmup=1e-2,
        epochs_train=47,
        batch_size=225,
        optimizer="rmsprop",
        scheduler="step",
        step_size=10,
        gamma=0.1,
    ),
}


def classification_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, targets)


def oversample_indices(labels, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw ``n`` indices with replacement so every class appears equally often.

    Classes receive ``n // k`` draws each (the first ``n % k`` classes one
    more), so per-class counts differ by at most one. Absent classes are
    skipped.
    """
    labels = np.asarray(labels)
    n = len(labels) if n is None else n
    present = [c for c in range(N_CLASSES) if np.any(labels == c)]
    k = len(present)
    out = []
    for j, c in enumerate(present):
        quota = n // k + (1 if j < n % k else 0)
        out.append(rng.choice(np.flatnonzero(labels == c), size=quota, replace=True))
    idx = np.concatenate(out) if out else np.zeros(0, dtype=int)
    return rng.permutation(idx)


def resolve_device(device=None) -> torch.device:
    return torch.device(device or os.environ.get(DEVICE_ENV) or ("cuda" if torch.cuda.is_available() else "cpu"))


# --- training -----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    loss: float
    val_macro_f1: float | None = None


@dataclass
class TrainingLog:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    @property
    def lrs(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "phase", "lr", "loss", "val_macro_f1"])
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, e.phase, repr(e.lr), repr(e.loss), "" if e.val_macro_f1 is None else repr(e.val_macro_f1)]
                )
        return path


class _AugmentedImages(torch.utils.data.Dataset):
    def __init__(self, images, labels, spec, seed, image_size):
        self.images = images
        self.labels = labels
        self.spec = spec
        self.seed = seed
        self.image_size = image_size
        self.epoch = 0

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        image = as_image(self.images[i])
        if self.spec is None:
            x = preprocess(image, self.image_size)
        else:
            # per (seed, epoch, item) stream keeps workers order-independent
            x = apply_augmentation(self.spec, image, seed=[self.seed, self.epoch, int(i)])
        return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1))), int(self.labels[i])


def _to_batch(images, image_size) -> torch.Tensor:
    arr = np.stack([preprocess(as_image(im), image_size).transpose(2, 0, 1) for im in images])
    return torch.from_numpy(np.ascontiguousarray(arr))


class ImageClassifier(ClassifierMixin, BaseEstimator):
    """Backbone + dropout + linear head over the four classes.

    Parameters mirror :class:`TrainingConfig`. ``fit`` takes a list of
    HxWx3 uint8 images (or paths) and integer labels 0..3.
    """

    def __init__(
        self,
        backbone="efficientnet-b1",
        epochs_warmup=0,
        lr_warmup=None,
        epochs_train=30,
        lr_train=1e-4,
        batch_size=225,
        oversampling=False,
        augmentation="baseline",
        optimizer="adam",
        scheduler="none",
        step_size=None,
        gamma=None,
        dropout=0.3,
        image_size=224,
        mixed_precision=True,
        seed=0,
        pretrained=False,
        weight_decay=0.0,
        num_workers=0,
    ):
        self.backbone = backbone
        self.epochs_warmup = epochs_warmup
        self.lr_warmup = lr_warmup
        self.epochs_train = epochs_train
        self.lr_train = lr_train
        self.batch_size = batch_size
        self.oversampling = oversampling
        self.augmentation = augmentation
        self.optimizer = optimizer
        self.scheduler = scheduler
        self.step_size = step_size
        self.gamma = gamma
        self.dropout = dropout
        self.image_size = image_size
        self.mixed_precision = mixed_precision
        self.seed = seed
        self.pretrained = pretrained
        self.weight_decay = weight_decay
        self.num_workers = num_workers

    @classmethod
    def from_config(cls, config: TrainingConfig) -> "ImageClassifier":
        return cls(**config.to_dict())

    @property
    def config(self) -> TrainingConfig:
        return TrainingConfig(**self.get_params())

    def _init_model(self, config):
        torch.manual_seed(config.seed)
        self.net_ = ClassifierNet(config.backbone, config.dropout, config.pretrained)
        self.classes_ = np.arange(N_CLASSES)
        self.device_ = resolve_device()
        self.net_.to(self.device_)

    def fit(self, X, y, X_val=None, y_val=None, checkpoint_dir=None, run_id="run"):
        config = self.config
        # paths are decoded lazily, one batch at a time
        images = [x if isinstance(x, (str, Path)) else as_image(x) for x in X]
        y = np.array([int(ClassLabel.parse(v)) for v in y], dtype=np.int64)
        if len(images) != len(y):
            raise ValueError("X and y differ in length")
        missing = [ClassLabel(c).key for c in range(N_CLASSES) if not np.any(y == c)]
        if missing and config.total_epochs > 0:
            raise TrainingError(f"no training images for class(es): {', '.join(missing)}")
        self._init_model(config)
        self.log_ = TrainingLog()
        if config.total_epochs == 0:
            return self

        batch_size = config.batch_size
        if batch_size > len(images):
            warnings.warn(f"batch_size {batch_size} exceeds dataset size {len(images)}; clamping", stacklevel=2)
            batch_size = len(images)
        spec = None if config.augmentation == "none" else build_augmentation(config.augmentation, config.image_size)
        dataset = _AugmentedImages(images, y, spec, config.seed, config.image_size)
        rng = np.random.default_rng(config.seed)
        val_images = list(X_val) if X_val is not None else None

        net, device = self.net_, self.device_
        use_amp = config.mixed_precision
        amp_dtype = torch.float16 if device.type == "cuda" else torch.bfloat16
        scaler = torch.amp.GradScaler(device.type, enabled=use_amp and device.type == "cuda")
        opt_cls = OPTIMIZERS[config.optimizer]
        optimizer = phase = None

        for epoch in range(config.total_epochs):
            new_phase = "warmup" if epoch < config.epochs_warmup else "train"
            if new_phase != phase:
                phase = new_phase
                frozen = phase == "warmup"
                for p in net.backbone.parameters():
                    p.requires_grad_(not frozen)
                params = net.head.parameters() if frozen else net.parameters()
                optimizer = opt_cls(params, lr=lr_schedule(config, epoch), weight_decay=config.weight_decay)
            lr = lr_schedule(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr

            net.train()
            if phase == "warmup":
                net.backbone.eval()
            dataset.epoch = epoch
            order = oversample_indices(y, rng) if config.oversampling else rng.permutation(len(y))
            loader = torch.utils.data.DataLoader(
                dataset,
                batch_size=batch_size,
                sampler=order.tolist(),
                num_workers=config.num_workers,
                drop_last=False,
            )
            total, seen = 0.0, 0
            for xb, yb in loader:
                xb, yb = xb.to(device), yb.to(device)
                if len(yb) == 1 and net.training:
                    # BatchNorm cannot normalize a single sample
                    continue
                optimizer.zero_grad(set_to_none=True)
                with torch.autocast(device.type, dtype=amp_dtype, enabled=use_amp):
                    logits = net(xb)
                loss = classification_loss(logits.float(), yb)
                scaler.scale(loss).backward()
                scaler.step(optimizer)
                scaler.update()
                total += loss.item() * len(yb)
                seen += len(yb)
            record = EpochRecord(epoch, phase, lr, total / max(seen, 1))
            if val_images is not None and len(val_images):
                pred = self.predict(val_images)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    record.val_macro_f1 = evaluate(y_val, pred).macro_f1
            self.log_.epochs.append(record)
            logger.debug("epoch %d %s lr=%.3g loss=%.4f", epoch, phase, lr, record.loss)

        for p in net.parameters():
            p.requires_grad_(True)
        if checkpoint_dir is not None:
            self.save(Path(checkpoint_dir) / run_id / f"epoch_{config.total_epochs}.ckpt")
        return self

    @torch.no_grad()
    def predict_proba(self, X, batch_size: int = 64) -> np.ndarray:
        check_is_fitted(self, "net_")
        images = [x if isinstance(x, (str, Path)) else as_image(x) for x in X]
        self.net_.eval()
        out = []
        for start in range(0, len(images), batch_size):
            xb = _to_batch(images[start : start + batch_size], self.image_size).to(self.device_)
            out.append(self.net_(xb).double().softmax(dim=1).cpu().numpy())
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def save(self, path) -> Path:
        check_is_fitted(self, "net_")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"config": self.config.to_dict(), "state_dict": self.net_.state_dict()}, path)
        return path

    @classmethod
    def load(cls, path) -> "ImageClassifier":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model = cls(**blob["config"])
        model._init_model(model.config)
        model.net_.load_state_dict(blob["state_dict"])
        model.log_ = TrainingLog()
        return model


def _records_xy(catalog: Catalog, records):
    return [catalog.resolve(r) for r in records], [int(r.label) for r in records]


def train(
    config: TrainingConfig,
    catalog: Catalog,
    folds: FoldAssignment | None = None,
    held_out: int | None = None,
    checkpoint_dir=None,
    run_id: str = "run",
) -> tuple[ImageClassifier, TrainingLog]:
    """Train on the labeled training records of ``catalog``.

    With ``folds`` and ``held_out`` given, that fold is excluded from
    training and scored every epoch.
    """
    records = catalog.select(split=Split.TRAIN_LABELED)
    val = []
    if folds is not None and held_out is not None:
        held = set(folds.held_out(held_out))
        val = [r for r in records if r.id in held]
        records = [r for r in records if r.id not in held]
    X, y = _records_xy(catalog, records)
    kwargs = {}
    if val:
        kwargs["X_val"], kwargs["y_val"] = _records_xy(catalog, val)
    model = ImageClassifier.from_config(config)
    model.fit(X, y, checkpoint_dir=checkpoint_dir, run_id=run_id, **kwargs)
    return model, model.log_


def predict(model, images, chunk_size: int = 256) -> tuple[np.ndarray, list[tuple[int, str]]]:
    """Probabilities for each image; undecodable items get a NaN row.

    Returns ``(probabilities, failures)`` where failures lists
    ``(index, message)`` for the items that could not be read. Images are
    decoded ``chunk_size`` at a time.
    """
    images = list(images)
    probs = np.full((len(images), N_CLASSES), np.nan)
    failures = []
    for start in range(0, len(images), chunk_size):
        good = []
        for i in range(start, min(start + chunk_size, len(images))):
            try:
                good.append((i, as_image(images[i])))
            except ImageDecodeError as exc:
                failures.append((i, str(exc)))
        if good:
            probs[[i for i, _ in good]] = model.predict_proba([im for _, im in good])
    return probs, failures
