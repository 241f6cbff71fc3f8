"""Edge-mask to image translation, one model per class.

Each class gets its own conditional GAN trained in zero-class mode: the
generator sees only the one-channel edge mask. Training uses a
least-squares adversarial objective over several discriminator scales plus
a discriminator feature-matching L1 term. The learning rate stays constant
for ``epochs_initial`` epochs and then decays linearly towards zero over
``epochs_decay`` epochs.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .classifier import resolve_device
from .edgemask import EdgeMask
from .imageio import save_image
from .labels import ClassLabel
from .networks import (
    GlobalGenerator,
    LocalEnhancer,
    MultiscaleDiscriminator,
    feature_matching_loss,
    init_weights,
    lsgan_loss,
)

logger = logging.getLogger(__name__)

# (epochs with initial lr, epochs with decaying lr) per class
EPOCH_BUDGETS = {
    ClassLabel.NONE: (50, 100),
    ClassLabel.INFECTION: (50, 100),
    ClassLabel.ISCHAEMIA: (200, 400),
    ClassLabel.BOTH: (200, 400),
}


@dataclass
class GanConfig:
    class_label: ClassLabel = ClassLabel.NONE
    num_classes: int = 0
    batch_size: int = 48
    lr: float = 3e-4
    epochs_initial: int = 50
    epochs_decay: int = 100
    load_size: int = 224
    resize_crop: bool = False
    instance_maps: bool = False
    mixed_precision: bool = True
    num_discriminator_scales: int = 2
    lambda_feature_matching: float = 10.0
    seed: int = 0
    # architecture
    ngf: int = 64
    ndf: int = 64
    n_downsampling: int = 4
    n_blocks: int = 9
    n_layers_d: int = 3
    use_enhancer: bool = False
    beta1: float = 0.5

    def __post_init__(self):
        self.class_label = ClassLabel.parse(self.class_label)
        if self.num_classes != 0:
            raise ValueError("only zero-class (edge mask) conditioning is supported")
        if self.instance_maps:
            raise ValueError("instance maps are not supported")
        if self.resize_crop:
            raise ValueError("resize/crop preprocessing is not supported; supply masks at load_size")
        for name in ("batch_size", "epochs_initial", "epochs_decay", "num_discriminator_scales", "load_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_feature_matching < 0:
            raise ValueError("lambda_feature_matching must be non-negative")

    @classmethod
    def for_class(cls, label, **overrides) -> "GanConfig":
        label = ClassLabel.parse(label)
        initial, decay = EPOCH_BUDGETS[label]
        params = dict(class_label=label, epochs_initial=initial, epochs_decay=decay)
        params.update(overrides)
        return cls(**params)

    @property
    def total_epochs(self) -> int:
        return self.epochs_initial + self.epochs_decay

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["class_label"] = self.class_label.key
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path


def lr_decay(config: GanConfig, epoch: int) -> float:
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    if epoch < config.epochs_initial:
        return config.lr
    return config.lr * (1.0 - (epoch - config.epochs_initial) / config.epochs_decay)


@dataclass
class GanLossLog:
    """Per-iteration and per-epoch generator / discriminator losses."""

    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.iterations])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            if not self.iterations:
                return path
            writer = csv.DictWriter(fh, fieldnames=list(self.iterations[0]))
            writer.writeheader()
            writer.writerows(self.iterations)
        return path


def _mask_tensor(masks) -> torch.Tensor:
    arr = np.stack([np.asarray(m.pixels if isinstance(m, EdgeMask) else m, dtype=np.float32) for m in masks])
    if arr.ndim != 3:
        raise ValueError("masks must be 2-D rasters")
    return torch.from_numpy(arr[:, None] * 2.0 - 1.0)


def _image_tensor(images) -> torch.Tensor:
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError("images must be HxWx3")
    return torch.from_numpy(arr.transpose(0, 3, 1, 2) / 127.5 - 1.0)


def to_uint8(tensor: torch.Tensor) -> np.ndarray:
    arr = ((tensor.detach().cpu().float().numpy() + 1.0) * 127.5).round().clip(0, 255)
    return arr.astype(np.uint8).transpose(0, 2, 3, 1)


class EdgeToImageGAN(TransformerMixin, BaseEstimator):
    """Conditional GAN mapping 0/1 edge masks to RGB images.

    ``fit(masks, images)`` trains; ``transform(masks)`` returns uint8 images.
    ``perceptual_loss`` is an optional callable ``(fake, real) -> tensor``
    added to the generator objective with weight ``lambda_perceptual``.
    """

    def __init__(
        self,
        class_label="none",
        batch_size=48,
        lr=3e-4,
        epochs_initial=50,
        epochs_decay=100,
        load_size=224,
        mixed_precision=True,
        num_discriminator_scales=2,
        lambda_feature_matching=10.0,
        seed=0,
        ngf=64,
        ndf=64,
        n_downsampling=4,
        n_blocks=9,
        n_layers_d=3,
        use_enhancer=False,
        beta1=0.5,
        perceptual_loss: Callable | None = None,
        lambda_perceptual=10.0,
        output_dir=None,
        sample_every=0,
    ):
        self.class_label = class_label
        self.batch_size = batch_size
        self.lr = lr
        self.epochs_initial = epochs_initial
        self.epochs_decay = epochs_decay
        self.load_size = load_size
        self.mixed_precision = mixed_precision
        self.num_discriminator_scales = num_discriminator_scales
        self.lambda_feature_matching = lambda_feature_matching
        self.seed = seed
        self.ngf = ngf
        self.ndf = ndf
        self.n_downsampling = n_downsampling
        self.n_blocks = n_blocks
        self.n_layers_d = n_layers_d
        self.use_enhancer = use_enhancer
        self.beta1 = beta1
        self.perceptual_loss = perceptual_loss
        self.lambda_perceptual = lambda_perceptual
        self.output_dir = output_dir
        self.sample_every = sample_every

    _RUNTIME = ("perceptual_loss", "lambda_perceptual", "output_dir", "sample_every")

    @classmethod
    def from_config(cls, config: GanConfig, **runtime) -> "EdgeToImageGAN":
        params = config.to_dict()
        for key in ("num_classes", "resize_crop", "instance_maps"):
            params.pop(key)
        return cls(**params, **runtime)

    @property
    def config(self) -> GanConfig:
        params = {k: v for k, v in self.get_params().items() if k not in self._RUNTIME}
        return GanConfig(**params)

    def _build(self, config: GanConfig):
        torch.manual_seed(config.seed)
        if config.use_enhancer:
            gen = LocalEnhancer(1, 3, config.ngf // 2, max(config.n_downsampling - 1, 1), config.n_blocks)
        else:
            gen = GlobalGenerator(1, 3, config.ngf, config.n_downsampling, config.n_blocks)
        disc = MultiscaleDiscriminator(1 + 3, config.ndf, config.n_layers_d, config.num_discriminator_scales)
        gen.apply(init_weights)
        disc.apply(init_weights)
        self.device_ = resolve_device()
        self.generator_ = gen.to(self.device_)
        self.discriminator_ = disc.to(self.device_)
        self.loss_log_ = GanLossLog()
        self.size_ = (config.load_size, config.load_size)

    def initialize(self):
        """Build networks without training (zero training steps)."""
        self._build(self.config)
        return self

    def _check_size(self, shape):
        if tuple(shape) != self.size_:
            raise ValueError(f"mask size {tuple(shape)} does not match model size {self.size_}")

    def fit(self, masks, images):
        config = self.config
        masks, images = list(masks), list(images)
        if not masks:
            raise ValueError("need at least one (mask, image) pair")
        if len(masks) != len(images):
            raise ValueError("masks and images differ in length")
        self._build(config)
        x_all = _mask_tensor(masks)
        y_all = _image_tensor(images)
        if x_all.shape[-2:] != y_all.shape[-2:]:
            raise ValueError(f"mask size {tuple(x_all.shape[-2:])} != image size {tuple(y_all.shape[-2:])}")
        self._check_size(x_all.shape[-2:])
        factor = 2 ** (self.generator_.n_downsampling)
        if config.load_size % factor:
            raise ValueError(f"load_size {config.load_size} must be divisible by {factor}")

        gen, disc, device = self.generator_, self.discriminator_, self.device_
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.lr, betas=(config.beta1, 0.999))
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr, betas=(config.beta1, 0.999))
        use_amp = config.mixed_precision and device.type == "cuda"
        scaler = torch.amp.GradScaler("cuda", enabled=use_amp)
        batch = min(config.batch_size, len(masks))
        rng = np.random.default_rng(config.seed)
        out_dir = Path(self.output_dir) / config.class_label.key if self.output_dir else None
        step = 0
        for epoch in range(config.total_epochs):
            lr = lr_decay(config, epoch)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = lr
            order = rng.permutation(len(masks))
            sums = {}
            for start in range(0, len(order), batch):
                idx = torch.as_tensor(order[start : start + batch])
                x, y = x_all[idx].to(device), y_all[idx].to(device)
                with torch.autocast("cuda", enabled=use_amp):
                    fake = gen(x)
                    pred_fake = disc(torch.cat([x, fake], 1))
                    pred_real = disc(torch.cat([x, y], 1))
                    g_gan = lsgan_loss(pred_fake, True)
                    g_fm = feature_matching_loss(pred_fake, pred_real, config.n_layers_d)
                    g_loss = g_gan + config.lambda_feature_matching * g_fm
                    if self.perceptual_loss is not None:
                        g_loss = g_loss + self.lambda_perceptual * self.perceptual_loss(fake, y)
                opt_g.zero_grad(set_to_none=True)
                scaler.scale(g_loss).backward()
                scaler.step(opt_g)

                with torch.autocast("cuda", enabled=use_amp):
                    d_fake = lsgan_loss(disc(torch.cat([x, fake.detach()], 1)), False)
                    d_real = lsgan_loss(disc(torch.cat([x, y], 1)), True)
                    d_loss = 0.5 * (d_fake + d_real)
                opt_d.zero_grad(set_to_none=True)
                scaler.scale(d_loss).backward()
                scaler.step(opt_d)
                scaler.update()

                row = {
                    "iteration": step,
                    "epoch": epoch,
                    "lr": lr,
                    "g_gan": g_gan.item(),
                    "g_feature_matching": g_fm.item(),
                    "g_total": g_loss.item(),
                    "d_real": d_real.item(),
                    "d_fake": d_fake.item(),
                }
                self.loss_log_.iterations.append(row)
                for k in ("g_gan", "g_feature_matching", "g_total", "d_real", "d_fake"):
                    sums[k] = sums.get(k, 0.0) + row[k]
                step += 1
            n_batches = -(-len(order) // batch)
            self.loss_log_.epochs.append({"epoch": epoch, "lr": lr, **{k: v / n_batches for k, v in sums.items()}})
            if out_dir is not None and self.sample_every and (epoch + 1) % self.sample_every == 0:
                self._write_samples(out_dir / f"samples_epoch_{epoch + 1}.png", x_all[:4], y_all[:4])
                self.save(out_dir / f"gan_epoch_{epoch + 1}.ckpt")
        if out_dir is not None:
            self.save(out_dir / f"gan_epoch_{config.total_epochs}.ckpt")
        return self

    @torch.no_grad()
    def _generate(self, x: torch.Tensor) -> torch.Tensor:
        self.generator_.eval()
        try:
            return self.generator_(x.to(self.device_)).cpu()
        finally:
            self.generator_.train()

    def _write_samples(self, path, x, y):
        fake = to_uint8(self._generate(x))
        real = to_uint8(y)
        edge = to_uint8(x.repeat(1, 3, 1, 1))
        grid = np.concatenate([np.concatenate(row, axis=1) for row in zip(edge, fake, real)], axis=0)
        save_image(grid, path)

    def synthesize(self, masks, seed: int = 0, batch_size: int = 32) -> list[np.ndarray]:
        """One uint8 RGB image per mask.

        The generator has no stochastic layers, so output depends only on
        the mask; ``seed`` still pins torch's RNG for any custom layers.
        """
        check_is_fitted(self, "generator_")
        masks = list(masks)
        out = []
        torch.manual_seed(seed)
        for start in range(0, len(masks), batch_size):
            x = _mask_tensor(masks[start : start + batch_size])
            self._check_size(x.shape[-2:])
            out.extend(to_uint8(self._generate(x)))
        return out

    def raw_output(self, masks) -> torch.Tensor:
        """Generator output in [-1, 1] before conversion to 8-bit."""
        check_is_fitted(self, "generator_")
        x = _mask_tensor(masks)
        self._check_size(x.shape[-2:])
        return self._generate(x)

    def transform(self, X):
        return np.stack(self.synthesize(X, seed=self.seed))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "config": self.config.to_dict(),
                "generator": self.generator_.state_dict(),
                "discriminator": self.discriminator_.state_dict(),
                "final_losses": self.loss_log_.epochs[-1] if self.loss_log_.epochs else {},
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path) -> "EdgeToImageGAN":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model = cls.from_config(GanConfig(**blob["config"]))
        model._build(model.config)
        model.generator_.load_state_dict(blob["generator"])
        model.discriminator_.load_state_dict(blob["discriminator"])
        return model


def train_gan(config: GanConfig, pairs, **runtime) -> tuple[EdgeToImageGAN, GanLossLog]:
    """Train on ``(mask, image)`` pairs; returns the model and its loss log."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (mask, image) pair")
    model = EdgeToImageGAN.from_config(config, **runtime)
    model.fit([m for m, _ in pairs], [im for _, im in pairs])
    return model, model.loss_log_


def synthesize(model: EdgeToImageGAN, masks, seed: int = 0) -> list[np.ndarray]:
    return model.synthesize(masks, seed=seed)


def synthetic_id(label: ClassLabel, source_id: str) -> str:
    return f"syn/{label.key}/{source_id}"


def synthetic_filename(source_id: str) -> str:
    return f"syn_{source_id.replace('/', '__')}.png"
