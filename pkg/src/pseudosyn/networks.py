"""Coarse-to-fine generator and multi-scale PatchGAN discriminators."""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F


def _norm(channels):
    return nn.InstanceNorm2d(channels, affine=False)


def init_weights(module: nn.Module) -> None:
    name = module.__class__.__name__
    if "Conv" in name:
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ResnetBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            _norm(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            _norm(dim),
        )

    def forward(self, x):
        return x + self.block(x)


class GlobalGenerator(nn.Module):
    """Encoder, residual trunk, decoder; ``tanh`` output in [-1, 1]."""

    def __init__(self, input_nc=1, output_nc=3, ngf=64, n_downsampling=4, n_blocks=9):
        super().__init__()
        self.n_downsampling = n_downsampling
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(input_nc, ngf, 7), _norm(ngf), nn.ReLU(True)]
        for i in range(n_downsampling):
            mult = 2**i
            layers += [nn.Conv2d(ngf * mult, ngf * mult * 2, 3, stride=2, padding=1), _norm(ngf * mult * 2), nn.ReLU(True)]
        mult = 2**n_downsampling
        layers += [ResnetBlock(ngf * mult) for _ in range(n_blocks)]
        for i in range(n_downsampling):
            mult = 2 ** (n_downsampling - i)
            layers += [
                nn.ConvTranspose2d(ngf * mult, ngf * mult // 2, 3, stride=2, padding=1, output_padding=1),
                _norm(ngf * mult // 2),
                nn.ReLU(True),
            ]
        self.features = nn.Sequential(*layers)
        self.to_rgb = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(ngf, output_nc, 7), nn.Tanh())

    def forward(self, x, return_features=False):
        feats = self.features(x)
        return feats if return_features else self.to_rgb(feats)


class LocalEnhancer(nn.Module):
    """Global generator at half resolution refined by a full-resolution branch."""

    def __init__(self, input_nc=1, output_nc=3, ngf=32, n_downsampling_global=3, n_blocks_global=9, n_blocks_local=3):
        super().__init__()
        self.global_net = GlobalGenerator(input_nc, output_nc, ngf * 2, n_downsampling_global, n_blocks_global)
        self.n_downsampling = n_downsampling_global + 1
        self.down = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(input_nc, ngf, 7),
            _norm(ngf),
            nn.ReLU(True),
            nn.Conv2d(ngf, ngf * 2, 3, stride=2, padding=1),
            _norm(ngf * 2),
            nn.ReLU(True),
        )
        self.up = nn.Sequential(
            *[ResnetBlock(ngf * 2) for _ in range(n_blocks_local)],
            nn.ConvTranspose2d(ngf * 2, ngf, 3, stride=2, padding=1, output_padding=1),
            _norm(ngf),
            nn.ReLU(True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(ngf, output_nc, 7),
            nn.Tanh(),
        )

    def forward(self, x):
        coarse = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
        return self.up(self.down(x) + self.global_net(coarse, return_features=True))


class NLayerDiscriminator(nn.Module):
    """PatchGAN returning every intermediate activation (last = patch scores)."""

    def __init__(self, input_nc, ndf=64, n_layers=3):
        super().__init__()
        kw, pad = 4, int(math.ceil((4 - 1) / 2))
        blocks = [nn.Sequential(nn.Conv2d(input_nc, ndf, kw, stride=2, padding=pad), nn.LeakyReLU(0.2, True))]
        nf = ndf
        for _ in range(1, n_layers):
            prev, nf = nf, min(nf * 2, 512)
            blocks.append(
                nn.Sequential(nn.Conv2d(prev, nf, kw, stride=2, padding=pad), _norm(nf), nn.LeakyReLU(0.2, True))
            )
        prev, nf = nf, min(nf * 2, 512)
        blocks.append(nn.Sequential(nn.Conv2d(prev, nf, kw, stride=1, padding=pad), _norm(nf), nn.LeakyReLU(0.2, True)))
        blocks.append(nn.Sequential(nn.Conv2d(nf, 1, kw, stride=1, padding=pad)))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        out = []
        for block in self.blocks:
            x = block(x)
            out.append(x)
        return out


def downsample(x: torch.Tensor) -> torch.Tensor:
    """Halve spatial size (rounding up)."""
    return F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)


class MultiscaleDiscriminator(nn.Module):
    """Discriminator ``k`` sees the input downsampled ``k`` times by 2."""

    def __init__(self, input_nc, ndf=64, n_layers=3, num_D=2):
        super().__init__()
        self.n_layers = n_layers
        self.discriminators = nn.ModuleList(NLayerDiscriminator(input_nc, ndf, n_layers) for _ in range(num_D))

    def forward(self, x):
        results = []
        for k, disc in enumerate(self.discriminators):
            results.append(disc(x))
            if k + 1 < len(self.discriminators):
                x = downsample(x)
        return results


def lsgan_loss(predictions, target_is_real: bool) -> torch.Tensor:
    """Least-squares adversarial loss, mean over scales of the per-element MSE."""
    losses = []
    for feats in predictions:
        scores = feats[-1]
        target = torch.full_like(scores, 1.0 if target_is_real else 0.0)
        losses.append(F.mse_loss(scores, target))
    return torch.stack(losses).mean()


def feature_matching_loss(fake_predictions, real_predictions, n_layers: int) -> torch.Tensor:
    """L1 between discriminator activations on fake and (detached) real inputs.

    Every scale and every layer except the final scores contributes, with
    layer weight ``4 / (n_layers + 1)`` and scale weight ``1 / num_D``.
    """
    num_d = len(fake_predictions)
    layer_w, scale_w = 4.0 / (n_layers + 1), 1.0 / num_d
    total = fake_predictions[0][0].new_zeros(())
    for fake, real in zip(fake_predictions, real_predictions):
        for f, r in zip(fake[:-1], real[:-1]):
            total = total + scale_w * layer_w * F.l1_loss(f, r.detach())
    return total
