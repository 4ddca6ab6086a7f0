"""
Networks — the residual generator G and the convolutional discriminator D.

G: head conv → ReLU → residual units → tail conv. The tail conv starts at
zero, so a fresh G predicts a zero residual and the restored image equals
its input.

D: per unit a 3×3 stride-1 conv and a 4×4 stride-2 conv, each followed by
batchnorm and leaky ReLU (slope 0.2); width doubles per unit up to 8× the
base; a dense layer and a sigmoid give one probability per image.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from nngrad import functional as F
from nngrad.layers import BatchNorm2d, Conv2d, Linear, Module, ResidualUnit
from nngrad.tensor import Tensor
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

LEAK = 0.2


class GeneratorNet(Module):
    def __init__(
        self, channels: int = 3, features: int = 64, residual_units: int = 16,
        seed: int = 0, dtype=np.float32,
    ):
        super().__init__()
        if channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {channels}")
        if residual_units < 0 or features < 1:
            raise ValueError("residual_units must be >= 0 and features >= 1")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.channels = channels
        self.features = features
        self.n_units = residual_units
        self.head = Conv2d(channels, features, 3, padding=1, rng=rng, dtype=dtype)
        for k in range(residual_units):
            self.add_module(f"unit{k}", ResidualUnit(features, rng=rng, dtype=dtype))
        self.tail = Conv2d(features, channels, 3, padding=1, rng=rng, dtype=dtype, zero_init=True)

    def units(self):
        return [getattr(self, f"unit{k}") for k in range(self.n_units)]

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"generator expects N×{self.channels}×H×W input, got {x.shape}")
        h = self.head(x).relu()
        for unit in self.units():
            h = unit(h)
        return self.tail(h)


class DiscriminatorNet(Module):
    def __init__(
        self, channels: int = 3, features: int = 64, units: int = 4,
        patch: Tuple[int, int] = (64, 64), seed: int = 0, dtype=np.float32,
    ):
        super().__init__()
        if units < 1:
            raise ValueError(f"discriminator needs at least one unit, got {units}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.channels = channels
        self.patch = tuple(patch)
        self.n_units = units

        h, w = self.patch
        in_ch = channels
        for k in range(units):
            width = features * min(2 ** k, 8)
            self.add_module(f"conv{k}a", Conv2d(in_ch, width, 3, 1, 1, rng=rng, dtype=dtype,
                                                slope=LEAK, bias=False))
            self.add_module(f"bn{k}a", BatchNorm2d(width, dtype=dtype))
            self.add_module(f"conv{k}b", Conv2d(width, width, 4, 2, 1, rng=rng, dtype=dtype,
                                                slope=LEAK, bias=False))
            self.add_module(f"bn{k}b", BatchNorm2d(width, dtype=dtype))
            h = F.conv_output_size(h, 4, 2, 1)
            w = F.conv_output_size(w, 4, 2, 1)
            if h < 1 or w < 1:
                raise ValueError(f"patch {self.patch} is too small for {units} discriminator units")
            in_ch = width
        self.dense = Linear(in_ch * h * w, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels or F.spatial_dims(x) != self.patch:
            raise ShapeError(
                f"discriminator expects N×{self.channels}×{self.patch[0]}×{self.patch[1]} input, got {x.shape}"
            )
        h = x
        for k in range(self.n_units):
            h = getattr(self, f"bn{k}a")(getattr(self, f"conv{k}a")(h)).leaky_relu(LEAK)
            h = getattr(self, f"bn{k}b")(getattr(self, f"conv{k}b")(h)).leaky_relu(LEAK)
        return self.dense(F.flatten(h)).sigmoid().reshape(-1)


def generator_forward(G: GeneratorNet, degraded: Tensor) -> Tensor:
    """Predicted quantization residual for a batch of degraded images."""
    return G(degraded)


def restore(degraded: Tensor, residual: Tensor) -> Tensor:
    """Ĵ = clamp(J̃ + residual, 0, 1)."""
    return (degraded + residual).clip(0.0, 1.0)


def discriminator_forward(D: DiscriminatorNet, images: Tensor) -> Tensor:
    """Probability per image that it was captured in proper light."""
    return D(images)


def build_networks(
    channels: int, features: int, residual_units: int, disc_features: int,
    disc_units: int, patch: Tuple[int, int], seed: int, dtype=np.float32,
    discriminator: Optional[bool] = True,
) -> Tuple[GeneratorNet, Optional[DiscriminatorNet]]:
    G = GeneratorNet(channels, features, residual_units, seed=seed, dtype=dtype)
    D = DiscriminatorNet(channels, disc_features, disc_units, patch, seed=seed, dtype=dtype) if discriminator else None
    logger.info(
        f"Built G ({residual_units} units, {G.param_count()} params)"
        + (f" and D ({disc_units} units, {D.param_count()} params)" if D is not None else "")
    )
    return G, D
