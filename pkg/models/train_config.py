"""
Training models — hyperparameters for the adversarial loop and the
checkpoint snapshot it persists.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from models.degrade import DegradeParams, ParamRanges

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 2


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 16
    patch_height: int = 64
    patch_width: int = 64
    adv_lambda: float = 1e-3
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    residual_units: int = 16
    features: int = 64
    disc_features: int = 64
    disc_units: int = 4
    channels: int = 3
    checkpoint_interval: int = 100
    # per-pair parameters: drawn from `ranges` when sampling, else `degrade` for every pair
    param_sampling: bool = True
    degrade: DegradeParams = field(default_factory=DegradeParams)
    ranges: ParamRanges = field(default_factory=ParamRanges)

    def __post_init__(self):
        positive = (
            "iterations", "batch_size", "patch_height", "patch_width", "features",
            "disc_features", "disc_units", "checkpoint_interval",
        )
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.residual_units < 0:
            raise ValueError(f"residual_units must be >= 0, got {self.residual_units}")
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not self.adv_lambda >= 0:
            raise ValueError(f"adv_lambda must be >= 0, got {self.adv_lambda}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if min(self.patch_height, self.patch_width) < 2 ** self.disc_units:
            raise ValueError(
                f"disc_units {self.disc_units} needs patches of at least {2 ** self.disc_units} pixels per side"
            )

    @property
    def patch(self) -> Tuple[int, int]:
        return (self.patch_height, self.patch_width)

    def to_dict(self) -> dict:
        ranges = self.ranges
        return {
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "patch_height": self.patch_height,
            "patch_width": self.patch_width,
            "adv_lambda": self.adv_lambda,
            "lr_g": self.lr_g,
            "lr_d": self.lr_d,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "seed": self.seed,
            "residual_units": self.residual_units,
            "features": self.features,
            "disc_features": self.disc_features,
            "disc_units": self.disc_units,
            "channels": self.channels,
            "checkpoint_interval": self.checkpoint_interval,
            "param_sampling": self.param_sampling,
            "degrade": self.degrade.to_dict(),
            "ranges": {
                "dim_gain": list(ranges.dim_gain),
                "gamma_ratio": list(ranges.gamma_ratio),
                "noise_sigma": list(ranges.noise_sigma),
                "q": ranges.q,
            },
        }

    @classmethod
    def from_dict(cls, row: dict) -> TrainConfig:
        defaults = cls()
        ranges_row = row.get("ranges") or {}
        base = defaults.ranges
        ranges = ParamRanges(
            dim_gain=tuple(ranges_row.get("dim_gain", base.dim_gain)),
            gamma_ratio=tuple(ranges_row.get("gamma_ratio", base.gamma_ratio)),
            noise_sigma=tuple(ranges_row.get("noise_sigma", base.noise_sigma)),
            q=float(ranges_row.get("q", base.q)),
        )
        scalars = {}
        for name, value in defaults.to_dict().items():
            if name in ("degrade", "ranges"):
                continue
            raw = row.get(name, value)
            scalars[name] = type(value)(raw) if not isinstance(value, bool) else bool(raw)
        return cls(
            degrade=DegradeParams.from_dict(row.get("degrade") or {}),
            ranges=ranges,
            **scalars,
        )


@dataclass(eq=False)
class Checkpoint:
    """Everything needed to resume training or run inference."""
    generator: Dict[str, np.ndarray]
    discriminator: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_g: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_d: Dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)
    version: int = CHECKPOINT_VERSION
    # Adam step counts keyed "opt_g" / "opt_d"
    optimizer_steps: Dict[str, int] = field(default_factory=dict)
