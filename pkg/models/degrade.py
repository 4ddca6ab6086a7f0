"""
Degradation models — the formation-model scalars, the ranges they are drawn
from during training-set generation, and the (ground truth, degraded) samples.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.raster import DEFAULT_Q, Raster
from utils.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DegradeParams:
    """
    dim_gain is a^γ₂ and gamma_ratio is γ₂/γ₁; those products are the only
    combinations of a, γ₁, γ₂ the formation model ever uses.
    noise_sigma is measured in units of q.
    """
    dim_gain: float = 1.0 / 30.0
    gamma_ratio: float = 1.3
    q: float = DEFAULT_Q
    noise_sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.dim_gain <= 1.0):
            raise ValueError(f"dim_gain must lie in (0, 1], got {self.dim_gain}")
        if not (self.gamma_ratio > 0.0 and math.isfinite(self.gamma_ratio)):
            raise ValueError(f"gamma_ratio must be positive, got {self.gamma_ratio}")
        if not (self.q > 0.0 and math.isfinite(self.q)):
            raise ValueError(f"q must be positive, got {self.q}")
        if not (self.noise_sigma >= 0.0 and math.isfinite(self.noise_sigma)):
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")

    @classmethod
    def from_dict(cls, row: dict) -> DegradeParams:
        return cls(
            dim_gain=float(row.get("dim_gain", 1.0 / 30.0)),
            gamma_ratio=float(row.get("gamma_ratio", 1.3)),
            q=float(row.get("q", DEFAULT_Q)),
            noise_sigma=float(row.get("noise_sigma", 0.25)),
            seed=int(row.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "dim_gain": self.dim_gain,
            "gamma_ratio": self.gamma_ratio,
            "q": self.q,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @property
    def noise_std(self) -> float:
        """Absolute standard deviation of n(i)."""
        return self.noise_sigma * self.q


@dataclass(frozen=True)
class ParamRanges:
    """Ranges per-pair parameters are drawn from when training data is synthesized."""
    dim_gain: Tuple[float, float] = (1.0 / 30.0, 0.5)
    gamma_ratio: Tuple[float, float] = (0.8, 1.6)
    noise_sigma: Tuple[float, float] = (0.0, 0.5)
    q: float = DEFAULT_Q

    def __post_init__(self):
        for name in ("dim_gain", "gamma_ratio", "noise_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: [{lo}, {hi}]")
        # validates the corners
        DegradeParams(self.dim_gain[0], self.gamma_ratio[0], self.q, self.noise_sigma[0])
        DegradeParams(self.dim_gain[1], self.gamma_ratio[1], self.q, self.noise_sigma[1])


@dataclass(eq=False)
class TrainingSample:
    ground_truth: Raster          # J, the unmodified crop
    degraded: Raster              # J̃, posterized after un-stretching
    noise_map: np.ndarray         # n(i), clamping folded in
    params: DegradeParams
    capture: Optional[Raster] = None   # J_a, the dim capture
    origin: Tuple[int, int] = (0, 0)   # crop (top, left) in the source image

    def __post_init__(self):
        if not self.ground_truth.same_dims(self.degraded):
            raise DimensionMismatchError(
                f"ground truth {self.ground_truth.shape} and degraded {self.degraded.shape} differ"
            )
        if self.noise_map.shape != self.degraded.shape:
            raise DimensionMismatchError(
                f"noise map {self.noise_map.shape} does not match patch {self.degraded.shape}"
            )


@dataclass(eq=False)
class SampleBatch:
    """
    Samples stacked into N×C×H×W arrays; per-sample scalars are broadcastable
    N×1×1×1 arrays so losses can mix parameter draws inside one batch.
    """
    ground_truth: np.ndarray
    degraded: np.ndarray
    noise: np.ndarray
    dim_gain: np.ndarray
    gamma_ratio: np.ndarray
    q: np.ndarray
    params: List[DegradeParams] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: Sequence[TrainingSample], dtype=np.float32) -> SampleBatch:
        if not samples:
            raise ValueError("cannot batch an empty sample list")
        shape = samples[0].degraded.shape
        for s in samples:
            if s.degraded.shape != shape:
                raise DimensionMismatchError(f"batch mixes patch shapes {shape} and {s.degraded.shape}")

        def stack(arrays):
            return np.stack([np.transpose(a, (2, 0, 1)) for a in arrays]).astype(dtype)

        def scalars(values):
            return np.asarray(values, dtype=dtype).reshape(-1, 1, 1, 1)

        return cls(
            ground_truth=stack([s.ground_truth.data for s in samples]),
            degraded=stack([s.degraded.data for s in samples]),
            noise=stack([s.noise_map for s in samples]),
            dim_gain=scalars([s.params.dim_gain for s in samples]),
            gamma_ratio=scalars([s.params.gamma_ratio for s in samples]),
            q=scalars([s.params.q for s in samples]),
            params=[s.params for s in samples],
        )

    def __len__(self) -> int:
        return self.degraded.shape[0]


@dataclass(frozen=True)
class ManifestEntry:
    """One manifest line; parameter columns left out fall back to the configured values."""
    path: str
    dim_gain: Optional[float] = None
    gamma_ratio: Optional[float] = None
    q: Optional[float] = None
    noise_sigma: Optional[float] = None
    seed: Optional[int] = None

    @property
    def has_params(self) -> bool:
        return self.dim_gain is not None

    def params_or(self, defaults: DegradeParams) -> DegradeParams:
        merged = defaults.to_dict()
        for name in ("dim_gain", "gamma_ratio", "q", "noise_sigma", "seed"):
            value = getattr(self, name)
            if value is not None:
                merged[name] = value
        return DegradeParams.from_dict(merged)
