"""
Raster model — an H×W×C image with real channel values in [0, 1], plus the
quantization operator and the quality metric every other module shares.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from utils.errors import DimensionMismatchError

logger = logging.getLogger(__name__)

# Half an 8-bit code step: guards every division by a pixel intensity.
RATIO_EPS = 1.0 / 510.0

DEFAULT_Q = 1.0 / 255.0


@dataclass(frozen=True)
class QuantSpec:
    q: float = DEFAULT_Q

    def __post_init__(self):
        if not (self.q > 0 and math.isfinite(self.q)):
            raise ValueError(f"quantization step must be positive, got {self.q}")

    @property
    def levels(self) -> Optional[int]:
        """Integer level count 1/q when q emulates a b-bit grid (e.g. 255), else None."""
        n = 1.0 / self.q
        k = round(n)
        if k >= 1 and abs(n - k) <= 1e-9 * n:
            return int(k)
        return None


def quantize(x: Union[float, np.ndarray], q: float = DEFAULT_Q) -> Union[float, np.ndarray]:
    """
    Q(x) = q * floor(x / q + 0.5), round-half-up.

    On integral level grids the step count is divided by the level count, so
    that k/255 produced here and k/255 read back from an 8-bit file agree bit
    for bit.
    """
    arr = np.asarray(x, dtype=np.float64)
    levels = QuantSpec(q).levels
    if levels is not None:
        out = np.floor(arr * levels + 0.5) / levels
    else:
        out = np.floor(arr / q + 0.5) * q
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable image; `data` is (height, width, channels) float64."""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"Raster needs H×W×1 or H×W×3 data, got shape {arr.shape}")
        if arr.size and (np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("Raster values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> Raster:
        """Build a Raster from any real array, clamping into [0, 1]."""
        return cls(np.clip(np.nan_to_num(np.asarray(arr, dtype=np.float64)), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.data.shape

    def crop(self, top: int, left: int, height: int, width: int) -> Raster:
        return Raster(self.data[top:top + height, left:left + width, :])

    def quantized(self, q: float = DEFAULT_Q) -> Raster:
        return Raster(quantize(self.data, q))

    def same_dims(self, other: Raster) -> bool:
        return self.shape == other.shape


def split_luma(r: Raster) -> Tuple[Raster, np.ndarray]:
    """
    Split into value-channel luma (per-pixel channel max) and chroma ratios.
    Pixels at or below RATIO_EPS get ratios of 1 on every channel.
    """
    luma = r.data.max(axis=2, keepdims=True)
    ratios = np.where(luma > RATIO_EPS, r.data / np.maximum(luma, RATIO_EPS), 1.0)
    return Raster(luma), ratios


def recombine_luma(luma: Raster, ratios: np.ndarray) -> Raster:
    """Inverse of split_luma: multiply the (possibly changed) luma back into the ratios."""
    if luma.channels != 1 or ratios.shape[:2] != (luma.height, luma.width):
        raise DimensionMismatchError(
            f"cannot recombine luma {luma.shape} with ratios {ratios.shape}"
        )
    return Raster.from_array(luma.data * ratios)


def psnr(a: Raster, b: Raster) -> float:
    """Peak signal-to-noise ratio in dB for unit peak; math.inf when identical."""
    if not a.same_dims(b):
        raise DimensionMismatchError(f"psnr needs equal dimensions, got {a.shape} and {b.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
