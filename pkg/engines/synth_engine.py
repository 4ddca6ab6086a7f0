"""
Synthesis Engine — builds (ground truth, degraded) training pairs from
ordinary images by emulating a capture under dimmed light.

Pipeline per pair:
  1. Crop a random patch J from the source image.
  2. Capture: J_a = Q(dim_gain · J^gamma_ratio) + n, clamped to [0, 1].
  3. Un-stretch: J̃ = (J_a / dim_gain)^(1 / gamma_ratio), clamped to [0, 1].
J̃ is correctly exposed but posterized; J − J̃ is what the generator learns.
"""
from __future__ import annotations

import logging
import math
from typing import Optional, Tuple

import numpy as np

from models.degrade import DegradeParams, ParamRanges, TrainingSample
from models.raster import Raster, quantize
from utils.errors import PatchTooLargeError

logger = logging.getLogger(__name__)

DEFAULT_PATCH = (64, 64)


def pair_rng(seed: int, *keys: int, stream: int = 0) -> np.random.Generator:
    """
    Independent stream for one pair, derived from a master seed and integer keys.

    A non-zero stream puts the keys in their own namespace (a SeedSequence
    spawn key), so its draws never coincide with those of any plain key tuple.
    """
    entropy = [int(seed), *(int(k) for k in keys)]
    if stream:
        return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(int(stream),)))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_params(ranges: ParamRanges, rng: np.random.Generator, seed: int = 0) -> DegradeParams:
    """Draw dim_gain log-uniformly, gamma_ratio and noise_sigma uniformly."""
    lo, hi = ranges.dim_gain
    dim_gain = float(math.exp(rng.uniform(math.log(lo), math.log(hi)))) if hi > lo else lo
    gamma_ratio = float(rng.uniform(*ranges.gamma_ratio))
    noise_sigma = float(rng.uniform(*ranges.noise_sigma))
    return DegradeParams(
        dim_gain=min(dim_gain, 1.0),
        gamma_ratio=gamma_ratio,
        q=ranges.q,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def capture_lowlight(
    J: Raster, p: DegradeParams, rng: Optional[np.random.Generator] = None
) -> Tuple[Raster, np.ndarray]:
    """
    Emulate the dim capture. Returns (J_a, noise_map) with
    J_a == quantize(dim_gain · J^gamma_ratio) + noise_map holding exactly.
    """
    if rng is None:
        rng = np.random.default_rng(p.seed)
    clean = quantize(p.dim_gain * np.power(J.data, p.gamma_ratio), p.q)
    if p.noise_std > 0.0:
        noise = rng.normal(0.0, p.noise_std, size=J.shape)
    else:
        noise = np.zeros(J.shape)
    # clamping is absorbed into the stored noise, then the capture is rebuilt from it
    noise_map = np.clip(clean + noise, 0.0, 1.0) - clean
    captured = clean + noise_map
    return Raster(np.clip(captured, 0.0, 1.0)), noise_map


def unstretch(J_a: Raster, p: DegradeParams) -> Raster:
    """Invert dimming and gamma: J̃ = (J_a / dim_gain)^(1 / gamma_ratio)."""
    stretched = np.minimum(J_a.data / p.dim_gain, 1.0)
    return Raster(np.clip(np.power(stretched, 1.0 / p.gamma_ratio), 0.0, 1.0))


def make_training_pair(
    J: Raster,
    p: DegradeParams,
    patch: Tuple[int, int] = DEFAULT_PATCH,
    rng: Optional[np.random.Generator] = None,
) -> TrainingSample:
    """Crop a random patch and degrade it; the crop itself is the ground truth."""
    if rng is None:
        rng = np.random.default_rng(p.seed)
    ph, pw = patch
    if ph > J.height or pw > J.width or ph < 1 or pw < 1:
        raise PatchTooLargeError(
            f"patch {ph}x{pw} does not fit image {J.height}x{J.width}"
        )
    top = int(rng.integers(0, J.height - ph + 1))
    left = int(rng.integers(0, J.width - pw + 1))
    truth = J.crop(top, left, ph, pw)

    captured, noise_map = capture_lowlight(truth, p, rng)
    degraded = unstretch(captured, p)
    return TrainingSample(
        ground_truth=truth,
        degraded=degraded,
        noise_map=noise_map,
        params=p,
        capture=captured,
        origin=(top, left),
    )


def residual(sample: TrainingSample) -> np.ndarray:
    """Quantization residual E(J̃) = J − J̃, values in [−1, 1]."""
    return sample.ground_truth.data - sample.degraded.data


def count_capture_levels(sample: TrainingSample) -> int:
    """Number of distinct pre-noise levels in the capture (posterization depth)."""
    clean = sample.capture.data - sample.noise_map
    return int(np.unique(np.round(clean / sample.params.q)).size)
