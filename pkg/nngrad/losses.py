"""
Losses — adversarial, discriminator and quasi-ℓ∞ barrier losses.

The barrier loss measures, per pixel, how far the restored image leaves the
quantization interval of the capture:
    C(i) = dim_gain·J̃(i)^γr − dim_gain·Ĵ(i)^γr − n(i)
    excess(i) = max(|C(i)| − q/2, 0)
    loss = mean over batch of Σ_pixels −log(1 − min(excess, 1 − δ))
It is exactly zero while every pixel stays inside its interval.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from models.degrade import SampleBatch
from nngrad.tensor import Tensor

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
BARRIER_DELTA = 1e-6
POWER_FLOOR = 1e-6

Scalar = Union[Tensor, float]


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def _safe_log(p: Tensor) -> Tensor:
    return p.clip(PROB_CLAMP, 1.0 - PROB_CLAMP).log()


def loss_adv(d_out) -> Tensor:
    """−log D(Ĵ), averaged over the batch."""
    d = _as_tensor(d_out)
    return -_safe_log(d).mean()


def loss_disc(d_real, d_fake) -> Tensor:
    """Binary cross entropy −[log D(J) + log(1 − D(Ĵ))], averaged over the batch."""
    real = _as_tensor(d_real)
    fake = _as_tensor(d_fake)
    return -(_safe_log(real).mean() + _safe_log(1.0 - fake).mean())


def capture_residual(restored: Tensor, batch: SampleBatch) -> Tensor:
    """C(i) for every pixel of every batch item."""
    dtype = restored.dtype
    gain = batch.dim_gain.astype(dtype)
    gamma = batch.gamma_ratio.astype(dtype)
    degraded_term = gain * np.power(np.maximum(batch.degraded.astype(dtype), POWER_FLOOR), gamma)
    restored_term = (restored.clip(POWER_FLOOR, None) ** gamma) * gain
    return (Tensor(degraded_term) - restored_term) - Tensor(batch.noise.astype(dtype))


def loss_linf(restored: Tensor, batch: SampleBatch) -> Tensor:
    """Quasi-ℓ∞ barrier: per-sample pixel sum, averaged over the batch."""
    dtype = restored.dtype
    half_step = (batch.q.astype(dtype) * 0.5)
    excess = (capture_residual(restored, batch).abs() - half_step).relu().clip(None, 1.0 - BARRIER_DELTA)
    barrier = -((1.0 - excess).log())
    per_sample = barrier.sum(axis=(1, 2, 3))
    return per_sample.mean()


def loss_generator_total(l_inf: Scalar, l_adv: Scalar, adv_lambda: float) -> Scalar:
    """L_G = L_∞ + λ·L_adv."""
    if adv_lambda < 0:
        raise ValueError(f"adversarial weight must be >= 0, got {adv_lambda}")
    return l_inf + l_adv * adv_lambda


@dataclass(frozen=True)
class LossBundle:
    l_inf: float
    l_adv: float
    l_gen: float
    l_disc: float

    def to_dict(self) -> dict:
        return {"l_inf": self.l_inf, "l_adv": self.l_adv, "l_gen": self.l_gen, "l_disc": self.l_disc}

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.to_dict().values())
