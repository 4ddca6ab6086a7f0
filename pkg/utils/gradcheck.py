"""
Finite-difference gradient checking for nngrad graphs.

Central differences with step 1e-5; intended for float64 networks.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from nngrad.tensor import Tensor

logger = logging.getLogger(__name__)

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a − n| scaled by the larger gradient magnitude of the two (at least floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(float(np.abs(a).max()), float(np.abs(n).max()), floor)
    return float(np.abs(a - n).max() / scale)


def numeric_grad(
    loss_fn: Callable[[], float],
    target: Tensor,
    step: float = STEP,
    indices: Optional[Iterable[Tuple[int, ...]]] = None,
) -> Tuple[np.ndarray, list]:
    """Central-difference gradient of loss_fn w.r.t. target (all or selected entries)."""
    data = target.data
    grad = np.zeros_like(data, dtype=np.float64)
    entries = list(indices) if indices is not None else list(np.ndindex(data.shape))
    for idx in entries:
        original = data[idx]
        data[idx] = original + step
        plus = loss_fn()
        data[idx] = original - step
        minus = loss_fn()
        data[idx] = original
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad, entries


def check_gradients(
    build_loss: Callable[[], Tensor],
    named_targets: Iterable[Tuple[str, Tensor]],
    step: float = STEP,
    max_entries: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> Dict[str, float]:
    """
    Compare analytic gradients against central differences.

    build_loss re-runs the forward pass and returns a scalar Tensor; it must
    not mutate state that affects later calls (e.g. running statistics).
    max_entries > 0 samples that many entries per target.
    Returns the relative error per target name.
    """
    targets = list(named_targets)
    for _, t in targets:
        t.grad = None
    build_loss().backward()

    def scalar() -> float:
        return float(build_loss().data)

    errors: Dict[str, float] = {}
    for name, t in targets:
        indices = None
        if max_entries and t.size > max_entries:
            gen = rng if rng is not None else np.random.default_rng(0)
            flat = gen.choice(t.size, size=max_entries, replace=False)
            indices = [np.unravel_index(int(i), t.shape) for i in flat]
        numeric, entries = numeric_grad(scalar, t, step, indices)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        a = np.array([analytic[i] for i in entries])
        n = np.array([numeric[i] for i in entries])
        errors[name] = relative_error(a, n)
        logger.debug(f"gradcheck {name}: rel err {errors[name]:.2e} over {len(entries)} entries")
    return errors
