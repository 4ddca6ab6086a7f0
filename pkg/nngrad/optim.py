"""
Adam optimizer with a serialisable state for checkpoint resume.

The moment arrays go into the checkpoint as float32 records; the step count
is an exact integer and travels separately (the checkpoint meta record).
"""
from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Dict, Iterable, Tuple

import numpy as np

from nngrad.tensor import Tensor
from utils.errors import ShapeError

logger = logging.getLogger(__name__)


class Adam:
    def __init__(
        self,
        named_params: Iterable[Tuple[str, Tensor]],
        lr: float = 1e-4,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params: "OrderedDict[str, Tensor]" = OrderedDict(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / correction1) * m / (np.sqrt(v / correction2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state: Dict[str, np.ndarray] = OrderedDict()
        for name in self.params:
            state[f"m.{name}"] = self.m[name].copy()
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        if step_count < 0:
            raise ValueError(f"step_count must be >= 0, got {step_count}")
        self.step_count = int(step_count)
        for name in self.params:
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"{slot}.{name}"
                if key not in state:
                    raise ShapeError(f"optimizer state lacks {key}")
                value = np.asarray(state[key])
                if value.shape != store[name].shape:
                    raise ShapeError(f"{key}: stored shape {value.shape} != {store[name].shape}")
                store[name][...] = value
        logger.debug(f"Restored Adam state at step {self.step_count}")
