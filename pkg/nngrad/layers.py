"""
Layers — parameter-owning modules built on the functional primitives.
"""
from __future__ import annotations

import contextlib
import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from nngrad import functional as F
from nngrad.tensor import Tensor
from utils.errors import ShapeError

logger = logging.getLogger(__name__)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """
    Tracks child modules, parameters (Tensors with requires_grad) and
    buffers (plain arrays registered through `register_buffer`).
    """

    def __init__(self):
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: Module) -> None:
        setattr(self, name, module)

    # ------------------------------------------------------------------
    # Traversal
    # ------------------------------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, Module]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, p in mod._params.items():
                yield (f"{mod_name}.{name}" if mod_name else name), p

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for mod_name, mod in self.named_modules(prefix):
            for name, b in mod._buffers.items():
                yield (f"{mod_name}.{name}" if mod_name else name), b

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> Module:
        for _, mod in self.named_modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    # ------------------------------------------------------------------
    # State
    # ------------------------------------------------------------------

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if strict:
            missing = expected - set(state)
            unexpected = set(state) - expected
            if missing or unexpected:
                raise ShapeError(
                    f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(unexpected)[:5]}"
                )
        for name, value in state.items():
            target = params[name].data if name in params else buffers.get(name)
            if target is None:
                continue
            if target.shape != np.shape(value):
                raise ShapeError(f"{name}: stored shape {np.shape(value)} != model shape {target.shape}")
            # in-place so optimizers and closures keep their references
            target[...] = value

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(
        self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
        padding: int = 0, rng: Optional[np.random.Generator] = None,
        dtype=np.float32, zero_init: bool = False, slope: float = 0.0, bias: bool = True,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (out_channels, in_channels, kernel, kernel)
        if zero_init:
            w = np.zeros(shape)
        else:
            w = rng.normal(0.0, F.kaiming_std(in_channels * kernel * kernel, slope), size=shape)
        self.weight = parameter(w.astype(dtype))
        # a conv feeding batchnorm has its bias cancelled by the mean subtraction
        self.bias = parameter(np.zeros(out_channels, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.gamma = parameter(np.ones(channels, dtype=dtype))
        self.beta = parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))
        object.__setattr__(self, "update_stats", True)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, update_stats=self.update_stats,
        )


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        w = rng.normal(0.0, 1.0 / np.sqrt(in_features), size=(out_features, in_features))
        self.weight = parameter(w.astype(dtype))
        self.bias = parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class ResidualUnit(Module):
    """conv → BN → ReLU → conv → BN, added to the input."""

    def __init__(self, features: int, rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(features, features, 3, padding=1, rng=rng, dtype=dtype, bias=False)
        self.bn1 = BatchNorm2d(features, dtype=dtype)
        self.conv2 = Conv2d(features, features, 3, padding=1, rng=rng, dtype=dtype, bias=False)
        self.bn2 = BatchNorm2d(features, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.bn1(self.conv1(x)).relu()
        h = self.bn2(self.conv2(h))
        return x + h


@contextlib.contextmanager
def frozen_stats(module: Module) -> Iterator[None]:
    """Batch statistics are still used in training mode, but running buffers stay put."""
    norms = [m for _, m in module.named_modules() if isinstance(m, BatchNorm2d)]
    previous = [m.update_stats for m in norms]
    for m in norms:
        object.__setattr__(m, "update_stats", False)
    try:
        yield
    finally:
        for m, flag in zip(norms, previous):
            object.__setattr__(m, "update_stats", flag)
