"""
Pipeline configuration — one flat record holding every tunable of the
toolkit, convertible to the per-module option types.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Any, Dict

from models.degrade import DegradeParams, ParamRanges
from models.laic import LaicOptions, format_gain_grid, parse_gain_grid
from models.raster import DEFAULT_Q, RATIO_EPS
from models.train_config import TrainConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def parse_float(raw: Any) -> float:
    """Plain floats or simple fractions such as '1/30'."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    text = str(raw).strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_int(raw: Any) -> int:
    if isinstance(raw, bool):
        raise ValueError("expected an integer, got a boolean")
    if isinstance(raw, int):
        return raw
    value = parse_float(raw)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {raw!r}")
    return int(value)


@dataclass(frozen=True)
class PipelineConfig:
    # synthesis
    dim_gain: float = 1.0 / 30.0
    gamma_ratio: float = 1.3
    q: float = DEFAULT_Q
    noise_sigma: float = 0.25
    seed: int = 0
    param_sampling: bool = True
    dim_gain_min: float = 1.0 / 30.0
    dim_gain_max: float = 0.5
    gamma_ratio_min: float = 0.8
    gamma_ratio_max: float = 1.6
    sigma_min: float = 0.0
    sigma_max: float = 0.5
    patch_height: int = 64
    patch_width: int = 64
    # tone mapping
    lambda2: float = 0.05
    radius: int = 7
    laic_eps: float = RATIO_EPS
    gain_grid: str = "auto"
    solver_tol: float = 1e-7
    solver: str = "auto"
    # training
    iterations: int = 1000
    batch_size: int = 16
    adv_lambda: float = 1e-3
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    residual_units: int = 16
    features: int = 64
    disc_features: int = 64
    disc_units: int = 4
    channels: int = 3
    checkpoint_interval: int = 100
    # inference / runtime
    tile: int = 128
    tile_overlap: int = 16
    jobs: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "gain_grid", format_gain_grid(parse_gain_grid(self.gain_grid)))
        except ValueError as e:
            raise ConfigError("gain_grid", str(e)) from e
        for name, build in (
            ("dim_gain", self.degrade_params),
            ("dim_gain_min", self.param_ranges),
            ("lambda2", self.laic_options),
            ("iterations", self.train_config),
        ):
            try:
                build()
            except ValueError as e:
                raise ConfigError(_key_from_message(str(e), name), str(e)) from e
        if self.tile < 8:
            raise ConfigError("tile", f"must be >= 8, got {self.tile}")
        if not 0 <= self.tile_overlap < self.tile // 2:
            raise ConfigError("tile_overlap", f"must lie in [0, tile/2), got {self.tile_overlap}")
        if self.jobs < 1:
            raise ConfigError("jobs", f"must be >= 1, got {self.jobs}")

    # ------------------------------------------------------------------
    # Keys and coercion
    # ------------------------------------------------------------------

    @classmethod
    def keys(cls) -> list:
        return [f.name for f in fields(cls)]

    @classmethod
    def coerce(cls, key: str, raw: Any) -> Any:
        """Convert a raw (usually textual) value to the type of `key`."""
        types = {f.name: f.type for f in fields(cls)}
        if key not in types:
            raise ConfigError(key, "unknown configuration key")
        kind = types[key]
        try:
            if kind == "bool":
                return parse_bool(raw)
            if kind == "int":
                return parse_int(raw)
            if kind == "float":
                value = parse_float(raw)
                if not math.isfinite(value):
                    raise ValueError(f"expected a finite number, got {raw!r}")
                return value
            return str(raw).strip()
        except ValueError as e:
            raise ConfigError(key, str(e)) from e

    def with_values(self, values: Dict[str, Any]) -> PipelineConfig:
        coerced = {key: self.coerce(key, raw) for key, raw in values.items()}
        return replace(self, **coerced)

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self.keys()}

    # ------------------------------------------------------------------
    # Module option types
    # ------------------------------------------------------------------

    def degrade_params(self) -> DegradeParams:
        return DegradeParams(
            dim_gain=self.dim_gain, gamma_ratio=self.gamma_ratio, q=self.q,
            noise_sigma=self.noise_sigma, seed=self.seed,
        )

    def param_ranges(self) -> ParamRanges:
        return ParamRanges(
            dim_gain=(self.dim_gain_min, self.dim_gain_max),
            gamma_ratio=(self.gamma_ratio_min, self.gamma_ratio_max),
            noise_sigma=(self.sigma_min, self.sigma_max),
            q=self.q,
        )

    def laic_options(self) -> LaicOptions:
        return LaicOptions(
            lambda2=self.lambda2, radius=self.radius, eps=self.laic_eps,
            gain_grid=self.gain_grid, solver_tol=self.solver_tol, solver=self.solver,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations, batch_size=self.batch_size,
            patch_height=self.patch_height, patch_width=self.patch_width,
            adv_lambda=self.adv_lambda, lr_g=self.lr_g, lr_d=self.lr_d,
            beta1=self.beta1, beta2=self.beta2, seed=self.seed,
            residual_units=self.residual_units, features=self.features,
            disc_features=self.disc_features, disc_units=self.disc_units,
            channels=self.channels, checkpoint_interval=self.checkpoint_interval,
            param_sampling=self.param_sampling, degrade=self.degrade_params(),
            ranges=self.param_ranges(),
        )


def _key_from_message(message: str, fallback: str) -> str:
    """Validation messages start with the offending field name."""
    head = message.split(" ", 1)[0]
    if head in PipelineConfig.keys():
        return head
    aliases = {"eps": "laic_eps"}
    return aliases.get(head, fallback)
