"""
LAIC models — options, the assembled linear program, and solver results.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy import sparse

from models.raster import RATIO_EPS

logger = logging.getLogger(__name__)

AUTO = "auto"
SOLVERS = ("auto", "simplex", "highs")

GainGrid = Union[None, str, Tuple[int, int]]


def parse_gain_grid(raw) -> GainGrid:
    """'auto' | 'none' | 'HxW' (or a tuple) -> normalised gain-grid value."""
    if raw is None:
        return None
    if isinstance(raw, tuple):
        h, w = int(raw[0]), int(raw[1])
    else:
        text = str(raw).strip().lower()
        if text == AUTO:
            return AUTO
        if text in ("", "none", "off", "full"):
            return None
        try:
            h, w = (int(part) for part in text.split("x"))
        except ValueError as e:
            raise ValueError(f"gain_grid must be 'auto', 'none' or HxW, got {raw!r}") from e
    if h < 1 or w < 1:
        raise ValueError(f"gain_grid dimensions must be positive, got {h}x{w}")
    return (h, w)


def format_gain_grid(grid: GainGrid) -> str:
    if grid is None:
        return "none"
    if grid == AUTO:
        return AUTO
    return f"{grid[0]}x{grid[1]}"


@dataclass(frozen=True)
class LaicOptions:
    lambda2: float = 0.05
    radius: int = 7
    eps: float = RATIO_EPS
    gain_grid: GainGrid = AUTO
    solver_tol: float = 1e-7
    solver: str = AUTO
    # auto mode: reference simplex up to this many LP variables, HiGHS beyond
    simplex_max_vars: int = 400

    def __post_init__(self):
        if not self.lambda2 >= 0.0:
            raise ValueError(f"lambda2 must be >= 0, got {self.lambda2}")
        if int(self.radius) < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")
        if not self.solver_tol > 0.0:
            raise ValueError(f"solver_tol must be > 0, got {self.solver_tol}")
        if not self.eps > 0.0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        object.__setattr__(self, "gain_grid", parse_gain_grid(self.gain_grid))
        object.__setattr__(self, "radius", int(self.radius))


class Sense(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration-limit"
    UNBOUNDED = "unbounded"


@dataclass(eq=False)
class LaicProblem:
    """
    Variables: H·W pixel values J̃ (row-major), then one auxiliary per horizontal
    gain difference (H×(W−1)), then one per vertical difference ((H−1)×W).
    """
    height: int
    width: int
    objective: np.ndarray
    A: sparse.csr_matrix
    senses: np.ndarray          # array of Sense values, one per row
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sign_map: np.ndarray        # s(i) ∈ {−1, 0, +1}, H×W
    luma: np.ndarray            # constant J_a, H×W
    local_mean: np.ndarray      # J̄_a, H×W
    mean_op: sparse.csr_matrix  # box-mean operator M with J̄ = M·J̃
    gain_scale: np.ndarray      # 1 / max(J_a, eps), H×W
    lambda2: float
    row_kinds: np.ndarray = field(default_factory=lambda: np.array([], dtype=object))

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def n_horizontal(self) -> int:
        return self.height * (self.width - 1)

    @property
    def n_vertical(self) -> int:
        return (self.height - 1) * self.width

    @property
    def n_vars(self) -> int:
        return self.n_pixels + self.n_horizontal + self.n_vertical

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def pixel_values(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x[: self.n_pixels]).reshape(self.height, self.width)


@dataclass(eq=False)
class LpSolution:
    values: np.ndarray
    objective_value: float
    status: LpStatus
    iterations: int = 0
    backend: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == LpStatus.OPTIMAL
