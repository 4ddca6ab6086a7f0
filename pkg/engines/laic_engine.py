"""
LAIC Engine — locally adaptive illumination compensation.

The enhanced luma J̃ is the solution of a linear program:
  minimize   Σ TV(gain) − λ₂ Σ s(i)·(J̃(i) − J̄(i))
  subject to 0 ≤ J̃(i) ≤ 1
             J̃(i) − J̄(i) ≤ 0  where s(i) = −1
             J̃(i) − J̄(i) ≥ 0  where s(i) = +1
             J̃(i) − J̄(i) = 0  where s(i) = 0
with gain g(i) = J̃(i) / max(J_a(i), eps), J̄ the clipped box mean of J̃,
s(i) = sgn(J_a(i) − J̄_a(i)), and each |gain difference| carried by an
auxiliary variable t with rows t ≥ +d and t ≥ −d.
"""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage, sparse

from engines.lp_engine import solve_highs, solve_simplex
from models.laic import AUTO, GainGrid, LaicOptions, LaicProblem, LpSolution, LpStatus, Sense
from models.raster import Raster, recombine_luma, split_luma
from utils.errors import SolverError

logger = logging.getLogger(__name__)

# sign ties: |J_a − J̄_a| at or below this counts as equal
SIGN_TOL = 1e-12
AUTO_GRID = (64, 64)
AUTO_GRID_MIN_PIXELS = 128 * 128


# ---------------------------------------------------------------------------
# Local means
# ---------------------------------------------------------------------------

def local_mean(J: Raster, radius: int) -> Raster:
    """Box mean over the (2·radius+1)² window, clipped at the image borders."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    size = (2 * radius + 1, 2 * radius + 1, 1)
    sums = ndimage.uniform_filter(J.data, size=size, mode="constant", cval=0.0)
    counts = ndimage.uniform_filter(np.ones(J.shape), size=size, mode="constant", cval=0.0)
    return Raster.from_array(sums / counts)


def box_mean_operator(height: int, width: int, radius: int) -> sparse.csr_matrix:
    """Sparse M with (M·x)(i) = mean of x over the clipped window around pixel i."""
    def band(n: int) -> sparse.csr_matrix:
        offsets = list(range(-radius, radius + 1))
        return sparse.diags([np.ones(n - abs(k)) for k in offsets if abs(k) < n],
                            [k for k in offsets if abs(k) < n], shape=(n, n), format="csr")

    window = sparse.kron(band(height), band(width), format="csr")
    counts = np.asarray(window.sum(axis=1)).ravel()
    return sparse.diags(1.0 / counts).dot(window).tocsr()


def sign_map(luma: np.ndarray, mean_op: sparse.csr_matrix) -> np.ndarray:
    diff = luma.ravel() - mean_op @ luma.ravel()
    s = np.sign(diff)
    s[np.abs(diff) <= SIGN_TOL] = 0.0
    return s.reshape(luma.shape)


# ---------------------------------------------------------------------------
# LP assembly
# ---------------------------------------------------------------------------

def _as_luma(J_a: Union[Raster, np.ndarray]) -> np.ndarray:
    if isinstance(J_a, Raster):
        if J_a.channels != 1:
            raise ValueError("build_lp expects a single-channel luma raster")
        return np.array(J_a.data[:, :, 0])
    return np.asarray(J_a, dtype=np.float64)


def build_lp(J_a: Union[Raster, np.ndarray], opts: LaicOptions) -> LaicProblem:
    """Assemble the LAIC linear program for a luma image."""
    luma = _as_luma(J_a)
    H, W = luma.shape
    n_pix = H * W
    mean_op = box_mean_operator(H, W, opts.radius)
    s = sign_map(luma, mean_op)
    scale = 1.0 / np.maximum(luma, opts.eps)
    flat_scale = scale.ravel()

    idx = np.arange(n_pix).reshape(H, W)
    left, right = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    top, bottom = idx[:-1, :].ravel(), idx[1:, :].ravel()
    first = np.concatenate([left, top])
    second = np.concatenate([right, bottom])
    n_aux = first.size
    aux = n_pix + np.arange(n_aux)

    # t − d ≥ 0 and t + d ≥ 0 with d = scale[b]·x[b] − scale[a]·x[a]
    r_minus = 2 * np.arange(n_aux)
    r_plus = r_minus + 1
    rows = np.concatenate([r_minus, r_minus, r_minus, r_plus, r_plus, r_plus])
    cols = np.concatenate([aux, second, first, aux, second, first])
    vals = np.concatenate([
        np.ones(n_aux), -flat_scale[second], flat_scale[first],
        np.ones(n_aux), flat_scale[second], -flat_scale[first],
    ])
    n_vars = n_pix + n_aux
    A_aux = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * n_aux, n_vars))

    # rank rows: (I − M)·x compared with 0 in the direction of s
    rank = (sparse.identity(n_pix, format="csr") - mean_op).tocsr()
    A_rank = sparse.hstack([rank, sparse.csr_matrix((n_pix, n_aux))], format="csr")
    flat_s = s.ravel()
    rank_senses = np.where(flat_s < 0, Sense.LE.value,
                           np.where(flat_s > 0, Sense.GE.value, Sense.EQ.value))

    A = sparse.vstack([A_aux, A_rank], format="csr")
    senses = np.concatenate([np.array([Sense.GE.value] * (2 * n_aux), dtype=object),
                             rank_senses.astype(object)])
    rhs = np.zeros(A.shape[0])
    row_kinds = np.array(["aux"] * (2 * n_aux) + ["rank"] * n_pix, dtype=object)

    objective = np.concatenate([
        -opts.lambda2 * (flat_s - mean_op.T @ flat_s),
        np.ones(n_aux),
    ])
    lower = np.zeros(n_vars)
    upper = np.concatenate([np.ones(n_pix), np.full(n_aux, np.inf)])

    problem = LaicProblem(
        height=H, width=W, objective=objective, A=A, senses=senses, rhs=rhs,
        lower=lower, upper=upper, sign_map=s, luma=luma,
        local_mean=(mean_op @ luma.ravel()).reshape(H, W), mean_op=mean_op,
        gain_scale=scale, lambda2=opts.lambda2, row_kinds=row_kinds,
    )
    logger.debug(f"Built LAIC LP {H}x{W}: {problem.n_vars} vars, {problem.n_rows} rows")
    return problem


# ---------------------------------------------------------------------------
# Solution checks
# ---------------------------------------------------------------------------

def gain_differences(problem: LaicProblem, x: np.ndarray) -> np.ndarray:
    """Signed horizontal then vertical differences of the gain field."""
    gain = problem.pixel_values(x) * problem.gain_scale
    return np.concatenate([np.diff(gain, axis=1).ravel(), np.diff(gain, axis=0).ravel()])


def objective_terms(problem: LaicProblem, x: np.ndarray) -> Tuple[float, float]:
    """(total variation of the gain, Σ s(i)·(J̃(i) − J̄(i))) recomputed from x."""
    pixels = np.asarray(x[: problem.n_pixels])
    tv = float(np.abs(gain_differences(problem, x)).sum())
    contrast = float(problem.sign_map.ravel() @ (pixels - problem.mean_op @ pixels))
    return tv, contrast


def audit_solution(problem: LaicProblem, x: np.ndarray) -> float:
    """Worst violation over every bound and every constraint row."""
    x = np.asarray(x, dtype=np.float64)
    Ax = problem.A @ x
    le = problem.senses == Sense.LE.value
    ge = problem.senses == Sense.GE.value
    eq = problem.senses == Sense.EQ.value
    parts = [
        np.max(Ax[le] - problem.rhs[le], initial=0.0),
        np.max(problem.rhs[ge] - Ax[ge], initial=0.0),
        np.max(np.abs(Ax[eq] - problem.rhs[eq]), initial=0.0),
        np.max(problem.lower - x, initial=0.0),
        np.max(x - problem.upper, initial=0.0),
    ]
    return float(max(parts))


def rank_preserved(problem: LaicProblem, x: np.ndarray, tol: float) -> np.ndarray:
    """Per-pixel check sgn(J̃ − J̄)·sgn(J_a − J̄_a) ≥ 0 with tolerance tol."""
    pixels = np.asarray(x[: problem.n_pixels])
    offset = (pixels - problem.mean_op @ pixels).reshape(problem.height, problem.width)
    s = problem.sign_map
    ok = s * offset >= -tol
    ties = s == 0
    ok[ties] = np.abs(offset[ties]) <= tol
    return ok


def _tighten_aux(problem: LaicProblem, x: np.ndarray) -> np.ndarray:
    """Set every auxiliary to |d| exactly; stays feasible and never raises the objective."""
    x = np.array(x, dtype=np.float64)
    x[: problem.n_pixels] = np.clip(x[: problem.n_pixels], 0.0, 1.0)
    x[problem.n_pixels:] = np.abs(gain_differences(problem, x))
    return x


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

def _backend(problem: LaicProblem, opts: LaicOptions) -> str:
    if opts.solver != AUTO:
        return opts.solver
    return "simplex" if problem.n_vars <= opts.simplex_max_vars else "highs"


def _dispatch(backend: str, c, A, senses, rhs, lower, upper, tol: float) -> LpSolution:
    """Run one backend; a simplex run that stops short of optimal is re-solved by HiGHS."""
    if backend == "simplex":
        sol = solve_simplex(c, A, senses, rhs, lower, upper)
        if sol.is_optimal:
            return sol
        logger.warning(
            f"Simplex stopped with status {sol.status.value} after {sol.iterations} pivots; retrying with HiGHS"
        )
    return solve_highs(c, A, senses, rhs, lower, upper, tol=tol)


def solve_lp(problem: LaicProblem, opts: LaicOptions) -> LpSolution:
    """
    Solve the LAIC program. At λ₂ = 0 every uniform gain is optimal, so a
    second stage keeps the optimal total variation and maximises brightness.
    """
    backend = _backend(problem, opts)
    tol = opts.solver_tol
    sol = _dispatch(backend, problem.objective, problem.A, problem.senses, problem.rhs,
                    problem.lower, problem.upper, tol)
    if not sol.is_optimal:
        logger.warning(f"LAIC LP ({sol.backend}) ended with status {sol.status.value}")
        return sol
    backend = sol.backend
    iterations = sol.iterations
    x = sol.values

    if problem.lambda2 == 0.0:
        tv_row = sparse.csr_matrix(
            np.concatenate([np.zeros(problem.n_pixels), np.ones(problem.n_vars - problem.n_pixels)])
        )
        brighter = np.concatenate([-np.ones(problem.n_pixels), np.zeros(problem.n_vars - problem.n_pixels)])
        second = _dispatch(
            backend, brighter, sparse.vstack([problem.A, tv_row], format="csr"),
            np.concatenate([problem.senses, np.array([Sense.LE.value], dtype=object)]),
            np.append(problem.rhs, sol.objective_value + tol / 10.0),
            problem.lower, problem.upper, tol,
        )
        iterations += second.iterations
        if second.is_optimal:
            x = second.values
            backend = second.backend
        else:
            logger.info(f"Brightness stage ended with {second.status.value}; keeping first-stage point")

    x = _tighten_aux(problem, x)
    violation = audit_solution(problem, x)
    status = LpStatus.OPTIMAL
    if violation > tol and backend == "simplex":
        logger.warning(f"Simplex solution violates constraints by {violation:.3e}; re-solving with HiGHS")
        return solve_lp(problem, replace(opts, solver="highs"))
    if violation > tol:
        logger.error(f"LAIC solution violates constraints by {violation:.3e} (tol {tol:.1e})")
        status = LpStatus.INFEASIBLE
    value = float(problem.objective @ x)
    logger.info(
        f"LAIC LP {problem.height}x{problem.width} solved by {backend}: "
        f"objective {value:.6g}, {iterations} iterations"
    )
    return LpSolution(values=x, objective_value=value, status=status,
                      iterations=iterations, backend=backend)


# ---------------------------------------------------------------------------
# Image-level entry points
# ---------------------------------------------------------------------------

def resolve_gain_grid(grid: GainGrid, height: int, width: int) -> Optional[Tuple[int, int]]:
    """None means a full-resolution solve."""
    if grid == AUTO:
        if height * width <= AUTO_GRID_MIN_PIXELS:
            return None
        grid = AUTO_GRID
    if grid is None:
        return None
    gh, gw = min(grid[0], height), min(grid[1], width)
    if (gh, gw) == (height, width):
        return None
    return gh, gw


def _resize(arr: np.ndarray, size: Tuple[int, int], resample) -> np.ndarray:
    img = Image.fromarray(np.ascontiguousarray(arr, dtype=np.float32))
    return np.asarray(img.resize((size[1], size[0]), resample=resample), dtype=np.float64)


def _luma_of(r: Raster) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    if r.channels == 3:
        luma_raster, ratios = split_luma(r)
        return luma_raster.data[:, :, 0], ratios
    return r.data[:, :, 0], None


def lp_luma(r: Raster, opts: LaicOptions) -> np.ndarray:
    """The luma the LP is solved on: full resolution, or box-averaged to the gain grid."""
    luma, _ = _luma_of(r)
    grid = resolve_gain_grid(opts.gain_grid, *luma.shape)
    if grid is None:
        return luma
    return np.clip(_resize(luma, grid, Image.Resampling.BOX), 0.0, 1.0)


def laic_enhance(r: Raster, opts: LaicOptions = LaicOptions()) -> Raster:
    """Tone-map an image by solving LAIC on its luma (optionally on a reduced gain grid)."""
    luma, ratios = _luma_of(r)
    H, W = luma.shape
    solve_on = lp_luma(r, opts)
    problem = build_lp(solve_on, opts)
    sol = solve_lp(problem, opts)
    if not sol.is_optimal:
        raise SolverError(
            f"LAIC solve on {problem.height}x{problem.width} failed with status {sol.status.value}"
        )

    if solve_on.shape == luma.shape:
        enhanced = problem.pixel_values(sol.values)
    else:
        gain_small = problem.pixel_values(sol.values) * problem.gain_scale
        gain = _resize(gain_small, (H, W), Image.Resampling.BILINEAR)
        enhanced = gain * luma
        logger.info(f"LAIC gain field solved on {problem.height}x{problem.width} and upsampled to {H}x{W}")

    new_luma = Raster.from_array(enhanced)
    if ratios is None:
        return new_luma
    return recombine_luma(new_luma, ratios)


def linear_stretch(r: Raster, gain: Union[float, str] = AUTO) -> Raster:
    """Uniform luma gain; 'auto' picks the gain that maps the brightest luma to 1."""
    luma, ratios = _luma_of(r)
    if gain == AUTO:
        peak = float(luma.max())
        g = 1.0 / peak if peak > 0 else 1.0
    else:
        g = float(gain)
        if g <= 0:
            raise ValueError(f"linear stretch gain must be positive, got {gain}")
    logger.debug(f"Linear stretch with gain {g:.4f}")
    new_luma = Raster.from_array(luma * g)
    if ratios is None:
        return new_luma
    return recombine_luma(new_luma, ratios)
