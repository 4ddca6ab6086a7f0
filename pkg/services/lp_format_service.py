"""
LP Format Service — writes a LaicProblem as CPLEX-LP text so it can be
cross-checked with third-party solvers.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from models.laic import LaicProblem, Sense

logger = logging.getLogger(__name__)

TERMS_PER_LINE = 8
SENSE_TEXT = {Sense.LE.value: "<=", Sense.GE.value: ">=", Sense.EQ.value: "="}


def variable_names(problem: LaicProblem) -> List[str]:
    """x_r_c for pixels, h_r_c / v_r_c for horizontal / vertical auxiliaries."""
    H, W = problem.height, problem.width
    names = [f"x_{r}_{c}" for r in range(H) for c in range(W)]
    names += [f"h_{r}_{c}" for r in range(H) for c in range(W - 1)]
    names += [f"v_{r}_{c}" for r in range(H - 1) for c in range(W)]
    return names


def _terms(coefs: np.ndarray, cols: np.ndarray, names: List[str]) -> List[str]:
    out = []
    for j, a in zip(cols, coefs):
        if a == 0.0:
            continue
        sign = "-" if a < 0 else "+"
        out.append(f"{sign} {abs(a):.17g} {names[j]}")
    if out and out[0].startswith("+ "):
        out[0] = out[0][2:]
    return out or ["0 " + names[0]]


def _wrap(prefix: str, terms: List[str]) -> List[str]:
    lines = []
    for start in range(0, len(terms), TERMS_PER_LINE):
        chunk = " ".join(terms[start:start + TERMS_PER_LINE])
        lines.append((prefix if start == 0 else "   ") + chunk)
    return lines


def format_lp(problem: LaicProblem) -> str:
    names = variable_names(problem)
    lines = [f"\\ LAIC problem {problem.height}x{problem.width}, lambda2 = {problem.lambda2!r}", "Minimize"]
    nz = np.flatnonzero(problem.objective)
    lines += _wrap(" obj: ", _terms(problem.objective[nz], nz, names))

    lines.append("Subject To")
    A = problem.A.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        kind = problem.row_kinds[r] if len(problem.row_kinds) else "row"
        body = _wrap(f" {kind}{r}: ", _terms(A.data[lo:hi], A.indices[lo:hi], names))
        body[-1] += f" {SENSE_TEXT[problem.senses[r]]} {problem.rhs[r]:.17g}"
        lines += body

    lines.append("Bounds")
    for j, name in enumerate(names):
        lo, hi = problem.lower[j], problem.upper[j]
        if np.isinf(hi):
            lines.append(f" {name} >= {lo:.17g}")
        else:
            lines.append(f" {lo:.17g} <= {name} <= {hi:.17g}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp_text(problem: LaicProblem, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(format_lp(problem), encoding="utf-8")
    logger.info(f"Wrote LP ({problem.n_vars} vars, {problem.n_rows} rows) to {path}")
    return path
