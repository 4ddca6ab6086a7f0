"""
Report Service — the training loss log, its plotly loss-curve page, and the
evaluation metrics table.

Loss log: tab-separated, header `iter  l_inf  l_adv  l_disc`, one row per
iteration.
"""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Iterable, List, Sequence, TextIO, Tuple, Union

import pandas as pd
import plotly.graph_objects as go

from nngrad.losses import LossBundle

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["iter", "l_inf", "l_adv", "l_disc"]
EVAL_COLUMNS = ["image", "psnr_input", "psnr_tone", "psnr_full"]

PathLike = Union[str, Path]

# Colour per curve in the loss-curve page
CURVE_COLORS = {"l_inf": "#2f81f7", "l_adv": "#f0883e", "l_disc": "#3fb950"}


# ---------------------------------------------------------------------------
# Loss log
# ---------------------------------------------------------------------------

def loss_frame(history: Iterable[Tuple[int, LossBundle]]) -> pd.DataFrame:
    rows = [
        {"iter": it, "l_inf": b.l_inf, "l_adv": b.l_adv, "l_disc": b.l_disc}
        for it, b in history
    ]
    return pd.DataFrame(rows, columns=LOG_COLUMNS)


def write_loss_log(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, sep="\t", index=False, float_format="%.9g")
    logger.debug(f"Wrote {len(df)} loss rows to {path}")
    return path


def read_loss_log(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        return pd.DataFrame(columns=LOG_COLUMNS)
    df = pd.read_csv(path, sep="\t")
    missing = set(LOG_COLUMNS) - set(df.columns)
    if missing:
        logger.warning(f"Loss log {path} lacks columns {sorted(missing)}; ignoring it")
        return pd.DataFrame(columns=LOG_COLUMNS)
    return df[LOG_COLUMNS]


def make_loss_figure(df: pd.DataFrame, ema: Sequence[float] = ()) -> go.Figure:
    fig = go.Figure()
    for column in ("l_inf", "l_adv", "l_disc"):
        fig.add_trace(go.Scatter(
            x=df["iter"], y=df[column], mode="lines", name=column,
            line=dict(color=CURVE_COLORS[column], width=1),
        ))
    if len(ema):
        fig.add_trace(go.Scatter(
            x=df["iter"], y=list(ema), mode="lines", name="l_inf (EMA)",
            line=dict(color=CURVE_COLORS["l_inf"], width=3, dash="dot"),
        ))
    fig.update_layout(
        title="Training losses",
        xaxis_title="iteration",
        yaxis_title="loss",
        yaxis_type="log" if (df[["l_inf", "l_disc"]] > 0).all().all() and len(df) else "linear",
        margin=dict(t=40, b=40, l=50, r=20),
        legend=dict(orientation="h"),
    )
    return fig


def write_loss_curve(df: pd.DataFrame, path: PathLike, ema: Sequence[float] = ()) -> Path:
    path = Path(path)
    make_loss_figure(df, ema).write_html(str(path), include_plotlyjs="cdn")
    logger.debug(f"Wrote loss curve to {path}")
    return path


# ---------------------------------------------------------------------------
# Evaluation table
# ---------------------------------------------------------------------------

def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def eval_frame(rows: List[dict]) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=EVAL_COLUMNS)
    if len(df):
        means = {"image": "MEAN"}
        for column in EVAL_COLUMNS[1:]:
            means[column] = df[column].mean()
        df = pd.concat([df, pd.DataFrame([means])], ignore_index=True)
    return df


def write_eval_table(df: pd.DataFrame, stream: TextIO) -> None:
    out = df.copy()
    for column in EVAL_COLUMNS[1:]:
        out[column] = out[column].map(format_psnr)
    out.to_csv(stream, sep="\t", index=False)
