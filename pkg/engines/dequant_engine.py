"""
Dequantization Engine — applies a trained generator to a stretched image.

Large images are processed in overlapping tiles. Each tile's residual is
weighted by a ramp that is zero over the outer half of the overlap on any
edge shared with a neighbour tile, so zero-padding effects at tile borders
never reach the blend.
"""
from __future__ import annotations

import logging
from typing import List

import numpy as np

from models.raster import Raster
from models.train_config import Checkpoint
from nngrad.networks import GeneratorNet, generator_forward
from nngrad.tensor import Tensor, no_grad
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

DEFAULT_TILE = 128
DEFAULT_OVERLAP = 16


def generator_from_checkpoint(ckpt: Checkpoint) -> GeneratorNet:
    cfg = ckpt.config
    G = GeneratorNet(cfg.channels, cfg.features, cfg.residual_units, seed=cfg.seed)
    G.load_state_dict(ckpt.generator)
    G.eval()
    return G


def tile_starts(size: int, tile: int, overlap: int) -> List[int]:
    if size <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return sorted(set(starts))


def edge_ramp(length: int, overlap: int, ramp_start: bool, ramp_end: bool) -> np.ndarray:
    """1-d blend weights: w(d) = clip((d − m + 1) / (overlap − m + 1), 0, 1), m = overlap // 2."""
    w = np.ones(length)
    if overlap <= 0:
        return w
    m = overlap // 2
    d = np.arange(length, dtype=np.float64)
    ramp = np.clip((d - m + 1) / (overlap - m + 1), 0.0, 1.0)
    if ramp_start:
        w = np.minimum(w, ramp)
    if ramp_end:
        w = np.minimum(w, ramp[::-1])
    return w


def predict_residual(G: GeneratorNet, data: np.ndarray) -> np.ndarray:
    """Residual for one H×W×C array, in eval mode and without a graph."""
    x = Tensor(np.transpose(data, (2, 0, 1))[None].astype(np.float32))
    with no_grad():
        out = generator_forward(G, x)
    return np.transpose(out.data[0], (1, 2, 0)).astype(np.float64)


def dequantize(
    G: GeneratorNet,
    stretched: Raster,
    tile: int = DEFAULT_TILE,
    overlap: int = DEFAULT_OVERLAP,
) -> Raster:
    """Ĵ = clamp(stretched + G(stretched), 0, 1), tiled for large images."""
    data = np.asarray(stretched.data)
    if stretched.channels != G.channels:
        if stretched.channels == 1 and G.channels == 3:
            data = np.repeat(data, 3, axis=2)
        else:
            raise ShapeError(
                f"generator expects {G.channels} channel(s), image has {stretched.channels}"
            )
    G.eval()
    H, W, _ = data.shape
    if H <= tile and W <= tile:
        residual = predict_residual(G, data)
    else:
        acc = np.zeros(data.shape)
        weight = np.zeros((H, W, 1))
        rows, cols = tile_starts(H, tile, overlap), tile_starts(W, tile, overlap)
        for top in rows:
            th = min(tile, H - top)
            wy = edge_ramp(th, overlap, top > 0, top + th < H)
            for left in cols:
                tw = min(tile, W - left)
                wx = edge_ramp(tw, overlap, left > 0, left + tw < W)
                w = np.outer(wy, wx)[:, :, None]
                res = predict_residual(G, data[top:top + th, left:left + tw])
                acc[top:top + th, left:left + tw] += w * res
                weight[top:top + th, left:left + tw] += w
        residual = acc / np.maximum(weight, 1e-12)
        logger.debug(f"Dequantized {H}x{W} in {len(rows) * len(cols)} tiles")

    out = np.clip(data + residual, 0.0, 1.0)
    if stretched.channels == 1 and G.channels == 3:
        out = out.mean(axis=2, keepdims=True)
    return Raster(out)
