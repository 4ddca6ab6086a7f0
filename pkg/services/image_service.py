"""
Image Service — reads and writes rasters at the file boundary.

Supported formats:
  - PNG, 8-bit gray or RGB (palette / alpha variants are converted), via Pillow
  - binary PGM (P5) / PPM (P6) with maxval 255, read and written bit-exactly

8-bit code k maps to the real value k/255 on load; on save every value goes
through the quantizer first and is then encoded as its nearest code.
"""
from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from models.raster import DEFAULT_Q, QuantSpec, Raster, quantize
from utils.errors import ImageReadError, UnsupportedImageError

logger = logging.getLogger(__name__)

PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}
PNG_SUFFIXES = {".png"}
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# header tokens: magic, width, height, maxval; '#' comments tolerated on read
_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# READ
# ---------------------------------------------------------------------------

def load_image(path: PathLike) -> Raster:
    """Load a PNG / PGM / PPM file into a Raster with values k/255."""
    path = Path(path)
    if not path.is_file():
        raise ImageReadError(f"image file not found: {path}")
    suffix = path.suffix.lower()
    if suffix in PNM_SUFFIXES:
        codes = _read_pnm(path)
    elif suffix in PNG_SUFFIXES:
        codes = _read_png(path)
    else:
        raise UnsupportedImageError(f"unsupported image format '{suffix}' for {path.name}")
    raster = Raster(codes.astype(np.float64) / 255.0)
    logger.debug(f"Loaded {path.name}: {raster.height}x{raster.width}x{raster.channels}")
    return raster


def _read_pnm(path: Path) -> np.ndarray:
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ImageReadError(f"cannot read {path}: {e}") from e

    tokens = []
    pos = 0
    while len(tokens) < 4:
        match = _PNM_TOKEN.match(blob, pos)
        if not match:
            raise ImageReadError(f"truncated PNM header in {path.name}")
        tokens.append(match.group(1))
        pos = match.end()
    # exactly one whitespace byte separates maxval from the raster
    pos += 1

    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedImageError(f"{path.name}: only binary P5/P6 files are supported, got {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise ImageReadError(f"{path.name}: malformed PNM header") from e
    if maxval != 255:
        raise UnsupportedImageError(f"{path.name}: maxval {maxval} is not 8-bit")

    channels = 1 if magic == b"P5" else 3
    expected = width * height * channels
    payload = blob[pos:pos + expected]
    if len(payload) != expected:
        raise ImageReadError(f"{path.name}: expected {expected} raster bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)


def _png_bit_depth(path: Path) -> Optional[int]:
    """Bit depth byte of the IHDR chunk; None when the file does not start like a PNG."""
    try:
        with path.open("rb") as fh:
            head = fh.read(25)
    except OSError as e:
        raise ImageReadError(f"cannot read {path}: {e}") from e
    if len(head) < 25 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        return None
    return head[24]


def _read_png(path: Path) -> np.ndarray:
    # Pillow reports 16-bit RGB as plain RGB, so the depth is taken from the header
    depth = _png_bit_depth(path)
    if depth is not None and depth > 8:
        raise UnsupportedImageError(f"{path.name}: {depth}-bit PNG is not supported (8-bit only)")
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise UnsupportedImageError(f"{path.name}: bit depth of mode '{mode}' is not 8-bit")
            if mode in ("L", "RGB"):
                converted = img
            elif mode in ("LA", "1"):
                converted = img.convert("L")
            else:
                logger.info(f"Converting {path.name} from mode {mode} to RGB (alpha dropped).")
                converted = img.convert("RGB")
            arr = np.asarray(converted, dtype=np.uint8)
    except UnsupportedImageError:
        raise
    except (OSError, UnidentifiedImageError) as e:
        raise ImageReadError(f"cannot decode {path}: {e}") from e
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


# ---------------------------------------------------------------------------
# WRITE
# ---------------------------------------------------------------------------

def encode_codes(r: Raster, quant: QuantSpec = QuantSpec()) -> np.ndarray:
    """Quantize with step q, then map each value to its nearest 8-bit code."""
    values = quantize(r.data, quant.q)
    return np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(r: Raster, path: PathLike, quant: QuantSpec = QuantSpec(DEFAULT_Q)) -> Path:
    """Write a Raster as PNG / PGM / PPM depending on the suffix."""
    path = Path(path)
    codes = encode_codes(r, quant)
    suffix = path.suffix.lower()
    path.parent.mkdir(parents=True, exist_ok=True)
    if suffix in PNM_SUFFIXES:
        magic = b"P5" if r.channels == 1 else b"P6"
        header = b"%s\n%d %d\n255\n" % (magic, r.width, r.height)
        path.write_bytes(header + codes.tobytes())
    elif suffix in PNG_SUFFIXES:
        if r.channels == 1:
            img = Image.fromarray(codes[:, :, 0])
        else:
            img = Image.fromarray(codes)
        img.save(path, format="PNG")
    else:
        raise UnsupportedImageError(f"cannot write format '{suffix}' ({path.name})")
    logger.debug(f"Saved {path.name} ({r.height}x{r.width}x{r.channels})")
    return path
