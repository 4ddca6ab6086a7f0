"""
Manifest Service — dataset manifests, synthesized-pair files and their
metadata sidecars.

Manifest: plain text, one image per line,
    <path> [dim_gain gamma_ratio q sigma seed]
'#' starts a comment; relative paths resolve against the manifest's folder.

Synthesized pair files share a stem `<idx>_<name>`:
    _gt.png  _lowlight.png  _degraded.png  _meta.json
The sidecar stores the parameters and the noise map as base64 of
little-endian float32, row-major, with a CRC32 of the raw bytes.
"""
from __future__ import annotations

import base64
import json
import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from models.degrade import DegradeParams, ManifestEntry, TrainingSample
from utils.errors import EmptyDatasetError, ImageReadError, UnpairedFilesError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST_COLUMNS = ["path", "dim_gain", "gamma_ratio", "q", "noise_sigma", "seed"]

SUFFIX_GT = "_gt"
SUFFIX_LOWLIGHT = "_lowlight"
SUFFIX_DEGRADED = "_degraded"
SUFFIX_META = "_meta.json"
PAIR_IMAGE_EXT = ".png"


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def read_manifest(path: PathLike) -> List[ManifestEntry]:
    """Parse a manifest; raises EmptyDatasetError when it lists nothing."""
    path = Path(path)
    if not path.is_file():
        raise ImageReadError(f"manifest not found: {path}")
    try:
        df = pd.read_csv(
            path, sep=r"\s+", header=None, names=MANIFEST_COLUMNS, comment="#",
            dtype={"path": str}, skip_blank_lines=True, engine="python",
        )
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=MANIFEST_COLUMNS)

    entries: List[ManifestEntry] = []
    for row in df.to_dict(orient="records"):
        raw_path = str(row["path"]).strip()
        if not raw_path or raw_path == "nan":
            continue
        image_path = Path(raw_path)
        if not image_path.is_absolute():
            image_path = path.parent / image_path

        def opt(name, cast):
            value = row.get(name)
            return None if value is None or pd.isna(value) else cast(value)

        entries.append(ManifestEntry(
            path=str(image_path),
            dim_gain=opt("dim_gain", float),
            gamma_ratio=opt("gamma_ratio", float),
            q=opt("q", float),
            noise_sigma=opt("noise_sigma", float),
            seed=opt("seed", int),
        ))
    if not entries:
        raise EmptyDatasetError(f"manifest {path} lists no images")
    logger.info(f"Read manifest {path.name}: {len(entries)} images")
    return entries


# ---------------------------------------------------------------------------
# Pair files and sidecars
# ---------------------------------------------------------------------------

def pair_stem(index: int, source: PathLike) -> str:
    return f"{index:05d}_{Path(source).stem}"


def pair_paths(out_dir: PathLike, stem: str) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "gt": out_dir / f"{stem}{SUFFIX_GT}{PAIR_IMAGE_EXT}",
        "lowlight": out_dir / f"{stem}{SUFFIX_LOWLIGHT}{PAIR_IMAGE_EXT}",
        "degraded": out_dir / f"{stem}{SUFFIX_DEGRADED}{PAIR_IMAGE_EXT}",
        "meta": out_dir / f"{stem}{SUFFIX_META}",
    }


def encode_noise(noise: np.ndarray) -> Dict[str, object]:
    raw = np.ascontiguousarray(noise, dtype="<f4").tobytes()
    return {
        "dtype": "float32-le",
        "shape": list(noise.shape),
        "crc32": zlib.crc32(raw) & 0xFFFFFFFF,
        "data": base64.b64encode(raw).decode("ascii"),
    }


def decode_noise(blob: Dict[str, object]) -> np.ndarray:
    raw = base64.b64decode(str(blob["data"]))
    if zlib.crc32(raw) & 0xFFFFFFFF != int(blob["crc32"]):
        raise ImageReadError("noise blob checksum mismatch")
    shape = tuple(int(s) for s in blob["shape"])
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


@dataclass(eq=False)
class SidecarRecord:
    source: str
    index: int
    params: DegradeParams
    origin: Tuple[int, int]
    shape: Tuple[int, ...]
    noise_map: np.ndarray


def write_sidecar(path: PathLike, sample: TrainingSample, source: PathLike, index: int) -> Path:
    path = Path(path)
    doc = {
        "source": str(source),
        "index": int(index),
        "params": sample.params.to_dict(),
        "origin": list(sample.origin),
        "shape": list(sample.degraded.shape),
        "noise": encode_noise(sample.noise_map),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_sidecar(path: PathLike) -> SidecarRecord:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ImageReadError(f"cannot read sidecar {path}: {e}") from e
    return SidecarRecord(
        source=str(doc.get("source", "")),
        index=int(doc.get("index", 0)),
        params=DegradeParams.from_dict(doc.get("params") or {}),
        origin=tuple(doc.get("origin", (0, 0))),
        shape=tuple(doc.get("shape", ())),
        noise_map=decode_noise(doc["noise"]),
    )


def find_eval_pairs(pairs_dir: PathLike) -> List[Tuple[str, Path, Path]]:
    """(stem, ground-truth path, low-light path) for every pair in a directory."""
    pairs_dir = Path(pairs_dir)
    if not pairs_dir.is_dir():
        raise ImageReadError(f"pairs directory not found: {pairs_dir}")
    gts = {p.name[: -len(SUFFIX_GT + p.suffix)]: p for p in pairs_dir.glob(f"*{SUFFIX_GT}.*")}
    lows = {p.name[: -len(SUFFIX_LOWLIGHT + p.suffix)]: p for p in pairs_dir.glob(f"*{SUFFIX_LOWLIGHT}.*")}
    if not gts and not lows:
        raise EmptyDatasetError(f"no evaluation pairs in {pairs_dir}")
    unpaired = sorted(set(gts) ^ set(lows))
    if unpaired:
        raise UnpairedFilesError(f"files without a partner in {pairs_dir}: {', '.join(unpaired[:5])}")
    return [(stem, gts[stem], lows[stem]) for stem in sorted(gts)]
