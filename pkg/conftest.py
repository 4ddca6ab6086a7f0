"""Shared pytest setup: project root on sys.path, the `slow` marker, small image fixtures."""
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parent
sys.path.insert(0, str(PROJECT_ROOT))

from models.raster import Raster  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running property sweeps and training runs")


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def smooth_image(height: int, width: int, channels: int = 3, seed: int = 0) -> Raster:
    """Smooth gradients plus a few soft blobs, quantized to 8 bits."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    planes = []
    for _ in range(channels):
        a, b, c = rng.uniform(0.2, 0.8, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 0.05)
        planes.append(0.15 + 0.5 * (a * xx + b * yy) / 1.6 + 0.3 * c * blob)
    data = np.clip(np.stack(planes, axis=2), 0.0, 1.0)
    return Raster(np.floor(data * 255 + 0.5) / 255)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
