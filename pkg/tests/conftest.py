import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from omnifuse.imaging import RgbImage


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_rgb(rng, width=32, height=24) -> RgbImage:
    return RgbImage.from_array(rng.integers(0, 256, (height, width, 3), dtype=np.uint8))


def gradient_rgb(width=64, height=48) -> RgbImage:
    """Planar ramps per channel; bilinear resampling reproduces these exactly."""
    u = np.linspace(0, 255, width)[None, :]
    v = np.linspace(0, 255, height)[:, None]
    img = np.empty((height, width, 3))
    img[:, :, 0] = np.broadcast_to(u, (height, width))
    img[:, :, 1] = np.broadcast_to(v, (height, width))
    img[:, :, 2] = (u + v) / 2.0
    return RgbImage.from_array(np.floor(img + 0.5).astype(np.uint8))
