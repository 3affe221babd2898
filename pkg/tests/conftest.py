"""Shared synthetic image builders for the test suite."""

import numpy as np
import pytest

from stainform.core import Image

LIGHT_PALETTE = ((235, 228, 232), (190, 150, 185), (120, 90, 150))
DARK_PALETTE = ((150, 120, 140), (90, 40, 80), (50, 20, 60))


def synthetic_smear(seed, size=64, palette=LIGHT_PALETTE, cells=None, noise=3.0):
    """Blood-smear-like image: background, round cells, darker nuclei, mild noise."""
    bg, cell, nucleus = palette
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3), np.float64) + bg
    ys, xs = np.ogrid[:size, :size]
    if cells is None:
        cells = max(4, size * size // 400)
    for _ in range(cells):
        cx = rng.integers(6, size - 6)
        cy = rng.integers(6, size - 6)
        rad = rng.integers(max(3, size // 20), max(5, size // 10))
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= rad ** 2
        img[mask] = cell
        inner = (xs - cx) ** 2 + (ys - cy) ** 2 <= (rad * 0.5) ** 2
        img[inner] = nucleus
    img += rng.normal(0.0, noise, img.shape)
    return Image(np.clip(img, 0, 255).astype(np.uint8))


def random_image(seed, width=32, height=32):
    rng = np.random.default_rng(seed)
    return Image(rng.integers(0, 256, (height, width, 3)).astype(np.uint8))


@pytest.fixture
def smear():
    return synthetic_smear(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
