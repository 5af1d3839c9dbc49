"""Fixtures: real sample photos written to disk, plus the toolkit CLI runner.

The toolkit is consumed strictly through its command line and file formats;
nothing here imports the nubblematch package.
"""

from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

_SAMPLE_NAMES = [
    "astronaut", "brick", "camera", "cat", "cell", "checkerboard", "chelsea",
    "clock", "coffee", "coins", "colorwheel", "grass", "gravel", "horse",
    "immunohistochemistry", "logo", "microaneurysms", "moon", "page",
    "retina", "rocket", "text",
]


def _to_uint8_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.dtype != np.uint8:
        img = (np.clip(img, 0, 1) * 255).astype(np.uint8)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    return img[:, :, :3]


@pytest.fixture(scope="session")
def sample_images(tmp_path_factory) -> Path:
    """>= 20 real photographs saved as PNG files."""
    import skimage.data as skd

    root = tmp_path_factory.mktemp("images")
    for name in _SAMPLE_NAMES:
        arr = _to_uint8_rgb(getattr(skd, name)())
        Image.fromarray(arr).save(root / f"{name}.png")
    return root


@pytest.fixture(scope="session")
def sample_masks(sample_images, tmp_path_factory) -> Path:
    """Otsu-threshold foreground annotations for each sample image."""
    from skimage.filters import threshold_otsu

    root = tmp_path_factory.mktemp("masks")
    for png in sorted(sample_images.glob("*.png")):
        gray = np.asarray(Image.open(png).convert("L"), dtype=np.float64)
        mask = gray > threshold_otsu(gray)
        Image.fromarray(mask.astype(np.uint8) * 255).save(root / png.name)
    return root


def run_toolkit(args, cwd):
    """Invoke the nubblematch CLI (the only allowed toolkit surface)."""
    proc = subprocess.run([sys.executable, "-m", "nubblematch.cli", *args],
                          cwd=cwd, capture_output=True, text=True, timeout=600)
    return proc.returncode, proc.stdout, proc.stderr


def run_exporter(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "nubble_exporter.cli", *args],
                          cwd=cwd, capture_output=True, text=True, timeout=600)
    return proc.returncode, proc.stdout, proc.stderr
