"""Feature and mask export into the toolkit's NPY + JSON interchange format.

Features are written RAW (unnormalized float32); patch-vector normalization
is the consuming toolkit's job so threshold semantics live in one place.
Pixel masks downsample to the patch grid with a >= 50% coverage rule over a
floor-boundary rectangle partition, which needs no divisibility between
pixel and patch dimensions.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .encoders import Encoder, load_encoder
from .npyio import write_feature_grid, write_patch_mask


def patch_grid_dims(image_size: int, patch_size: int) -> tuple[int, int]:
    """Patch grid side lengths for a square input (e.g. 518 / 14 -> 37)."""
    if image_size < patch_size:
        raise ValueError(f"image size {image_size} smaller than patch {patch_size}")
    side = image_size // patch_size
    return side, side


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Decode any PIL-readable image to RGB float64 in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def export_features(image: Union[str, Path], encoder: Encoder,
                    out: Union[str, Path]) -> dict:
    """Encode one image to an (H, W, C) float32 NPY; returns a manifest entry."""
    feats = encoder(load_image(image))
    write_feature_grid(feats, out)
    return {
        "image": Path(image).name,
        "tensor": Path(out).name,
        "model_id": encoder.model_id,
        "weights": encoder.weights,
        "height": int(feats.shape[0]),
        "width": int(feats.shape[1]),
        "channels": int(feats.shape[2]),
        "preprocessing": encoder.preprocessing,
    }


def downsample_mask(pixel_mask: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Patch-resolution mask: foreground iff >= 50% of the patch's pixels are.

    The pixel plane is partitioned into ``grid`` rectangles with floor
    boundaries, so any pixel dimensions are handled.
    """
    h, w = grid
    pix = np.asarray(pixel_mask, dtype=bool)
    ph, pw = pix.shape
    if h < 1 or w < 1 or ph < h or pw < w:
        raise ValueError(f"cannot map {pix.shape} pixels onto a {grid} patch grid")
    row_edges = [(r * ph) // h for r in range(h + 1)]
    col_edges = [(c * pw) // w for c in range(w + 1)]
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            block = pix[row_edges[r]:row_edges[r + 1], col_edges[c]:col_edges[c + 1]]
            out[r, c] = block.mean() >= 0.5
    return out


def load_pixel_mask(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return gray > 127


def export_mask(annotation: Union[str, Path], grid: tuple[int, int],
                out: Union[str, Path]) -> dict:
    """Downsample a pixel annotation to the patch grid and write it as |u1 NPY."""
    bits = downsample_mask(load_pixel_mask(annotation), grid)
    write_patch_mask(bits, out)
    return {
        "annotation": Path(annotation).name,
        "mask": Path(out).name,
        "height": int(grid[0]),
        "width": int(grid[1]),
        "foreground_patches": int(bits.sum()),
    }


_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def export_batch(images_dir: Union[str, Path], out_dir: Union[str, Path],
                 model_id: str, masks_dir: Optional[Union[str, Path]] = None,
                 image_size: int = 448, seed: int = 0) -> Path:
    """Export every image (sorted by name) plus optional same-stem masks.

    Writes ``<stem>_features.npy`` (+ ``<stem>_mask.npy``) and a
    ``manifest.json`` recording the encoder configuration and per-image grid
    dimensions.  Returns the manifest path.
    """
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in images_dir.iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"{images_dir}: no images found")
    encoder = load_encoder(model_id, input_size=image_size, seed=seed)
    entries = []
    for img_path in paths:
        stem = img_path.stem
        entry = export_features(img_path, encoder, out_dir / f"{stem}_features.npy")
        if masks_dir is not None:
            ann = _find_annotation(Path(masks_dir), stem)
            if ann is not None:
                entry["mask_entry"] = export_mask(
                    ann, (entry["height"], entry["width"]),
                    out_dir / f"{stem}_mask.npy")
        entries.append(entry)
    manifest = {
        "schema_version": 1,
        "model_id": encoder.model_id,
        "weights": encoder.weights,
        "input_size": encoder.input_size,
        "channels": encoder.channels,
        "preprocessing": encoder.preprocessing,
        "entries": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest_path


def _find_annotation(masks_dir: Path, stem: str) -> Optional[Path]:
    for suffix in _IMAGE_SUFFIXES:
        cand = masks_dir / f"{stem}{suffix}"
        if cand.exists():
            return cand
    return None
