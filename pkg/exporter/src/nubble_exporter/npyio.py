"""Minimal NPY v1.0 writer matching the toolkit's interchange contract.

Feature grids are written as little-endian float32 ``(H, W, C)``, masks as
``|u1`` ``(H, W)`` with values 0/1.  Implemented here (not imported from the
toolkit) so this package consumes the toolkit only through files and its CLI.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

_MAGIC = b"\x93NUMPY"


def _header(descr: str, shape: tuple[int, ...]) -> bytes:
    shape_repr = "(" + ", ".join(str(s) for s in shape) + ("," if len(shape) == 1 else "") + ")"
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_repr}, }}"
    base = len(_MAGIC) + 2 + 2
    pad = 64 - ((base + len(text) + 1) % 64)
    if pad == 64:
        pad = 0
    text = text + " " * pad + "\n"
    return _MAGIC + bytes([1, 0]) + struct.pack("<H", len(text)) + text.encode("latin1")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_feature_grid(values: np.ndarray, path: Union[str, Path]) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 3:
        raise ValueError(f"feature grid must be rank 3, got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise ValueError("feature grid contains non-finite values")
    _atomic_write(Path(path), _header("<f4", arr.shape) + arr.tobytes(order="C"))


def write_patch_mask(bits: np.ndarray, path: Union[str, Path]) -> None:
    arr = np.ascontiguousarray(np.asarray(bits, dtype=bool).astype("u1"))
    if arr.ndim != 2:
        raise ValueError(f"patch mask must be rank 2, got {arr.ndim}")
    _atomic_write(Path(path), _header("|u1", arr.shape) + arr.tobytes(order="C"))
