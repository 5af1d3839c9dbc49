"""Feature-grid and mask interchange: strict NPY I/O, canonical JSON and CSV.

The on-disk contract is deliberately narrow so files are portable and
bit-reproducible:

* tensors are NPY v1.0/v2.0, C-order, little-endian; grids are ``(H, W, C)``
  float32/float64 (always widened to float64 in memory, written as ``<f8``),
  masks are ``(H, W)`` ``|u1`` (values 0/1 only) or ``|b1``;
* JSON reports are canonical: UTF-8, sorted keys, floats rendered with nine
  significant digits, so equal payloads serialize to equal bytes;
* CSV files carry a header row, LF line endings and ``.`` decimals.

All writers go through a temp-file + rename so a failed run never leaves a
partial output behind.
"""

from __future__ import annotations

import ast
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    UnsupportedFormatError,
    ValidationError,
)

_NPY_MAGIC = b"\x93NUMPY"
NORM_TOLERANCE = 1e-5
REPORT_KINDS = ("mismatch", "diagnostics", "sweep", "curve", "prompts")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureGrid:
    """An ``(H, W, C)`` grid of patch feature vectors.

    ``values`` is a C-contiguous float64 array; treat it as immutable.  The
    ``normalized`` flag asserts that every patch vector has unit L2 norm
    (within ``NORM_TOLERANCE``) or is exactly zero.
    """

    values: np.ndarray
    normalized: bool = False
    source_id: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise DimensionError(f"grid values must be rank 3, got rank {vals.ndim}")
        if min(vals.shape) < 1:
            raise ValidationError(f"grid dimensions must be >= 1, got {vals.shape}")
        if not vals.flags.c_contiguous:
            vals = np.ascontiguousarray(vals)
        bad = _first_nonfinite(vals)
        if bad is not None:
            raise ValidationError(f"grid contains non-finite value at flat index {bad}")
        if self.normalized:
            norms = np.sqrt(np.sum(vals * vals, axis=2))
            off = np.abs(norms - 1.0) > NORM_TOLERANCE
            if np.any(off & (norms != 0.0)):
                raise ValidationError(
                    "normalized flag set but some patch norms are neither ~1 nor 0"
                )
        object.__setattr__(self, "values", vals)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def patches(self) -> np.ndarray:
        """Row-major ``(H*W, C)`` view of the patch vectors."""
        return self.values.reshape(-1, self.values.shape[2])


@dataclass(frozen=True)
class BinaryMask:
    """An ``(H, W)`` boolean patch mask."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise DimensionError(f"mask must be rank 2, got rank {bits.ndim}")
        if min(bits.shape) < 1:
            raise ValidationError(f"mask dimensions must be >= 1, got {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.isin(bits, (0, 1)).all():
                raise ValidationError("mask values must be 0 or 1")
            bits = bits.astype(np.bool_)
        object.__setattr__(self, "bits", np.ascontiguousarray(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class Report:
    """A structured experiment output with canonical serialization."""

    kind: str
    payload: dict
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in REPORT_KINDS:
            raise ValidationError(
                f"unknown report kind {self.kind!r}; expected one of {REPORT_KINDS}"
            )


def _first_nonfinite(arr: np.ndarray):
    finite = np.isfinite(arr)
    if finite.all():
        return None
    return int(np.flatnonzero(~finite.ravel())[0])


# ---------------------------------------------------------------------------
# NPY container
# ---------------------------------------------------------------------------

def _read_npy_header(data: bytes, path: str) -> tuple[str, bool, tuple[int, ...], int]:
    """Parse an NPY v1.0/v2.0 header; returns (descr, fortran, shape, offset)."""
    if len(data) < 10 or data[:6] != _NPY_MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = data[6], data[7]
    if (major, minor) == (1, 0):
        (hlen,) = struct.unpack("<H", data[8:10])
        offset = 10 + hlen
    elif (major, minor) == (2, 0):
        if len(data) < 12:
            raise FormatError(f"{path}: truncated NPY v2 header")
        (hlen,) = struct.unpack("<I", data[8:12])
        offset = 12 + hlen
    else:
        raise UnsupportedFormatError(
            f"{path}: unsupported NPY version {major}.{minor}"
        )
    if len(data) < offset:
        raise FormatError(f"{path}: truncated NPY header")
    raw = data[offset - hlen:offset]
    try:
        header = ast.literal_eval(raw.decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: malformed NPY header dict") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: NPY header is not a dict")
    missing = {"descr", "fortran_order", "shape"} - header.keys()
    if missing:
        raise FormatError(f"{path}: NPY header missing keys {sorted(missing)}")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(descr, str):
        raise FormatError(f"{path}: non-string descr in NPY header")
    if fortran not in (True, False):
        raise FormatError(f"{path}: bad fortran_order in NPY header")
    if not (isinstance(shape, tuple) and all(isinstance(s, int) for s in shape)):
        raise FormatError(f"{path}: bad shape in NPY header")
    return descr, bool(fortran), shape, offset


_GRID_DESCRS = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
_MASK_DESCRS = {"|u1": np.dtype("u1"), "|b1": np.dtype("bool")}


def _read_npy(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    descr, fortran, shape, offset = _read_npy_header(data, str(path))
    if fortran:
        raise UnsupportedFormatError(f"{path}: Fortran-order payloads not supported")
    if descr in _GRID_DESCRS:
        dtype = _GRID_DESCRS[descr]
    elif descr in _MASK_DESCRS:
        dtype = _MASK_DESCRS[descr]
    else:
        raise UnsupportedFormatError(f"{path}: unsupported dtype {descr!r}")
    count = 1
    for s in shape:
        if s < 0:
            raise FormatError(f"{path}: negative dimension in shape {shape}")
        count *= s
    expected = count * dtype.itemsize
    payload = data[offset:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def read_tensor(path: Union[str, Path]) -> Union[FeatureGrid, BinaryMask]:
    """Load a feature grid (rank 3, float) or mask (rank 2, u1/bool) from NPY.

    Float32 payloads are widened to float64.  The returned grid always has
    ``normalized=False``; callers re-normalize explicitly.
    """
    path = Path(path)
    arr = _read_npy(path)
    if arr.ndim == 3 and arr.dtype.kind == "f":
        return FeatureGrid(arr.astype(np.float64), normalized=False,
                           source_id=path.stem)
    if arr.ndim == 2 and arr.dtype.kind in ("u", "b"):
        return BinaryMask(arr)
    raise UnsupportedFormatError(
        f"{path}: rank {arr.ndim} with dtype {arr.dtype} is neither a grid "
        "(rank 3 float) nor a mask (rank 2 u1/bool)"
    )


def _npy_header_bytes(descr: str, shape: tuple[int, ...]) -> bytes:
    shape_repr = "(" + ", ".join(str(s) for s in shape) + ("," if len(shape) == 1 else "") + ")"
    header = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_repr}, }}"
    base = len(_NPY_MAGIC) + 2 + 2  # magic + version + u16 length
    pad = 64 - ((base + len(header) + 1) % 64)
    if pad == 64:
        pad = 0
    header = header + " " * pad + "\n"
    return _NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode("latin1")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_tensor(obj: Union[FeatureGrid, BinaryMask], path: Union[str, Path]) -> None:
    """Write a grid as ``<f8`` or a mask as ``|u1`` NPY v1.0, atomically."""
    path = Path(path)
    if isinstance(obj, FeatureGrid):
        arr = np.ascontiguousarray(obj.values, dtype="<f8")
        header = _npy_header_bytes("<f8", arr.shape)
    elif isinstance(obj, BinaryMask):
        arr = np.ascontiguousarray(obj.bits.astype("u1"))
        header = _npy_header_bytes("|u1", arr.shape)
    else:
        raise ValidationError(f"cannot write object of type {type(obj).__name__}")
    _atomic_write_bytes(path, header + arr.tobytes(order="C"))


def write_float_map(values: np.ndarray, path: Union[str, Path]) -> None:
    """Write a rank-2 float64 array (similarity map export) as NPY v1.0."""
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    if arr.ndim != 2:
        raise DimensionError(f"float map must be rank 2, got rank {arr.ndim}")
    _atomic_write_bytes(Path(path), _npy_header_bytes("<f8", arr.shape) + arr.tobytes(order="C"))


def read_float_map(path: Union[str, Path]) -> np.ndarray:
    """Load a rank-2 float NPY array (e.g. a stored similarity map)."""
    arr = _read_npy(Path(path))
    if arr.ndim != 2 or arr.dtype.kind != "f":
        raise UnsupportedFormatError(f"{path}: expected a rank-2 float array")
    arr = arr.astype(np.float64)
    bad = _first_nonfinite(arr)
    if bad is not None:
        raise ValidationError(f"{path}: non-finite value at flat index {bad}")
    return arr


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_grid(g: FeatureGrid) -> FeatureGrid:
    """L2-normalize every patch vector; all-zero patches stay zero.

    >>> normalize_grid(FeatureGrid(np.array([[[3.0, 4.0]]]))).values.ravel().tolist()
    [0.6, 0.8]
    """
    vals = g.values
    norms = np.sqrt(np.sum(vals * vals, axis=2, keepdims=True))
    safe = np.where(norms == 0.0, 1.0, norms)
    return FeatureGrid(vals / safe, normalized=True, source_id=g.source_id)


# ---------------------------------------------------------------------------
# Canonical JSON and CSV
# ---------------------------------------------------------------------------

def _render_json(obj: Any, out: list[str]) -> None:
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            raise ValidationError("reports must not contain NaN/Inf")
        if x == 0.0:
            x = 0.0  # collapse -0.0
        out.append(format(x, ".9g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        keys = sorted(obj)
        for i, k in enumerate(keys):
            if not isinstance(k, str):
                raise ValidationError("report keys must be strings")
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _render_json(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)) or isinstance(obj, np.ndarray):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        out.append("[")
        for i, item in enumerate(seq):
            if i:
                out.append(",")
            _render_json(item, out)
        out.append("]")
    else:
        raise ValidationError(f"cannot serialize {type(obj).__name__} canonically")


def canonical_json(obj: Any) -> bytes:
    """Render a key/value tree to canonical JSON bytes.

    Keys are sorted, floats use nine significant digits, output is compact
    UTF-8 with a trailing newline.  Equal trees yield equal bytes on every
    platform and run.
    """
    out: list[str] = []
    _render_json(obj, out)
    out.append("\n")
    return "".join(out).encode("utf-8")


def serialize_report(report: Report) -> bytes:
    doc = {
        "kind": report.kind,
        "schema_version": report.schema_version,
        "payload": report.payload,
    }
    return canonical_json(doc)


def write_report(report: Report, path: Union[str, Path]) -> None:
    _atomic_write_bytes(Path(path), serialize_report(report))


def write_json(obj: Any, path: Union[str, Path]) -> None:
    """Write any key/value tree as canonical JSON (non-Report documents)."""
    _atomic_write_bytes(Path(path), canonical_json(obj))


def _csv_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(header: Sequence[str], rows: Iterable[Sequence[Any]],
              path: Union[str, Path]) -> None:
    """Write CSV with a header row, LF endings and full-precision floats."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))
