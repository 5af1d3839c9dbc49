"""Deterministic cosine-similarity kernel.

Every output element accumulates its channel products in strictly ascending
channel order, one rounding per multiply and one per add.  That makes the
result bit-identical to a naive triple loop and independent of how the rows
are blocked or scheduled across threads: parallelism is purely a performance
knob.  BLAS is deliberately not used here because its reduction order varies
with blocking and thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ArgumentError

# Rows per accumulation block.  Chosen so the accumulator tile stays cache
# resident; changing it cannot change results (per-element order is fixed).
_BLOCK_ROWS = 16


def unit_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; all-zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    return x / np.where(norms == 0.0, 1.0, norms)


def _accumulate_block(a_block: np.ndarray, bt: np.ndarray, out_block: np.ndarray) -> None:
    rows = a_block.shape[0]
    cols = bt.shape[1]
    acc = np.zeros((rows, cols))
    tmp = np.empty((rows, cols))
    for c in range(a_block.shape[1]):
        np.multiply(a_block[:, c:c + 1], bt[c][None, :], out=tmp)
        np.add(acc, tmp, out=acc)
    out_block[:] = acc


def dot_rows(a: np.ndarray, b: np.ndarray, threads: int = 1) -> np.ndarray:
    """Ordered-reduction row dot products: ``out[i, j] = sum_c a[i,c]*b[j,c]``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ArgumentError(
            f"dot_rows expects (N,C) and (M,C) inputs, got {a.shape} and {b.shape}"
        )
    if threads < 1:
        raise ArgumentError("threads must be >= 1")
    n = a.shape[0]
    out = np.empty((n, b.shape[0]))
    bt = np.ascontiguousarray(b.T)
    bounds = [(s, min(s + _BLOCK_ROWS, n)) for s in range(0, n, _BLOCK_ROWS)]
    if threads == 1 or len(bounds) == 1:
        for s, e in bounds:
            _accumulate_block(a[s:e], bt, out[s:e])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda se: _accumulate_block(a[se[0]:se[1]], bt, out[se[0]:se[1]]),
                          bounds))
    return out


def cosine_matrix(a: np.ndarray, b: np.ndarray, threads: int = 1) -> np.ndarray:
    """Pairwise cosine similarity between rows of ``a`` and rows of ``b``.

    Rows are unit-normalized first (zero rows stay zero, so their similarity
    to anything is 0) and the products are clamped to [-1, 1] against
    rounding.
    """
    sims = dot_rows(unit_rows(a), unit_rows(b), threads=threads)
    np.clip(sims, -1.0, 1.0, out=sims)
    return sims
