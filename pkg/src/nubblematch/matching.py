"""Raw-feature patch matching: cosine maps, best matches, prompts, proxy scoring.

This is the matching strategy under study: cosine similarity along the
channel dimension between reference and target patches, a best-match argmax
with deterministic tie-breaking (lowest row-major index), prompt extraction
from similarity maps, and a threshold-based proxy segmentation used for
scoring.  The proxy stands in for a promptable segmentation model: scores
produced here measure the matching signal itself, nothing downstream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernel
from .drop import DropMask, apply_drop
from .errors import ArgumentError, DimensionError, ValidationError
from .tensorio import BinaryMask, FeatureGrid

AGGREGATORS = ("max", "mean")


@dataclass(frozen=True)
class SimilarityMap:
    """Per-target-patch similarity scores, each in [-1, 1]."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if scores.ndim != 2:
            raise DimensionError(f"similarity map must be rank 2, got {scores.ndim}")
        if not np.isfinite(scores).all():
            raise ValidationError("similarity map contains non-finite scores")
        if scores.size and (scores.min() < -1.0 or scores.max() > 1.0):
            raise ValidationError("similarity scores must lie in [-1, 1]")
        object.__setattr__(self, "scores", scores)

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    def to_payload(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "scores": self.scores.tolist(),
        }


@dataclass(frozen=True)
class BestMatchMap:
    """For each target patch, the argmax reference patch and its score."""

    rows: np.ndarray
    cols: np.ndarray
    scores: np.ndarray
    ref_height: int
    ref_width: int

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        if not (rows.shape == cols.shape == scores.shape) or rows.ndim != 2:
            raise DimensionError("best-match arrays must share one rank-2 shape")
        if rows.size and not (
            (rows >= 0).all() and (rows < self.ref_height).all()
            and (cols >= 0).all() and (cols < self.ref_width).all()
        ):
            raise ValidationError("best-match coordinates fall outside the reference grid")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "scores", scores)

    def to_payload(self) -> dict:
        return {
            "ref_height": self.ref_height,
            "ref_width": self.ref_width,
            "rows": self.rows.tolist(),
            "cols": self.cols.tolist(),
            "scores": self.scores.tolist(),
        }


@dataclass(frozen=True)
class PromptSet:
    """Selected prompt points (descending score) and an optional tight box."""

    points: tuple[tuple[int, int, float], ...]
    box: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        scores = [p[2] for p in self.points]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValidationError("prompt points must be sorted by descending score")

    def to_payload(self) -> dict:
        return {
            "points": [{"row": r, "col": c, "score": s} for r, c, s in self.points],
            "box": None if self.box is None else {
                "row_min": self.box[0], "col_min": self.box[1],
                "row_max": self.box[2], "col_max": self.box[3],
            },
        }


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of two channel vectors; 0 if either is the zero vector.

    >>> cosine_similarity(np.array([3.0, 4.0]), np.array([4.0, 3.0]))
    0.96
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"vectors must share one length, got {u.shape} and {v.shape}")
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        raise ValidationError("cosine inputs must be finite")
    nu = float(np.sqrt(np.sum(u * u)))
    nv = float(np.sqrt(np.sum(v * v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, float(np.dot(u, v)) / (nu * nv))))


def _dropped_pair(tgt: FeatureGrid, ref: FeatureGrid, drop: Optional[DropMask]):
    if tgt.channels != ref.channels:
        raise DimensionError(
            f"channel counts differ: target {tgt.channels}, reference {ref.channels}"
        )
    if drop is not None:
        return apply_drop(tgt, drop), apply_drop(ref, drop)
    return tgt, ref


def best_match_map(
    tgt: FeatureGrid,
    ref: FeatureGrid,
    drop: Optional[DropMask] = None,
    exclude_self: bool = False,
    threads: int = 1,
) -> BestMatchMap:
    """Argmax cosine match of every target patch against the reference grid.

    An optional drop mask is applied to both grids first.  Ties break to the
    lowest row-major reference index.  With ``exclude_self`` (grids must be
    the same) a patch never matches its own position.
    """
    if exclude_self:
        if (tgt.height, tgt.width) != (ref.height, ref.width) or not (
            tgt.values is ref.values or np.array_equal(tgt.values, ref.values)
        ):
            raise ArgumentError("exclude_self requires matching a grid against itself")
        if tgt.height * tgt.width < 2:
            raise ArgumentError("exclude_self needs at least two patches")
    tgt_d, ref_d = _dropped_pair(tgt, ref, drop)
    sims = kernel.cosine_matrix(tgt_d.patches, ref_d.patches, threads=threads)
    if exclude_self:
        np.fill_diagonal(sims, -2.0)
    flat_idx = np.argmax(sims, axis=1)
    scores = sims[np.arange(sims.shape[0]), flat_idx]
    shape = (tgt.height, tgt.width)
    return BestMatchMap(
        rows=(flat_idx // ref.width).reshape(shape),
        cols=(flat_idx % ref.width).reshape(shape),
        scores=scores.reshape(shape),
        ref_height=ref.height,
        ref_width=ref.width,
    )


def foreground_similarity_map(
    ref: FeatureGrid,
    fg: BinaryMask,
    tgt: FeatureGrid,
    aggregator: str = "max",
    drop: Optional[DropMask] = None,
    threads: int = 1,
) -> SimilarityMap:
    """Score each target patch against the reference foreground patches.

    ``aggregator`` is ``max`` (default; robust to multi-part foregrounds) or
    ``mean`` over the foreground patches, in fixed row-major order.
    """
    if aggregator not in AGGREGATORS:
        raise ArgumentError(f"aggregator must be one of {AGGREGATORS}, got {aggregator!r}")
    if (fg.height, fg.width) != (ref.height, ref.width):
        raise DimensionError("foreground mask dimensions must match the reference grid")
    if fg.count() == 0:
        raise ArgumentError("foreground mask has no true bits")
    tgt_d, ref_d = _dropped_pair(tgt, ref, drop)
    fg_feats = ref_d.patches[fg.bits.ravel()]
    sims = kernel.cosine_matrix(tgt_d.patches, fg_feats, threads=threads)
    agg = np.max(sims, axis=1) if aggregator == "max" else np.mean(sims, axis=1)
    np.clip(agg, -1.0, 1.0, out=agg)
    return SimilarityMap(agg.reshape(tgt.height, tgt.width))


def extract_prompts(
    sim_map: SimilarityMap, k: int, min_separation: int, tau: float
) -> PromptSet:
    """Greedy peak picking with a Chebyshev separation constraint.

    Repeatedly selects the highest-scoring unselected patch at Chebyshev
    distance >= ``min_separation`` from every already-selected point (ties
    to the lowest row-major index), up to ``k`` points or exhaustion.  The
    box is the tight bounding box of patches scoring >= ``tau``; ``None``
    when no patch qualifies.
    """
    if k < 1:
        raise ArgumentError("k must be >= 1")
    if min_separation < 0:
        raise ArgumentError("min_separation must be >= 0")
    scores = sim_map.scores
    h, w = scores.shape
    flat = scores.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    chosen: list[tuple[int, int, float]] = []
    for linear in order:
        if len(chosen) == k:
            break
        r, c = divmod(int(linear), w)
        if all(max(abs(r - pr), abs(c - pc)) >= min_separation for pr, pc, _ in chosen):
            chosen.append((r, c, float(flat[linear])))
    above = np.argwhere(scores >= tau)
    box = None
    if len(above):
        box = (int(above[:, 0].min()), int(above[:, 1].min()),
               int(above[:, 0].max()), int(above[:, 1].max()))
    return PromptSet(points=tuple(chosen), box=box)


def proxy_segment(sim_map: SimilarityMap, tau: float) -> BinaryMask:
    """Threshold the similarity map: foreground where score >= ``tau``."""
    return BinaryMask(sim_map.scores >= tau)


def iou(pred: BinaryMask, gt: BinaryMask) -> float:
    """Intersection over union of two masks; 1.0 when both are empty."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DimensionError("mask dimensions differ")
    union = np.logical_or(pred.bits, gt.bits).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(pred.bits, gt.bits).sum()
    return float(inter / union)
