"""Feature-distribution diagnostics and the mismatch experiment.

Three probes into why raw-feature matching misbehaves:

* ``mismatch_report`` — for every foreground patch of a reference grid, find
  its best cosine match among all *other* patches of the same grid and flag
  the image when any winner is background;
* ``channel_diagnostics`` — per-patch extreme-value and variance statistics
  of the normalized feature magnitudes, with strict thresholds kappa (a
  patch is "dominant" when its largest |value| exceeds kappa, i.e. one
  channel holds over kappa^2 of the unit squared mass) and nu (mean
  per-patch variance above nu signals many channels too small to matter);
* ``interaction_strength`` — first-hidden-layer interaction strengths of a
  feed-forward network from absolute-weight chains.

Kappa/nu defaults (0.5 / 4e-4) are calibrated for ~1024-channel features and
are surfaced as flags since they do not rescale with channel count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .drop import DropMask
from .errors import ArgumentError, DimensionError, PreconditionError, ValidationError
from .matching import best_match_map
from .tensorio import BinaryMask, FeatureGrid, Report

DEFAULT_KAPPA = 0.5
DEFAULT_NU = 0.0004
AGG_FUNCS = ("mean", "min")


@dataclass(frozen=True)
class MismatchRecord:
    row: int
    col: int
    best_row: int
    best_col: int
    best_score: float
    best_is_foreground: bool


@dataclass(frozen=True)
class MismatchReport:
    """Per-foreground-point best-match outcomes for one reference grid."""

    records: tuple[MismatchRecord, ...]
    mismatch_count: int
    total_fg: int

    @property
    def image_flagged(self) -> bool:
        return self.mismatch_count > 0

    def to_report(self, drop: Optional[DropMask] = None) -> Report:
        payload = {
            "records": [
                {
                    "row": r.row, "col": r.col,
                    "best_row": r.best_row, "best_col": r.best_col,
                    "best_score": r.best_score,
                    "best_is_foreground": r.best_is_foreground,
                }
                for r in self.records
            ],
            "mismatch_count": self.mismatch_count,
            "total_fg": self.total_fg,
            "image_flagged": self.image_flagged,
            "drop_mask": None if drop is None else drop.to_payload(),
        }
        return Report(kind="mismatch", payload=payload)


def mismatch_report(
    ref: FeatureGrid,
    fg: BinaryMask,
    drop: Optional[DropMask] = None,
    threads: int = 1,
) -> MismatchReport:
    """Count foreground patches whose best self-match is background.

    Each foreground patch is matched against every other patch of the same
    grid (itself excluded, optional drop applied); a mismatch is a winner
    lying in the background.  Tie-breaking is inherited from
    ``best_match_map`` (lowest row-major index).
    """
    if not ref.normalized:
        raise PreconditionError("mismatch_report requires a normalized grid")
    if (fg.height, fg.width) != (ref.height, ref.width):
        raise DimensionError("foreground mask dimensions must match the grid")
    n_fg = fg.count()
    if n_fg == 0 or n_fg == fg.height * fg.width:
        raise ArgumentError("mask must contain both foreground and background patches")
    bm = best_match_map(ref, ref, drop=drop, exclude_self=True, threads=threads)
    records = []
    mismatches = 0
    for r, c in np.argwhere(fg.bits):
        br, bc = int(bm.rows[r, c]), int(bm.cols[r, c])
        is_fg = bool(fg.bits[br, bc])
        if not is_fg:
            mismatches += 1
        records.append(MismatchRecord(
            row=int(r), col=int(c), best_row=br, best_col=bc,
            best_score=float(bm.scores[r, c]), best_is_foreground=is_fg,
        ))
    return MismatchReport(records=tuple(records), mismatch_count=mismatches,
                          total_fg=int(n_fg))


@dataclass(frozen=True)
class ChannelDiagnostics:
    """Per-patch magnitude statistics with dominance/submergence verdicts."""

    max_abs: np.ndarray
    variance_abs: np.ndarray
    mean_abs_overall: float
    mean_variance: float
    kappa: float
    nu: float
    dominant_patch_count: int
    submergence_flag: bool

    def to_report(self) -> Report:
        payload = {
            "max_abs": self.max_abs.tolist(),
            "variance_abs": self.variance_abs.tolist(),
            "mean_abs_overall": self.mean_abs_overall,
            "mean_variance": self.mean_variance,
            "kappa": self.kappa,
            "nu": self.nu,
            "dominant_patch_count": self.dominant_patch_count,
            "submergence_flag": self.submergence_flag,
        }
        return Report(kind="diagnostics", payload=payload)


def channel_diagnostics(
    g: FeatureGrid, kappa: float = DEFAULT_KAPPA, nu: float = DEFAULT_NU
) -> ChannelDiagnostics:
    """Magnitude statistics across the channel dimension of a normalized grid.

    Per patch: the maximum and the population variance of the absolute
    channel values.  A patch counts as dominant when ``max_abs > kappa``
    (strict); the grid is submergence-flagged when the patch-mean variance
    strictly exceeds ``nu``.
    """
    if not g.normalized:
        raise PreconditionError("channel_diagnostics requires a normalized grid")
    magnitudes = np.abs(g.values)
    max_abs = magnitudes.max(axis=2)
    variance_abs = magnitudes.var(axis=2)
    mean_variance = float(variance_abs.mean())
    return ChannelDiagnostics(
        max_abs=max_abs,
        variance_abs=variance_abs,
        mean_abs_overall=float(magnitudes.mean()),
        mean_variance=mean_variance,
        kappa=kappa,
        nu=nu,
        dominant_patch_count=int((max_abs > kappa).sum()),
        submergence_flag=bool(mean_variance > nu),
    )


def threshold_counts(
    values: Sequence[float], thresholds: Sequence[float], mode: str = "above"
) -> list[tuple[float, int]]:
    """Count values strictly above (or below) each threshold.

    Feeds the sliding-threshold CSV exports used to chart how many images
    exhibit dominant channels or low variance at a given cutoff.
    """
    if mode not in ("above", "below"):
        raise ArgumentError(f"mode must be 'above' or 'below', got {mode!r}")
    vals = np.asarray(values, dtype=np.float64)
    rows = []
    for t in thresholds:
        count = int((vals > t).sum()) if mode == "above" else int((vals < t).sum())
        rows.append((float(t), count))
    return rows


@dataclass(frozen=True)
class InteractionQuery:
    """A feed-forward stack W(1)..W(L) + output weights, and an input index set.

    ``interaction`` holds 0-based input indices.  ``aggregator`` is ``mean``
    (default) or ``min``.
    """

    weight_matrices: tuple[np.ndarray, ...]
    output_weights: np.ndarray
    interaction: tuple[int, ...]
    aggregator: str = "mean"

    def __post_init__(self):
        mats = tuple(np.asarray(w, dtype=np.float64) for w in self.weight_matrices)
        if not mats:
            raise ValidationError("at least one weight matrix is required")
        for i, w in enumerate(mats):
            if w.ndim != 2:
                raise DimensionError(f"weight matrix {i} must be rank 2")
        for i in range(1, len(mats)):
            if mats[i].shape[1] != mats[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} expects {mats[i].shape[1]} inputs but layer "
                    f"{i - 1} emits {mats[i - 1].shape[0]}"
                )
        wy = np.asarray(self.output_weights, dtype=np.float64)
        if wy.ndim != 1 or wy.shape[0] != mats[-1].shape[0]:
            raise DimensionError("output weights must match the last layer's units")
        idx = tuple(sorted(set(int(i) for i in self.interaction)))
        if not idx:
            raise ValidationError("interaction set must be non-empty")
        if idx[0] < 0 or idx[-1] >= mats[0].shape[1]:
            raise ValidationError("interaction indices must address first-layer inputs")
        if self.aggregator not in AGG_FUNCS:
            raise ValidationError(f"aggregator must be one of {AGG_FUNCS}")
        object.__setattr__(self, "weight_matrices", mats)
        object.__setattr__(self, "output_weights", wy)
        object.__setattr__(self, "interaction", idx)


def interaction_strength(q: InteractionQuery) -> np.ndarray:
    """Interaction strengths at each first-hidden-layer unit.

    The aggregated weight of unit i is the absolute-value chain
    ``|w_y|^T |W(L)| ... |W(2)|`` (just ``|w_y|^T`` for a single layer); the
    strength multiplies it by the aggregated |W(1)| entries over the
    interaction's input columns.
    """
    z = np.abs(q.output_weights)
    for w in q.weight_matrices[:0:-1]:
        z = z @ np.abs(w)
    first = np.abs(q.weight_matrices[0][:, list(q.interaction)])
    agg = first.mean(axis=1) if q.aggregator == "mean" else first.min(axis=1)
    return z * agg


def grid_summary_stats(grids: Iterable[FeatureGrid]) -> dict:
    """Per-grid dominance/variance stats for batch threshold charts."""
    max_abs, mean_var, mean_abs = [], [], []
    for g in grids:
        d = channel_diagnostics(g)
        max_abs.append(float(d.max_abs.max()))
        mean_var.append(d.mean_variance)
        mean_abs.append(d.mean_abs_overall)
    return {"max_abs": max_abs, "mean_variance": mean_var, "mean_abs": mean_abs}
