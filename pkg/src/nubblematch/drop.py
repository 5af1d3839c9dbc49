"""Channel-drop transformations.

The random drop mask zeroes a sampled subset of feature channels; one mask
is applied to both the reference and target grids so the comparison happens
in a common channel subspace.  Dropped vectors are not renormalized: cosine
similarity is simply recomputed on the masked vectors.  Two deterministic
alternatives are provided: per-patch trimming of extreme channels, and a
greedy mismatch-driven channel pruning search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernel
from .errors import ArgumentError, BoundError, DimensionError, PreconditionError, ValidationError
from .rng import sample_without_replacement
from .tensorio import BinaryMask, FeatureGrid

MAX_PRUNE_PATCHES = 4096


@dataclass(frozen=True)
class DropMask:
    """A set of channel indices to zero out of ``total_channels``.

    ``seed`` is the sampling seed for random masks and ``None`` for
    deterministically constructed ones; ``ratio`` is the requested drop
    fraction.
    """

    total_channels: int
    dropped: tuple[int, ...]
    seed: Optional[int] = None
    ratio: float = 0.0

    def __post_init__(self):
        if self.total_channels < 1:
            raise ValidationError("total_channels must be >= 1")
        dropped = tuple(int(i) for i in self.dropped)
        if sorted(set(dropped)) != list(dropped):
            raise ValidationError("dropped indices must be unique and sorted")
        if dropped and not (0 <= dropped[0] and dropped[-1] < self.total_channels):
            raise ValidationError("dropped indices must lie in [0, total_channels)")
        if len(dropped) >= self.total_channels:
            raise ValidationError("cannot drop every channel")
        if not 0.0 <= self.ratio < 1.0:
            raise ValidationError("ratio must be in [0, 1)")
        object.__setattr__(self, "dropped", dropped)

    def __len__(self) -> int:
        return len(self.dropped)

    def to_payload(self) -> dict:
        return {
            "n": self.total_channels,
            "ratio": self.ratio,
            "seed": self.seed,
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "DropMask":
        try:
            return cls(
                total_channels=int(payload["n"]),
                dropped=tuple(payload["dropped"]),
                seed=None if payload.get("seed") is None else int(payload["seed"]),
                ratio=float(payload.get("ratio", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed drop-mask payload: {exc}") from exc


def sample_drop_mask(n: int, ratio: float, seed: int) -> DropMask:
    """Sample ``round(ratio * n)`` distinct channels to drop, uniformly.

    The count uses banker's rounding on the binary-float product and the
    sampling runs on SplitMix64, so equal ``(n, ratio, seed)`` give equal
    masks on every platform.
    """
    if n < 1:
        raise ArgumentError("channel count must be >= 1")
    if not 0.0 <= ratio < 1.0:
        raise ArgumentError(f"drop ratio must be in [0, 1), got {ratio}")
    count = round(ratio * n)
    if count >= n:
        raise ArgumentError(
            f"ratio {ratio} would drop all {n} channels (round({ratio}*{n}) = {count})"
        )
    dropped = sample_without_replacement(n, count, seed)
    return DropMask(total_channels=n, dropped=dropped, seed=seed, ratio=ratio)


def apply_drop(g: FeatureGrid, m: DropMask) -> FeatureGrid:
    """Return a copy of ``g`` with the masked channels set to 0 in every patch.

    An empty mask returns an identical grid (normalized flag preserved);
    otherwise the flag is cleared since patch norms shrink.
    """
    if m.total_channels != g.channels:
        raise DimensionError(
            f"mask covers {m.total_channels} channels, grid has {g.channels}"
        )
    if not m.dropped:
        return FeatureGrid(g.values.copy(), normalized=g.normalized, source_id=g.source_id)
    vals = g.values.copy()
    vals[:, :, list(m.dropped)] = 0.0
    return FeatureGrid(vals, normalized=False, source_id=g.source_id)


def trim_extremes(g: FeatureGrid, m_per_patch: int) -> FeatureGrid:
    """Zero the ``m_per_patch`` largest-|value| channels of each patch.

    Ties on absolute value break toward the lower channel index.  ``m_per_patch``
    of 0 is the identity.
    """
    if not g.normalized:
        raise PreconditionError("trim_extremes requires a normalized grid")
    if not 0 <= m_per_patch < g.channels:
        raise ArgumentError(
            f"m_per_patch must be in [0, channels), got {m_per_patch} for C={g.channels}"
        )
    if m_per_patch == 0:
        return FeatureGrid(g.values.copy(), normalized=True, source_id=g.source_id)
    flat = g.patches.copy()
    order = np.argsort(-np.abs(flat), axis=1, kind="stable")
    rows = np.arange(flat.shape[0])[:, None]
    flat[rows, order[:, :m_per_patch]] = 0.0
    vals = flat.reshape(g.values.shape)
    return FeatureGrid(vals, normalized=False, source_id=g.source_id)


@dataclass(frozen=True)
class PruneResult:
    """Greedy pruning outcome: the chosen mask plus the mismatch trajectory.

    ``error_history`` holds ``(channels_dropped_so_far, mismatch_count)``
    pairs, starting with the zero-drop baseline, one entry per greedy step
    (``budget + 1`` entries total).  Greedy may plateau; the history is not
    required to decrease.
    """

    mask: DropMask
    error_history: tuple[tuple[int, int], ...]


class _RestrictedMismatch:
    """Foreground mismatch counter over fixed per-point background candidates.

    Holds just the rows the search needs (foreground patches plus the union
    of candidate backgrounds) so evaluating a candidate channel only touches
    a small sub-grid.
    """

    def __init__(self, flat: np.ndarray, fg_idx: np.ndarray,
                 candidates: list[np.ndarray], fg_bits: np.ndarray):
        self.fg_idx = fg_idx
        self.fg_rows = flat[fg_idx].copy()
        self.cand_union = np.unique(np.concatenate(candidates))
        self.cu_rows = flat[self.cand_union].copy()
        self.cand_pos = [np.searchsorted(self.cand_union, c) for c in candidates]
        self.fg_bits = fg_bits

    def count(self, dropped: Sequence[int]) -> int:
        fg_rows, cu_rows = self.fg_rows, self.cu_rows
        if len(dropped):
            fg_rows = fg_rows.copy()
            cu_rows = cu_rows.copy()
            fg_rows[:, list(dropped)] = 0.0
            cu_rows[:, list(dropped)] = 0.0
        fg_unit = kernel.unit_rows(fg_rows)
        sims_ff = np.clip(kernel.dot_rows(fg_unit, fg_unit), -1.0, 1.0)
        sims_fc = np.clip(kernel.dot_rows(fg_unit, kernel.unit_rows(cu_rows)), -1.0, 1.0)
        mismatches = 0
        for i in range(len(self.fg_idx)):
            pos = self.cand_pos[i]
            scores = np.concatenate([np.delete(sims_ff[i], i), sims_fc[i, pos]])
            linears = np.concatenate([np.delete(self.fg_idx, i), self.cand_union[pos]])
            winners = linears[scores == scores.max()]
            if not self.fg_bits[winners.min()]:
                mismatches += 1
        return mismatches


def greedy_channel_prune(
    ref: FeatureGrid, fg: BinaryMask, budget: int, k_bg: int
) -> PruneResult:
    """Greedily drop the channels that most reduce foreground mismatches.

    Each iteration scores every remaining channel by the foreground-mismatch
    count with that channel additionally zeroed, restricted per foreground
    point to its ``k_bg`` most-similar background patches (fixed once from
    the undropped grid, for cost control), and drops the best channel (ties
    to the lowest index).  Runs exactly ``budget`` iterations even when the
    count is already 0.
    """
    if not ref.normalized:
        raise PreconditionError("greedy_channel_prune requires a normalized grid")
    if (fg.height, fg.width) != (ref.height, ref.width):
        raise DimensionError("foreground mask dimensions must match the grid")
    n_patches = ref.height * ref.width
    if n_patches > MAX_PRUNE_PATCHES:
        raise BoundError(
            f"grid has {n_patches} patches, pruning is bounded at {MAX_PRUNE_PATCHES}"
        )
    if not 0 <= budget < ref.channels:
        raise ArgumentError(f"budget must be in [0, channels), got {budget}")
    if k_bg < 1:
        raise ArgumentError("k_bg must be >= 1")
    bits = fg.bits.ravel()
    fg_idx = np.flatnonzero(bits)
    bg_idx = np.flatnonzero(~bits)
    if len(fg_idx) == 0 or len(bg_idx) == 0:
        raise ArgumentError("pruning needs at least one foreground and one background patch")

    flat = ref.patches
    # Background candidates per foreground point, fixed from the baseline
    # similarities (ties to the lower background index).
    base_sims = np.clip(kernel.dot_rows(kernel.unit_rows(flat[fg_idx]),
                                        kernel.unit_rows(flat[bg_idx])), -1.0, 1.0)
    k = min(k_bg, len(bg_idx))
    order = np.argsort(-base_sims, axis=1, kind="stable")[:, :k]
    candidates = [bg_idx[order[i]] for i in range(len(fg_idx))]
    counter = _RestrictedMismatch(flat, fg_idx, candidates, bits)

    dropped: list[int] = []
    history = [(0, counter.count(dropped))]
    remaining = list(range(ref.channels))
    for _ in range(budget):
        best_channel = -1
        best_count = None
        for c in remaining:
            count = counter.count(dropped + [c])
            if best_count is None or count < best_count:
                best_count, best_channel = count, c
        dropped.append(best_channel)
        dropped.sort()
        remaining.remove(best_channel)
        history.append((len(dropped), counter.count(dropped)))
    mask = DropMask(
        total_channels=ref.channels,
        dropped=tuple(dropped),
        seed=None,
        ratio=len(dropped) / ref.channels,
    )
    return PruneResult(mask=mask, error_history=tuple(history))
