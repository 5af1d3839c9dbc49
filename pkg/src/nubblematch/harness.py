"""Synthetic instance generation and seeded experiment loops.

``synth_clusters`` builds reference/target grid pairs from two unit
prototypes with a controlled cosine margin, optional per-channel Gaussian
noise, and an optional corrupting "nubble" channel whose large injected
value drags cross-cluster similarities up.  ``run_drop_sweep`` and
``run_cumulative_curve`` evaluate a proxy metric over grids of drop ratios
and growing instance counts.

All randomness is derived: each (ratio index, trial index, instance index)
cell gets its own mask seed through ``rng.derive_seed``, so results are
independent of iteration order and parallel scheduling.  The metric is a
proxy (thresholded similarity-map IoU, mismatch rate, or prompt hit rate),
named explicitly in every CSV header; no promptable segmentation model is
involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .diagnostics import mismatch_report
from .drop import DropMask, sample_drop_mask
from .errors import ArgumentError, ValidationError
from .matching import extract_prompts, foreground_similarity_map, iou, proxy_segment
from .rng import derive_seed
from .tensorio import (
    BinaryMask,
    FeatureGrid,
    Report,
    normalize_grid,
    read_tensor,
    write_csv,
    write_json,
    write_tensor,
)

METRICS = ("proxy-iou", "mismatch-rate", "prompt-hit-rate")
_METRIC_TOKENS = {"proxy-iou": "proxy_iou", "mismatch-rate": "mismatch_rate",
                  "prompt-hit-rate": "prompt_hit_rate"}

# Fixed prompt parameters for the prompt-hit-rate metric.
PROMPT_K = 3
PROMPT_MIN_SEPARATION = 1

# Corruption rule: the injected channel value overwrites exactly one
# foreground patch and a quarter of the background patches (at least one),
# chosen by seeded draw, before renormalization.
_BG_CORRUPT_FRACTION = 0.25


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for one synthetic reference/target pair."""

    height: int
    width: int
    channels: int
    fg_fraction: float
    margin: float
    noise_sigma: float = 0.0
    noise_channel: Optional[int] = None
    dominant_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ArgumentError("grid dimensions must be >= 1")
        if self.channels < 2:
            raise ArgumentError("synthesis needs at least 2 channels")
        if not 0.0 < self.fg_fraction < 1.0:
            raise ArgumentError("fg_fraction must be strictly inside (0, 1)")
        if not 0.0 <= self.margin <= 1.0:
            raise ArgumentError("margin must be in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ArgumentError("noise_sigma must be >= 0")
        if self.noise_channel is not None and not 0 <= self.noise_channel < self.channels:
            raise ArgumentError("noise_channel must index a valid channel")
        if self.height * self.width < 2:
            raise ArgumentError("need at least 2 patches")


Instance = tuple[FeatureGrid, BinaryMask, FeatureGrid, BinaryMask]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(np.sum(v * v))


def _prototypes(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(derive_seed(spec.seed, 0))
    u_f = _unit(rng.standard_normal(spec.channels))
    w = rng.standard_normal(spec.channels)
    w = w - np.dot(w, u_f) * u_f
    w = _unit(w)
    target_cos = 1.0 - spec.margin
    u_b = target_cos * u_f + np.sqrt(max(0.0, 1.0 - target_cos * target_cos)) * w
    return u_f, _unit(u_b)


def _build_side(spec: SynthSpec, u_f: np.ndarray, u_b: np.ndarray,
                stream_seed: int, tag: str) -> tuple[FeatureGrid, BinaryMask]:
    rng = np.random.default_rng(stream_seed)
    n = spec.height * spec.width
    n_fg = min(max(round(spec.fg_fraction * n), 1), n - 1)
    perm = rng.permutation(n)
    fg_idx = np.sort(perm[:n_fg])
    bits = np.zeros(n, dtype=bool)
    bits[fg_idx] = True

    x = np.where(bits[:, None], u_f[None, :], u_b[None, :]).astype(np.float64)
    if spec.noise_sigma > 0.0:
        x = x + spec.noise_sigma * rng.standard_normal((n, spec.channels))
    if spec.noise_channel is not None:
        bg_idx = np.flatnonzero(~bits)
        fg_pick = fg_idx[int(rng.integers(len(fg_idx)))]
        n_bg_corrupt = max(1, round(_BG_CORRUPT_FRACTION * len(bg_idx)))
        bg_pick = bg_idx[rng.permutation(len(bg_idx))[:n_bg_corrupt]]
        corrupt = np.concatenate([[fg_pick], bg_pick])
        x[corrupt, spec.noise_channel] = spec.dominant_value
    grid = normalize_grid(FeatureGrid(
        x.reshape(spec.height, spec.width, spec.channels),
        normalized=False,
        source_id=f"synth-{spec.seed}-{tag}",
    ))
    return grid, BinaryMask(bits.reshape(spec.height, spec.width))


def synth_clusters(spec: SynthSpec) -> Instance:
    """Generate (ref grid, ref fg mask, target grid, target gt mask).

    Foreground patches cluster around one unit prototype, background around
    another at cosine ``1 - margin``; the target side uses the same
    prototypes with an independent seeded draw.  Outputs are deterministic
    in ``spec`` (same spec, same bytes).
    """
    u_f, u_b = _prototypes(spec)
    ref, fg = _build_side(spec, u_f, u_b, derive_seed(spec.seed, 1), "ref")
    tgt, tgt_gt = _build_side(spec, u_f, u_b, derive_seed(spec.seed, 2), "tgt")
    return ref, fg, tgt, tgt_gt


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def evaluate_metric(
    instance: Instance,
    drop: Optional[DropMask],
    metric: str,
    tau: float,
    aggregator: str = "max",
    threads: int = 1,
) -> float:
    """One scalar score for one instance under an optional drop mask."""
    if metric not in METRICS:
        raise ArgumentError(f"metric must be one of {METRICS}, got {metric!r}")
    ref, fg, tgt, tgt_gt = instance
    if metric == "mismatch-rate":
        rep = mismatch_report(ref, fg, drop=drop, threads=threads)
        return rep.mismatch_count / rep.total_fg
    sim = foreground_similarity_map(ref, fg, tgt, aggregator=aggregator,
                                    drop=drop, threads=threads)
    if metric == "proxy-iou":
        return iou(proxy_segment(sim, tau), tgt_gt)
    prompts = extract_prompts(sim, k=PROMPT_K,
                              min_separation=PROMPT_MIN_SEPARATION, tau=tau)
    hits = sum(1 for r, c, _ in prompts.points if tgt_gt.bits[r, c])
    return hits / len(prompts.points)


@dataclass(frozen=True)
class SweepRow:
    drop_ratio: float
    trials: int
    mean_metric: float
    std_metric: float
    baseline_metric: float


@dataclass(frozen=True)
class SweepResult:
    metric: str
    tau: float
    seed: int
    aggregator: str
    rows: tuple[SweepRow, ...]

    def to_report(self) -> Report:
        payload = {
            "metric": self.metric,
            "tau": self.tau,
            "seed": self.seed,
            "aggregator": self.aggregator,
            "rows": [
                {
                    "drop_ratio": r.drop_ratio,
                    "trials": r.trials,
                    "mean": r.mean_metric,
                    "std": r.std_metric,
                    "baseline": r.baseline_metric,
                }
                for r in self.rows
            ],
        }
        return Report(kind="sweep", payload=payload)


def run_drop_sweep(
    instances: Sequence[Instance],
    ratios: Sequence[float],
    trials: int,
    seed: int,
    metric: str = "proxy-iou",
    tau: float = 0.5,
    aggregator: str = "max",
    threads: int = 1,
) -> SweepResult:
    """Metric mean/std per drop ratio over instances x trials.

    The mask for cell (ratio index ri, trial t, instance i) is sampled with
    seed ``derive_seed(seed, ri, t, i)``.  Ratio 0 short-circuits to the
    no-sampling baseline: its mean is bitwise the baseline mean and its std
    is exactly 0.  Mean and std (population) pool all instance x trial
    values of a ratio.
    """
    if not instances:
        raise ArgumentError("instance list is empty")
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    for ratio in ratios:
        if not 0.0 <= ratio < 1.0:
            raise ArgumentError(f"drop ratio must be in [0, 1), got {ratio}")
    baselines = np.array([
        evaluate_metric(inst, None, metric, tau, aggregator, threads)
        for inst in instances
    ])
    baseline_mean = float(np.mean(baselines))
    rows = []
    for ri, ratio in enumerate(ratios):
        if ratio == 0.0:
            rows.append(SweepRow(ratio, trials, baseline_mean, 0.0, baseline_mean))
            continue
        values = np.empty((trials, len(instances)))
        for t in range(trials):
            for i, inst in enumerate(instances):
                mask = sample_drop_mask(inst[0].channels, ratio,
                                        derive_seed(seed, ri, t, i))
                values[t, i] = evaluate_metric(inst, mask, metric, tau,
                                               aggregator, threads)
        rows.append(SweepRow(ratio, trials, float(values.mean()),
                             float(values.std()), baseline_mean))
    return SweepResult(metric=metric, tau=tau, seed=seed,
                       aggregator=aggregator, rows=tuple(rows))


@dataclass(frozen=True)
class CurveResult:
    metric: str
    ratio: float
    tau: float
    seed: int
    aggregator: str
    rows: tuple[tuple[int, float], ...]  # (n_pairs, mean improvement)

    def to_report(self) -> Report:
        payload = {
            "metric": self.metric,
            "drop_ratio": self.ratio,
            "tau": self.tau,
            "seed": self.seed,
            "aggregator": self.aggregator,
            "rows": [{"n_pairs": n, "mean_improvement": v} for n, v in self.rows],
        }
        return Report(kind="curve", payload=payload)


def run_cumulative_curve(
    instances: Sequence[Instance],
    ratio: float,
    trials: int,
    seed: int,
    metric: str = "proxy-iou",
    tau: float = 0.5,
    aggregator: str = "max",
    threads: int = 1,
) -> CurveResult:
    """Mean metric improvement over the first n reference/target pairs.

    Improvement per instance is the trial-mean dropped metric minus the
    instance baseline; mask seeds reuse the sweep derivation with ratio
    index 0.  Ratio 0 yields exactly zero improvements.
    """
    if not instances:
        raise ArgumentError("instance list is empty")
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    if not 0.0 <= ratio < 1.0:
        raise ArgumentError(f"drop ratio must be in [0, 1), got {ratio}")
    improvements = np.zeros(len(instances))
    if ratio != 0.0:
        for i, inst in enumerate(instances):
            baseline = evaluate_metric(inst, None, metric, tau, aggregator, threads)
            per_trial = np.empty(trials)
            for t in range(trials):
                mask = sample_drop_mask(inst[0].channels, ratio,
                                        derive_seed(seed, 0, t, i))
                per_trial[t] = evaluate_metric(inst, mask, metric, tau,
                                               aggregator, threads)
            improvements[i] = float(np.mean(per_trial)) - baseline
    prefix = np.cumsum(improvements)
    rows = tuple((n + 1, float(prefix[n] / (n + 1))) for n in range(len(instances)))
    return CurveResult(metric=metric, ratio=ratio, tau=tau, seed=seed,
                       aggregator=aggregator, rows=rows)


# ---------------------------------------------------------------------------
# CSV / manifest plumbing
# ---------------------------------------------------------------------------

def sweep_to_csv(result: SweepResult, path: Union[str, Path]) -> None:
    token = _METRIC_TOKENS[result.metric]
    header = ["drop_ratio", "trials", f"mean_{token}", f"std_{token}",
              f"baseline_{token}"]
    rows = [(r.drop_ratio, r.trials, r.mean_metric, r.std_metric,
             r.baseline_metric) for r in result.rows]
    write_csv(header, rows, path)


def curve_to_csv(result: CurveResult, path: Union[str, Path]) -> None:
    # n_pairs counts reference/target pairs, not single images.
    token = _METRIC_TOKENS[result.metric]
    write_csv(["n_pairs", f"mean_improvement_{token}"], list(result.rows), path)


def write_instances(instances: Sequence[Instance], out_dir: Union[str, Path]) -> Path:
    """Write instance tensors plus a manifest of relative paths.

    Returns the manifest path.  Paths inside the manifest are relative to
    its directory so a whole instance set can be moved or compared
    byte-for-byte across directories.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (ref, fg, tgt, tgt_gt) in enumerate(instances):
        stem = f"{i:03d}"
        names = {
            "ref": f"{stem}_ref.npy",
            "fg": f"{stem}_fg.npy",
            "tgt": f"{stem}_tgt.npy",
            "tgt_gt": f"{stem}_tgt_gt.npy",
        }
        write_tensor(ref, out_dir / names["ref"])
        write_tensor(fg, out_dir / names["fg"])
        write_tensor(tgt, out_dir / names["tgt"])
        write_tensor(tgt_gt, out_dir / names["tgt_gt"])
        entries.append(names)
    manifest_path = out_dir / "manifest.json"
    write_json({"schema_version": 1, "instances": entries}, manifest_path)
    return manifest_path


def load_manifest(path: Union[str, Path]) -> list[Instance]:
    """Load instances from a manifest; grids are (re-)normalized on load."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
        entries = doc["instances"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed manifest: {exc}") from exc
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: manifest lists no instances")
    base = path.parent
    instances = []
    for e in entries:
        try:
            ref = read_tensor(base / e["ref"])
            fg = read_tensor(base / e["fg"])
            tgt = read_tensor(base / e["tgt"])
            tgt_gt = read_tensor(base / e["tgt_gt"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: malformed manifest entry: {exc}") from exc
        if not isinstance(ref, FeatureGrid) or not isinstance(tgt, FeatureGrid):
            raise ValidationError(f"{path}: manifest grid entry is not a feature grid")
        if not isinstance(fg, BinaryMask) or not isinstance(tgt_gt, BinaryMask):
            raise ValidationError(f"{path}: manifest mask entry is not a mask")
        instances.append((normalize_grid(ref), fg, normalize_grid(tgt), tgt_gt))
    return instances
