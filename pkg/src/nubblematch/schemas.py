"""Request/response models for the HTTP service.

Paths are plain strings resolved on the server's filesystem (the CLI runs
the app in-process by default, so client and server share one filesystem).
Semantic validation (ranges, shape agreement) happens in the core modules
before any file is written; these models only pin types and field names.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel

Aggregator = Literal["max", "mean"]
Metric = Literal["proxy-iou", "mismatch-rate", "prompt-hit-rate"]


class ErrorBody(BaseModel):
    kind: str
    message: str


class HealthResponse(BaseModel):
    status: str
    version: str


class NormalizeRequest(BaseModel):
    input_path: str
    output_path: str


class TensorSummary(BaseModel):
    output_path: str
    height: int
    width: int
    channels: int


class DropRequest(BaseModel):
    input_path: str
    output_path: str
    mask_output_path: Optional[str] = None
    # Either sample a fresh mask (ratio + seed) or apply a stored one.
    ratio: Optional[float] = None
    seed: Optional[int] = None
    mask_input_path: Optional[str] = None


class DropResponse(BaseModel):
    output_path: str
    mask_output_path: Optional[str]
    total_channels: int
    dropped_count: int
    dropped: list[int]


class TrimRequest(BaseModel):
    input_path: str
    output_path: str
    m_per_patch: int


class PruneRequest(BaseModel):
    input_path: str
    fg_path: str
    output_path: str
    budget: int
    k_bg: int


class PruneResponse(BaseModel):
    output_path: str
    dropped: list[int]
    error_history: list[list[int]]


class MatchRequest(BaseModel):
    target_path: str
    reference_path: str
    output_path: str
    fg_path: Optional[str] = None          # present -> foreground similarity map
    aggregator: Aggregator = "max"
    exclude_self: bool = False
    ratio: Optional[float] = None
    seed: Optional[int] = None
    mask_input_path: Optional[str] = None
    threads: int = 1


class MatchResponse(BaseModel):
    output_path: str
    mode: Literal["best-match", "similarity-map"]
    height: int
    width: int
    dropped_count: int


class PromptsRequest(BaseModel):
    input_path: str
    output_path: str
    k: int
    min_separation: int
    tau: float


class PromptsResponse(BaseModel):
    output_path: str
    points: int
    box: Optional[list[int]]


class SegmentRequest(BaseModel):
    input_path: str
    output_path: str
    tau: float


class SegmentResponse(BaseModel):
    output_path: str
    foreground_patches: int
    total_patches: int


class IouRequest(BaseModel):
    pred_path: str
    gt_path: str


class IouResponse(BaseModel):
    iou: float


class MismatchRequest(BaseModel):
    input_path: str
    fg_path: str
    output_path: str
    ratio: Optional[float] = None
    seed: Optional[int] = None
    mask_input_path: Optional[str] = None
    threads: int = 1


class MismatchResponse(BaseModel):
    output_path: str
    mismatch_count: int
    total_fg: int
    image_flagged: bool


class DiagnoseRequest(BaseModel):
    input_path: Optional[str] = None
    input_dir: Optional[str] = None
    output_path: str
    kappa: float = 0.5
    nu: float = 0.0004
    hist_output_path: Optional[str] = None
    hist_stat: Literal["max_abs", "mean_variance"] = "max_abs"
    hist_mode: Literal["above", "below"] = "above"
    thresholds: Optional[list[float]] = None


class DiagnoseResponse(BaseModel):
    output_path: str
    images: int
    dominant_patch_count: int
    submergence_flag: bool
    mean_abs_overall: float
    mean_variance: float


class InteractionRequest(BaseModel):
    network_path: str
    indices: list[int]
    aggregator: Literal["mean", "min"] = "mean"
    output_path: Optional[str] = None


class InteractionResponse(BaseModel):
    strengths: list[float]
    output_path: Optional[str]


class SynthRequest(BaseModel):
    output_dir: str
    height: int
    width: int
    channels: int
    fg_fraction: float
    margin: float
    noise_sigma: float = 0.0
    noise_channel: Optional[int] = None
    dominant_value: float = 0.0
    seed: int
    count: int = 1


class SynthResponse(BaseModel):
    manifest_path: str
    instances: int


class SweepRequest(BaseModel):
    manifest_path: str
    output_path: str
    report_output_path: Optional[str] = None
    ratios: list[float]
    trials: int
    seed: int
    metric: Metric = "proxy-iou"
    tau: float = 0.5
    aggregator: Aggregator = "max"
    threads: int = 1


class SweepResponse(BaseModel):
    output_path: str
    rows: int


class CurveRequest(BaseModel):
    manifest_path: str
    output_path: str
    report_output_path: Optional[str] = None
    ratio: float
    trials: int
    seed: int
    metric: Metric = "proxy-iou"
    tau: float = 0.5
    aggregator: Aggregator = "max"
    threads: int = 1


class CurveResponse(BaseModel):
    output_path: str
    rows: int
