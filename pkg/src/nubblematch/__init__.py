"""Channel-drop robustness toolkit for patch-feature cosine matching."""

__version__ = "0.1.0"

from .diagnostics import (
    ChannelDiagnostics,
    InteractionQuery,
    MismatchReport,
    channel_diagnostics,
    interaction_strength,
    mismatch_report,
)
from .drop import DropMask, PruneResult, apply_drop, greedy_channel_prune, sample_drop_mask, trim_extremes
from .harness import (
    CurveResult,
    SweepResult,
    SynthSpec,
    run_cumulative_curve,
    run_drop_sweep,
    synth_clusters,
)
from .matching import (
    BestMatchMap,
    PromptSet,
    SimilarityMap,
    best_match_map,
    cosine_similarity,
    extract_prompts,
    foreground_similarity_map,
    iou,
    proxy_segment,
)
from .tensorio import (
    BinaryMask,
    FeatureGrid,
    Report,
    canonical_json,
    normalize_grid,
    read_tensor,
    write_report,
    write_tensor,
)

__all__ = [
    "__version__",
    "BestMatchMap", "BinaryMask", "ChannelDiagnostics", "CurveResult",
    "DropMask", "FeatureGrid", "InteractionQuery", "MismatchReport",
    "PromptSet", "PruneResult", "Report", "SimilarityMap", "SweepResult",
    "SynthSpec",
    "apply_drop", "best_match_map", "canonical_json", "channel_diagnostics",
    "cosine_similarity", "extract_prompts", "foreground_similarity_map",
    "greedy_channel_prune", "interaction_strength", "iou", "mismatch_report",
    "normalize_grid", "proxy_segment", "read_tensor", "run_cumulative_curve",
    "run_drop_sweep", "sample_drop_mask", "synth_clusters", "trim_extremes",
    "write_report", "write_tensor",
]
