"""FastAPI service wrapping the toolkit.

Every CLI subcommand maps to one POST endpoint; requests and responses are
the pydantic models in :mod:`nubblematch.schemas`.  Errors return a JSON
body ``{"error": {"kind", "message"}}`` with status 400 for the
argument/validation family and 500 for I/O failures; the CLI translates
those kinds into its exit codes.  All endpoints are synchronous pure
functions of their inputs plus the filesystem, so the app can serve many
clients or be driven in-process.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__, diagnostics, harness, matching, schemas, tensorio
from .drop import DropMask, apply_drop, greedy_channel_prune, sample_drop_mask, trim_extremes
from .errors import ArgumentError, NubbleMatchError, ValidationError
from .tensorio import BinaryMask, FeatureGrid


def _require_grid(obj, path: str) -> FeatureGrid:
    if not isinstance(obj, FeatureGrid):
        raise ValidationError(f"{path}: expected a feature grid, found a mask")
    return obj


def _require_mask(obj, path: str) -> BinaryMask:
    if not isinstance(obj, BinaryMask):
        raise ValidationError(f"{path}: expected a mask, found a feature grid")
    return obj


def _read_grid(path: str) -> FeatureGrid:
    return _require_grid(tensorio.read_tensor(path), path)


def _read_mask(path: str) -> BinaryMask:
    return _require_mask(tensorio.read_tensor(path), path)


def _load_json(path: str):
    try:
        return json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON: {exc}") from exc


def _resolve_drop(ratio, seed, mask_input_path, channels: int) -> DropMask | None:
    """Turn (ratio, seed) or a stored mask file into a DropMask.

    Randomized paths must be explicitly seeded; wall-clock seeding would make
    experiment outputs silently irreproducible.
    """
    if mask_input_path is not None:
        if ratio is not None or seed is not None:
            raise ArgumentError("give either a stored mask or ratio+seed, not both")
        return DropMask.from_payload(_load_json(mask_input_path))
    if ratio is None and seed is None:
        return None
    if ratio is None or seed is None:
        raise ArgumentError("sampling a drop mask requires both --ratio and --seed")
    if not 0.0 <= ratio < 1.0:
        raise ArgumentError(f"drop ratio must be in [0, 1), got {ratio}")
    return sample_drop_mask(channels, ratio, seed)


def _validate_threads(threads: int) -> int:
    if threads < 1:
        raise ArgumentError("threads must be >= 1")
    return threads


def create_app() -> FastAPI:
    app = FastAPI(title="nubblematch", version=__version__)

    @app.exception_handler(NubbleMatchError)
    def _toolkit_error(_req: Request, exc: NubbleMatchError):
        return JSONResponse(status_code=400,
                            content={"error": {"kind": exc.kind, "message": str(exc)}})

    @app.exception_handler(OSError)
    def _os_error(_req: Request, exc: OSError):
        return JSONResponse(status_code=500,
                            content={"error": {"kind": "io", "message": str(exc)}})

    @app.exception_handler(RequestValidationError)
    def _request_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": {"kind": "argument", "message": str(exc)}})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/normalize", response_model=schemas.TensorSummary)
    def normalize(req: schemas.NormalizeRequest):
        grid = tensorio.normalize_grid(_read_grid(req.input_path))
        tensorio.write_tensor(grid, req.output_path)
        return schemas.TensorSummary(output_path=req.output_path, height=grid.height,
                                     width=grid.width, channels=grid.channels)

    @app.post("/drop", response_model=schemas.DropResponse)
    def drop(req: schemas.DropRequest):
        if req.ratio is not None and not 0.0 <= req.ratio < 1.0:
            raise ArgumentError(f"drop ratio must be in [0, 1), got {req.ratio}")
        grid = _read_grid(req.input_path)
        mask = _resolve_drop(req.ratio, req.seed, req.mask_input_path, grid.channels)
        if mask is None:
            raise ArgumentError("drop requires ratio+seed or a stored mask")
        tensorio.write_tensor(apply_drop(grid, mask), req.output_path)
        if req.mask_output_path is not None:
            tensorio.write_json(mask.to_payload(), req.mask_output_path)
        return schemas.DropResponse(
            output_path=req.output_path, mask_output_path=req.mask_output_path,
            total_channels=mask.total_channels, dropped_count=len(mask),
            dropped=list(mask.dropped),
        )

    @app.post("/trim", response_model=schemas.TensorSummary)
    def trim(req: schemas.TrimRequest):
        if req.m_per_patch < 0:
            raise ArgumentError("m_per_patch must be >= 0")
        grid = tensorio.normalize_grid(_read_grid(req.input_path))
        out = trim_extremes(grid, req.m_per_patch)
        tensorio.write_tensor(out, req.output_path)
        return schemas.TensorSummary(output_path=req.output_path, height=out.height,
                                     width=out.width, channels=out.channels)

    @app.post("/prune", response_model=schemas.PruneResponse)
    def prune(req: schemas.PruneRequest):
        if req.budget < 0:
            raise ArgumentError("budget must be >= 0")
        if req.k_bg < 1:
            raise ArgumentError("k_bg must be >= 1")
        grid = tensorio.normalize_grid(_read_grid(req.input_path))
        fg = _read_mask(req.fg_path)
        result = greedy_channel_prune(grid, fg, req.budget, req.k_bg)
        doc = {"mask": result.mask.to_payload(),
               "error_history": [list(e) for e in result.error_history]}
        tensorio.write_json(doc, req.output_path)
        return schemas.PruneResponse(
            output_path=req.output_path, dropped=list(result.mask.dropped),
            error_history=[list(e) for e in result.error_history],
        )

    @app.post("/match", response_model=schemas.MatchResponse)
    def match(req: schemas.MatchRequest):
        threads = _validate_threads(req.threads)
        tgt = tensorio.normalize_grid(_read_grid(req.target_path))
        ref = tensorio.normalize_grid(_read_grid(req.reference_path))
        mask = _resolve_drop(req.ratio, req.seed, req.mask_input_path, ref.channels)
        if req.fg_path is not None:
            fg = _read_mask(req.fg_path)
            sim = matching.foreground_similarity_map(
                ref, fg, tgt, aggregator=req.aggregator, drop=mask, threads=threads)
            if req.output_path.endswith(".json"):
                tensorio.write_json(sim.to_payload(), req.output_path)
            else:
                tensorio.write_float_map(sim.scores, req.output_path)
            mode = "similarity-map"
            h, w = sim.height, sim.width
        else:
            bm = matching.best_match_map(tgt, ref, drop=mask,
                                         exclude_self=req.exclude_self, threads=threads)
            tensorio.write_json(bm.to_payload(), req.output_path)
            mode = "best-match"
            h, w = bm.rows.shape
        return schemas.MatchResponse(output_path=req.output_path, mode=mode,
                                     height=h, width=w,
                                     dropped_count=0 if mask is None else len(mask))

    @app.post("/prompts", response_model=schemas.PromptsResponse)
    def prompts(req: schemas.PromptsRequest):
        if req.k < 1:
            raise ArgumentError("k must be >= 1")
        if req.min_separation < 0:
            raise ArgumentError("min_separation must be >= 0")
        sim = matching.SimilarityMap(tensorio.read_float_map(req.input_path))
        ps = matching.extract_prompts(sim, req.k, req.min_separation, req.tau)
        payload = ps.to_payload()
        payload.update({"k": req.k, "min_separation": req.min_separation, "tau": req.tau})
        tensorio.write_report(tensorio.Report(kind="prompts", payload=payload),
                              req.output_path)
        box = None if ps.box is None else list(ps.box)
        return schemas.PromptsResponse(output_path=req.output_path,
                                       points=len(ps.points), box=box)

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def segment(req: schemas.SegmentRequest):
        sim = matching.SimilarityMap(tensorio.read_float_map(req.input_path))
        mask = matching.proxy_segment(sim, req.tau)
        tensorio.write_tensor(mask, req.output_path)
        return schemas.SegmentResponse(output_path=req.output_path,
                                       foreground_patches=mask.count(),
                                       total_patches=mask.height * mask.width)

    @app.post("/iou", response_model=schemas.IouResponse)
    def iou_endpoint(req: schemas.IouRequest):
        pred = _read_mask(req.pred_path)
        gt = _read_mask(req.gt_path)
        return schemas.IouResponse(iou=matching.iou(pred, gt))

    @app.post("/mismatch", response_model=schemas.MismatchResponse)
    def mismatch(req: schemas.MismatchRequest):
        threads = _validate_threads(req.threads)
        grid = tensorio.normalize_grid(_read_grid(req.input_path))
        fg = _read_mask(req.fg_path)
        mask = _resolve_drop(req.ratio, req.seed, req.mask_input_path, grid.channels)
        rep = diagnostics.mismatch_report(grid, fg, drop=mask, threads=threads)
        tensorio.write_report(rep.to_report(mask), req.output_path)
        return schemas.MismatchResponse(output_path=req.output_path,
                                        mismatch_count=rep.mismatch_count,
                                        total_fg=rep.total_fg,
                                        image_flagged=rep.image_flagged)

    @app.post("/diagnose", response_model=schemas.DiagnoseResponse)
    def diagnose(req: schemas.DiagnoseRequest):
        if (req.input_path is None) == (req.input_dir is None):
            raise ArgumentError("give exactly one of input_path or input_dir")
        if req.hist_output_path is not None and not req.thresholds:
            raise ArgumentError("histogram export needs a thresholds list")
        if req.input_path is not None:
            grid = tensorio.normalize_grid(_read_grid(req.input_path))
            diag = diagnostics.channel_diagnostics(grid, req.kappa, req.nu)
            tensorio.write_report(diag.to_report(), req.output_path)
            if req.hist_output_path is not None:
                values = (diag.max_abs.ravel() if req.hist_stat == "max_abs"
                          else diag.variance_abs.ravel())
                rows = diagnostics.threshold_counts(values, req.thresholds, req.hist_mode)
                tensorio.write_csv(["threshold", "count"], rows, req.hist_output_path)
            return schemas.DiagnoseResponse(
                output_path=req.output_path, images=1,
                dominant_patch_count=diag.dominant_patch_count,
                submergence_flag=diag.submergence_flag,
                mean_abs_overall=diag.mean_abs_overall,
                mean_variance=diag.mean_variance,
            )
        paths = sorted(Path(req.input_dir).glob("*.npy"))
        if not paths:
            raise ArgumentError(f"{req.input_dir}: no .npy files found")
        per_image = []
        for p in paths:
            grid = tensorio.normalize_grid(_read_grid(str(p)))
            per_image.append((p.name, diagnostics.channel_diagnostics(grid, req.kappa, req.nu)))
        payload = {
            "kappa": req.kappa,
            "nu": req.nu,
            "images": [
                {
                    "name": name,
                    "dominant_patch_count": d.dominant_patch_count,
                    "submergence_flag": d.submergence_flag,
                    "max_abs": float(d.max_abs.max()),
                    "mean_variance": d.mean_variance,
                    "mean_abs_overall": d.mean_abs_overall,
                }
                for name, d in per_image
            ],
        }
        tensorio.write_report(tensorio.Report(kind="diagnostics", payload=payload),
                              req.output_path)
        if req.hist_output_path is not None:
            values = [e["max_abs"] if req.hist_stat == "max_abs" else e["mean_variance"]
                      for e in payload["images"]]
            rows = diagnostics.threshold_counts(values, req.thresholds, req.hist_mode)
            tensorio.write_csv(["threshold", "count"], rows, req.hist_output_path)
        return schemas.DiagnoseResponse(
            output_path=req.output_path, images=len(per_image),
            dominant_patch_count=sum(d.dominant_patch_count for _, d in per_image),
            submergence_flag=any(d.submergence_flag for _, d in per_image),
            mean_abs_overall=float(np.mean([d.mean_abs_overall for _, d in per_image])),
            mean_variance=float(np.mean([d.mean_variance for _, d in per_image])),
        )

    @app.post("/interaction", response_model=schemas.InteractionResponse)
    def interaction(req: schemas.InteractionRequest):
        doc = _load_json(req.network_path)
        try:
            mats = tuple(np.asarray(w, dtype=np.float64) for w in doc["weights"])
            wy = np.asarray(doc["output_weights"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{req.network_path}: malformed network file: {exc}") from exc
        query = diagnostics.InteractionQuery(
            weight_matrices=mats, output_weights=wy,
            interaction=tuple(req.indices), aggregator=req.aggregator)
        strengths = diagnostics.interaction_strength(query)
        if req.output_path is not None:
            tensorio.write_json({"strengths": strengths.tolist(),
                                 "aggregator": req.aggregator,
                                 "interaction": list(query.interaction)},
                                req.output_path)
        return schemas.InteractionResponse(strengths=[float(s) for s in strengths],
                                           output_path=req.output_path)

    @app.post("/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        if req.count < 1:
            raise ArgumentError("count must be >= 1")
        instances = []
        for i in range(req.count):
            # Instance i always draws from derive_seed(seed, i), so batches of
            # different sizes share their common prefix of instances.
            spec = harness.SynthSpec(
                height=req.height, width=req.width, channels=req.channels,
                fg_fraction=req.fg_fraction, margin=req.margin,
                noise_sigma=req.noise_sigma, noise_channel=req.noise_channel,
                dominant_value=req.dominant_value,
                seed=harness.derive_seed(req.seed, i),
            )
            instances.append(harness.synth_clusters(spec))
        manifest = harness.write_instances(instances, req.output_dir)
        return schemas.SynthResponse(manifest_path=str(manifest),
                                     instances=len(instances))

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        threads = _validate_threads(req.threads)
        if req.trials < 1:
            raise ArgumentError("trials must be >= 1")
        for ratio in req.ratios:
            if not 0.0 <= ratio < 1.0:
                raise ArgumentError(f"drop ratio must be in [0, 1), got {ratio}")
        instances = harness.load_manifest(req.manifest_path)
        result = harness.run_drop_sweep(instances, req.ratios, req.trials, req.seed,
                                        metric=req.metric, tau=req.tau,
                                        aggregator=req.aggregator, threads=threads)
        harness.sweep_to_csv(result, req.output_path)
        if req.report_output_path is not None:
            tensorio.write_report(result.to_report(), req.report_output_path)
        return schemas.SweepResponse(output_path=req.output_path, rows=len(result.rows))

    @app.post("/curve", response_model=schemas.CurveResponse)
    def curve(req: schemas.CurveRequest):
        threads = _validate_threads(req.threads)
        if req.trials < 1:
            raise ArgumentError("trials must be >= 1")
        if not 0.0 <= req.ratio < 1.0:
            raise ArgumentError(f"drop ratio must be in [0, 1), got {req.ratio}")
        instances = harness.load_manifest(req.manifest_path)
        result = harness.run_cumulative_curve(instances, req.ratio, req.trials,
                                              req.seed, metric=req.metric, tau=req.tau,
                                              aggregator=req.aggregator, threads=threads)
        harness.curve_to_csv(result, req.output_path)
        if req.report_output_path is not None:
            tensorio.write_report(result.to_report(), req.report_output_path)
        return schemas.CurveResponse(output_path=req.output_path, rows=len(result.rows))

    return app


app = create_app()
