"""Batch export CLI: images (+ masks) -> patch-feature NPY files + manifest."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from .encoders import MODEL_IDS, ModelLoadError
from .export import export_batch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nubble-export",
        description="Extract patch-feature grids and patch-resolution masks "
                    "into the nubblematch NPY/JSON interchange format.",
    )
    parser.add_argument("--model", required=True, choices=MODEL_IDS)
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--masks", default=None,
                        help="directory of same-stem pixel annotations")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--image-size", type=int, default=448)
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed used when pretrained weights "
                             "are unavailable")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export_batch(args.images, args.out, args.model,
                                masks_dir=args.masks, image_size=args.image_size,
                                seed=args.seed)
    except ModelLoadError as exc:
        print(f"nubble-export: model: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"nubble-export: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"nubble-export: io: {exc}", file=sys.stderr)
        return 1
    doc = json.loads(manifest.read_text("utf-8"))
    print(json.dumps({"manifest_path": str(manifest),
                      "images": len(doc["entries"]),
                      "model_id": doc["model_id"],
                      "weights": doc["weights"]}, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
