"""Command-line client for the matching service.

Every subcommand builds one request for the corresponding service endpoint.
By default the FastAPI app runs in-process (no daemon needed, results are
identical); ``--server URL`` targets a running instance instead, and
``serve`` starts one.  One JSON summary line goes to stdout; diagnostics go
to stderr.  Exit codes: 0 success, 2 argument/validation errors, 1 I/O
errors.

Randomized subcommands never seed themselves: a missing ``--seed`` is an
error, so every output is reproducible from its command line.  ``--config
FILE`` supplies defaults for any flags not given explicitly.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Any, Callable, Optional

_EXIT_OK = 0
_EXIT_IO = 1
_EXIT_USAGE = 2

_IO_KINDS = {"io"}


def _comma_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats: {exc}")


def _comma_ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


@dataclass
class Arg:
    flags: tuple[str, ...]
    dest: str
    kind: Callable | None = str
    required: bool = False
    default: Any = None
    choices: Optional[tuple[str, ...]] = None
    switch: bool = False
    help: str = ""


@dataclass
class Command:
    name: str
    endpoint: str
    args: list[Arg]
    help: str = ""
    needs_threads: bool = False


COMMANDS = [
    Command("normalize", "/normalize", [
        Arg(("--in",), "input_path", required=True, help="input grid (.npy)"),
        Arg(("--out",), "output_path", required=True, help="normalized grid (.npy)"),
    ], help="L2-normalize every patch vector of a grid"),
    Command("drop", "/drop", [
        Arg(("--in",), "input_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--mask-out",), "mask_output_path"),
        Arg(("--ratio",), "ratio", kind=float),
        Arg(("--seed",), "seed", kind=int),
        Arg(("--mask-in",), "mask_input_path", help="apply a stored mask instead of sampling"),
    ], help="zero a sampled (or stored) set of channels"),
    Command("trim", "/trim", [
        Arg(("--in",), "input_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--m-per-patch",), "m_per_patch", kind=int, required=True),
    ], help="zero the m largest-|value| channels of each patch"),
    Command("prune", "/prune", [
        Arg(("--in",), "input_path", required=True),
        Arg(("--fg",), "fg_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--budget",), "budget", kind=int, required=True),
        Arg(("--k-bg",), "k_bg", kind=int, required=True),
    ], help="greedy mismatch-driven channel pruning"),
    Command("match", "/match", [
        Arg(("--target",), "target_path", required=True),
        Arg(("--ref",), "reference_path", required=True),
        Arg(("--out",), "output_path", required=True,
            help="best-match JSON, or similarity map (.npy/.json) with --fg"),
        Arg(("--fg",), "fg_path", help="reference foreground mask -> similarity map mode"),
        Arg(("--aggregator",), "aggregator", choices=("max", "mean"), default="max"),
        Arg(("--exclude-self",), "exclude_self", switch=True),
        Arg(("--ratio",), "ratio", kind=float),
        Arg(("--seed",), "seed", kind=int),
        Arg(("--mask-in",), "mask_input_path"),
    ], help="cosine matching between target and reference grids", needs_threads=True),
    Command("prompts", "/prompts", [
        Arg(("--in",), "input_path", required=True, help="similarity map (.npy)"),
        Arg(("--out",), "output_path", required=True),
        Arg(("--k",), "k", kind=int, default=5),
        Arg(("--min-separation",), "min_separation", kind=int, default=0),
        Arg(("--tau",), "tau", kind=float, default=0.5),
    ], help="extract prompt points and a box from a similarity map"),
    Command("segment", "/segment", [
        Arg(("--in",), "input_path", required=True, help="similarity map (.npy)"),
        Arg(("--out",), "output_path", required=True),
        Arg(("--tau",), "tau", kind=float, default=0.5),
    ], help="threshold a similarity map into a proxy mask"),
    Command("iou", "/iou", [
        Arg(("--pred",), "pred_path", required=True),
        Arg(("--gt",), "gt_path", required=True),
    ], help="intersection-over-union of two masks"),
    Command("mismatch", "/mismatch", [
        Arg(("--in",), "input_path", required=True),
        Arg(("--fg",), "fg_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--ratio",), "ratio", kind=float),
        Arg(("--seed",), "seed", kind=int),
        Arg(("--mask-in",), "mask_input_path"),
    ], help="foreground best-match mismatch report", needs_threads=True),
    Command("diagnose", "/diagnose", [
        Arg(("--in",), "input_path"),
        Arg(("--in-dir",), "input_dir"),
        Arg(("--out",), "output_path", required=True),
        Arg(("--kappa",), "kappa", kind=float, default=0.5),
        Arg(("--nu",), "nu", kind=float, default=0.0004),
        Arg(("--hist-out",), "hist_output_path"),
        Arg(("--hist-stat",), "hist_stat", choices=("max_abs", "mean_variance"),
            default="max_abs"),
        Arg(("--hist-mode",), "hist_mode", choices=("above", "below"), default="above"),
        Arg(("--thresholds",), "thresholds", kind=_comma_floats),
    ], help="dominant-channel / submergence statistics"),
    Command("interaction", "/interaction", [
        Arg(("--in",), "network_path", required=True,
            help='JSON {"weights": [matrix, ...], "output_weights": [...]}'),
        Arg(("--indices",), "indices", kind=_comma_ints, required=True,
            help="0-based input indices of the interaction"),
        Arg(("--aggregator",), "aggregator", choices=("mean", "min"), default="mean"),
        Arg(("--out",), "output_path"),
    ], help="first-hidden-layer interaction strengths"),
    Command("synth", "/synth", [
        Arg(("--out-dir",), "output_dir", required=True),
        Arg(("--height",), "height", kind=int, required=True),
        Arg(("--width",), "width", kind=int, required=True),
        Arg(("--channels",), "channels", kind=int, required=True),
        Arg(("--fg-fraction",), "fg_fraction", kind=float, required=True),
        Arg(("--margin",), "margin", kind=float, required=True),
        Arg(("--noise-sigma",), "noise_sigma", kind=float, default=0.0),
        Arg(("--noise-channel",), "noise_channel", kind=int),
        Arg(("--dominant-value",), "dominant_value", kind=float, default=0.0),
        Arg(("--seed",), "seed", kind=int, required=True),
        Arg(("--count",), "count", kind=int, default=1),
    ], help="generate synthetic instances plus a manifest"),
    Command("sweep", "/sweep", [
        Arg(("--manifest",), "manifest_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--report-out",), "report_output_path"),
        Arg(("--ratios",), "ratios", kind=_comma_floats, required=True),
        Arg(("--trials",), "trials", kind=int, required=True),
        Arg(("--seed",), "seed", kind=int, required=True),
        Arg(("--metric",), "metric",
            choices=("proxy-iou", "mismatch-rate", "prompt-hit-rate"),
            default="proxy-iou"),
        Arg(("--tau",), "tau", kind=float, default=0.5),
        Arg(("--aggregator",), "aggregator", choices=("max", "mean"), default="max"),
    ], help="metric sweep over drop ratios -> CSV", needs_threads=True),
    Command("curve", "/curve", [
        Arg(("--manifest",), "manifest_path", required=True),
        Arg(("--out",), "output_path", required=True),
        Arg(("--report-out",), "report_output_path"),
        Arg(("--ratio",), "ratio", kind=float, required=True),
        Arg(("--trials",), "trials", kind=int, required=True),
        Arg(("--seed",), "seed", kind=int, required=True),
        Arg(("--metric",), "metric",
            choices=("proxy-iou", "mismatch-rate", "prompt-hit-rate"),
            default="proxy-iou"),
        Arg(("--tau",), "tau", kind=float, default=0.5),
        Arg(("--aggregator",), "aggregator", choices=("max", "mean"), default="max"),
    ], help="cumulative improvement curve -> CSV", needs_threads=True),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nubblematch",
        description="Channel-drop robustness toolkit for patch-feature matching.",
    )
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for matching kernels (results are "
                             "identical for every value)")
    parser.add_argument("--config", default=None,
                        help="JSON file supplying defaults for omitted flags")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for cmd in COMMANDS:
        p = sub.add_parser(cmd.name, help=cmd.help)
        for arg in cmd.args:
            kwargs: dict[str, Any] = {"dest": arg.dest, "default": argparse.SUPPRESS,
                                      "help": arg.help}
            if arg.switch:
                kwargs["action"] = "store_true"
            else:
                kwargs["type"] = arg.kind
                if arg.choices:
                    kwargs["choices"] = arg.choices
            p.add_argument(*arg.flags, **kwargs)
    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8756)
    return parser


def _merge_payload(cmd: Command, given: dict, config: dict) -> dict:
    payload: dict[str, Any] = {}
    defaults = {}
    for arg in cmd.args:
        if arg.switch:
            defaults[arg.dest] = False
        elif arg.default is not None:
            defaults[arg.dest] = arg.default
    known = {arg.dest for arg in cmd.args}
    unknown = set(config) - known
    if unknown:
        raise SystemExit(_usage_error(f"config keys not recognized for "
                                      f"'{cmd.name}': {sorted(unknown)}"))
    payload.update(defaults)
    payload.update(config)
    payload.update({k: v for k, v in given.items() if k in known})
    missing = [arg.flags[0] for arg in cmd.args
               if arg.required and arg.dest not in payload]
    if missing:
        raise SystemExit(_usage_error(f"'{cmd.name}' is missing required "
                                      f"flags: {', '.join(missing)}"))
    return payload


def _usage_error(message: str) -> int:
    print(f"nubblematch: error: {message}", file=sys.stderr)
    return _EXIT_USAGE


class _Client:
    """POSTs to a remote server or to the in-process ASGI app."""

    def __init__(self, server: Optional[str]):
        if server is None:
            import warnings

            with warnings.catch_warnings():
                # starlette's sync test client warns about its httpx backend;
                # irrelevant to in-process use.
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)
        else:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)

    def post(self, endpoint: str, payload: dict):
        return self._client.post(endpoint, json=payload)

    def close(self):
        self._client.close()


def _run_command(cmd: Command, payload: dict, server: Optional[str]) -> int:
    client = _Client(server)
    try:
        response = client.post(cmd.endpoint, payload)
    except Exception as exc:  # connection errors against --server
        print(f"nubblematch: service unreachable: {exc}", file=sys.stderr)
        return _EXIT_IO
    finally:
        client.close()
    try:
        body = response.json()
    except ValueError:
        print(f"nubblematch: malformed service response "
              f"(HTTP {response.status_code})", file=sys.stderr)
        return _EXIT_IO
    if response.status_code == 200:
        print(json.dumps(body, sort_keys=True))
        return _EXIT_OK
    error = body.get("error", {}) if isinstance(body, dict) else {}
    kind = error.get("kind", "error")
    message = error.get("message", f"HTTP {response.status_code}")
    print(f"nubblematch: {kind}: {message}", file=sys.stderr)
    return _EXIT_IO if kind in _IO_KINDS else _EXIT_USAGE


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return _EXIT_USAGE
    if args.subcommand == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return _EXIT_OK
    cmd = next(c for c in COMMANDS if c.name == args.subcommand)
    config: dict = {}
    if args.config is not None:
        try:
            config = json.loads(open(args.config, encoding="utf-8").read())
        except OSError as exc:
            print(f"nubblematch: cannot read config: {exc}", file=sys.stderr)
            return _EXIT_IO
        except json.JSONDecodeError as exc:
            return _usage_error(f"malformed config JSON: {exc}")
        if not isinstance(config, dict):
            return _usage_error("config must be a JSON object")
    given = {k: v for k, v in vars(args).items()
             if k not in ("server", "threads", "config", "subcommand")}
    try:
        payload = _merge_payload(cmd, given, config)
    except SystemExit as exc:
        return int(exc.code)
    if cmd.needs_threads:
        payload["threads"] = args.threads
    return _run_command(cmd, payload, args.server)


if __name__ == "__main__":
    raise SystemExit(main())
