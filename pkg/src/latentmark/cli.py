"""``lmk``: thin command-line client over the watermark service.

By default each command runs the service in-process (no network); pass
``--server http://host:port`` to talk to a running instance instead.  Data
goes to stdout or files, logs and progress to stderr.  Exit codes: 0 success,
1 negative detection under ``--strict``, 2 usage or data errors.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_ERROR = 2


class CliError(Exception):
    pass


def _log(msg: str):
    print(msg, file=sys.stderr)


def _fail_json(message: str) -> int:
    print(json.dumps({"error": message}), file=sys.stderr)
    return EXIT_ERROR


class ServiceClient:
    """HTTP client; in-process ASGI when no server URL is given."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except Exception:
                detail = response.text
            raise CliError(str(detail))
        return response.json()


def _load_config_arg(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from exc


def parse_channel_token(token: str) -> dict:
    """``identity`` | ``toycodec[:u]`` | ``noise:sigma`` | ``bridge:<command>``."""
    name, _, arg = token.partition(":")
    if name == "identity":
        return {"kind": "identity"}
    if name == "toycodec":
        return {"kind": "toy_codec", "upsample": int(arg) if arg else 8}
    if name == "noise":
        return {"kind": "latent_noise", "sigma": float(arg) if arg else 0.5}
    if name == "bridge":
        if not arg:
            raise CliError("bridge channel needs a command: bridge:<command line>")
        return {"kind": "external_bridge", "command": arg}
    raise CliError(f"unknown channel token {token!r}")


def _media_is_pixel(config: dict | None, algorithm: str) -> bool:
    from .registry import default_config

    obj = config if config is not None else default_config(algorithm)
    kind = obj.get("channel", {"kind": "identity"})
    kind = kind.get("kind", "identity") if isinstance(kind, dict) else kind
    return kind in ("toy_codec", "external_bridge")


def _write_preview(blob: bytes, pixel: bool, out: Path):
    from PIL import Image

    from .tensor import read_blob

    arr = read_blob(blob)
    if arr.ndim == 4:
        arr = arr[0]
    if pixel and arr.shape[0] == 3:
        img = np.clip(np.round(arr), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    else:
        plane = arr[0]
        lim = float(np.max(np.abs(plane))) or 1.0
        img = np.clip((plane / lim + 1.0) * 127.5, 0, 255).astype(np.uint8)
    Image.fromarray(img).save(out, format="PNG")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    client = ServiceClient(args.server)
    config = _load_config_arg(args.config)
    payload = {
        "algorithm": args.alg,
        "config": config,
        "sample_id": args.sample_id,
        "seed": args.seed,
        "include_key": args.key_out is not None,
    }
    out = client.post("/generate", payload)
    blob = base64.b64decode(out["media_b64"])
    Path(args.out).write_bytes(blob)
    _log(f"wrote media blob: {args.out} ({len(blob)} bytes)")
    if args.key_out:
        Path(args.key_out).write_text(json.dumps(out["key"], sort_keys=True, indent=2) + "\n")
        _log(f"wrote key: {args.key_out}")
    if args.preview:
        _write_preview(blob, out["pixel"], Path(args.preview))
        _log(f"wrote preview: {args.preview}")
    return EXIT_OK


def cmd_detect(args) -> int:
    client = ServiceClient(args.server)
    config = _load_config_arg(args.config)
    try:
        blob = Path(args.media).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read media {args.media}: {exc}") from exc
    key = None
    if args.key_in:
        key = json.loads(Path(args.key_in).read_text())
    payload = {
        "algorithm": args.alg,
        "config": config,
        "media_b64": base64.b64encode(blob).decode("ascii"),
        "pixel": _media_is_pixel(config, args.alg),
        "sample_id": args.sample_id,
        "seed": args.seed,
        "key": key,
    }
    result = client.post("/detect", payload)
    print(json.dumps(result, sort_keys=True))
    if args.strict and not result["is_watermarked"]:
        return EXIT_NEGATIVE
    return EXIT_OK


def cmd_evaluate(args) -> int:
    client = ServiceClient(args.server)
    config = _load_config_arg(args.config)
    channel = parse_channel_token(args.channel) if args.channel else None
    payload = {
        "algorithm": args.alg,
        "config": config,
        "pipeline": args.pipeline,
        "attacks": args.attacks,
        "n": args.n,
        "channel": channel,
        "target_fpr": args.target_fpr,
        "quality_mode": args.quality_mode,
        "seed": args.seed,
        "jobs": args.jobs,
    }
    started = time.monotonic()
    report = client.post("/evaluate", payload)["report"]
    elapsed = time.monotonic() - started
    _log(f"evaluate finished in {elapsed:.2f}s")
    if args.timings:
        report["wall_time_s"] = elapsed  # opt-in: breaks byte-reproducibility
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text)
        _log(f"wrote report: {args.report}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_visualize(args) -> int:
    client = ServiceClient(args.server)
    config = _load_config_arg(args.config)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    method_kwargs = json.loads(args.method_kwargs) if args.method_kwargs else None
    payload = {
        "algorithm": args.alg,
        "config": config,
        "sample_id": args.sample_id,
        "seed": args.seed,
        "methods": methods,
        "rows": args.rows,
        "cols": args.cols,
        "method_kwargs": method_kwargs,
    }
    out = client.post("/visualize", payload)
    Path(args.out).write_bytes(base64.b64decode(out["png_b64"]))
    _log(f"wrote panels: {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmk", description="latent-space watermarking laboratory")
    parser.add_argument("--server", default=None, help="service URL; in-process when omitted")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--alg", required=True, help="algorithm id (TR, RI, ROBIN, WIND, GS, PRC, SEAL, VideoShield)")
        p.add_argument("--config", default=None, help="path to a JSON config; shipped default when omitted")
        p.add_argument("--seed", type=int, default=0, help="session seed; same seed reproduces outputs bit-for-bit")

    g = sub.add_parser("generate", help="generate watermarked media")
    common(g)
    g.add_argument("--sample-id", type=int, default=0)
    g.add_argument("--out", required=True, help="output media blob path")
    g.add_argument("--key-out", default=None, help="write the serialized watermark key JSON here")
    g.add_argument("--preview", default=None, help="write a PNG preview here")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="detect a watermark in a media blob")
    common(d)
    d.add_argument("--media", required=True, help="media blob path")
    d.add_argument("--sample-id", type=int, default=0)
    d.add_argument("--key-in", default=None, help="serialized key JSON overriding the derived key")
    d.add_argument("--json", action="store_true", help="(default) print the result as JSON")
    d.add_argument("--strict", action="store_true", help="exit 1 when not watermarked")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("evaluate", help="run detection pipelines and calculators")
    common(e)
    e.add_argument("--pipeline", choices=["wmdetect", "uwmdetect", "both"], default="both")
    e.add_argument("--attacks", default="", help="attack chain, e.g. jpeg:60,rot:15")
    e.add_argument("--n", type=int, default=50)
    e.add_argument("--channel", default=None, help="identity | toycodec[:u] | noise:sigma | bridge:<cmd>")
    e.add_argument("--target-fpr", type=float, default=0.01)
    e.add_argument("--quality-mode", default=None, choices=["compared", "direct", "video"])
    e.add_argument("--report", default=None, help="write the JSON report here instead of stdout")
    e.add_argument("--jobs", type=int, default=1, help="pipeline worker fan-out")
    e.add_argument("--timings", action="store_true", help="write measured wall time into the report")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("visualize", help="render mechanism panels to a PNG")
    common(v)
    v.add_argument("--methods", required=True, help="comma-separated panel method names")
    v.add_argument("--rows", type=int, default=1)
    v.add_argument("--cols", type=int, default=None)
    v.add_argument("--method-kwargs", default=None, help="JSON list of per-panel kwargs")
    v.add_argument("--out", required=True)
    v.add_argument("--sample-id", type=int, default=0)
    v.set_defaults(func=cmd_visualize)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8331)
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail_json(str(exc))
    except Exception as exc:  # data/config errors from lower layers
        return _fail_json(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
