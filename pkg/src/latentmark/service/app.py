"""FastAPI service exposing generate/detect/evaluate/visualize.

Systems are cached per canonical config, so a long-running service pays key
generation and threshold calibration once and then serves detections
statelessly.  All endpoints are deterministic given the request body.
"""

from __future__ import annotations

import base64
import hashlib
import json
import tempfile
from functools import lru_cache
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__, evaluation
from ..attacks import AttackError, parse_chain
from ..channel import ChannelError, Media
from ..registry import ConfigError, default_config, load_system
from ..tensor import ShapeError, read_blob, write_blob
from ..viz import PanelGrid, collect_visualization_data, render_panels
from .models import (
    DetectRequest,
    DetectResponse,
    EvaluateRequest,
    EvaluateResponse,
    GenerateRequest,
    GenerateResponse,
    VisualizeRequest,
    VisualizeResponse,
)

app = FastAPI(title="latentmark", version=__version__)

_USER_ERRORS = (ConfigError, AttackError, ShapeError, ChannelError, ValueError, KeyError)


def _resolve_config(algorithm: str, config: dict | None, seed: int, channel: dict | None = None) -> dict:
    obj = dict(config) if config is not None else default_config(algorithm)
    if channel is not None:
        obj["channel"] = channel
    if seed:
        # per-session rekeying: derive a session master key so different seeds
        # give independent, reproducible universes
        base = bytes.fromhex(obj["master_key"])
        obj["master_key"] = hashlib.blake2b(
            seed.to_bytes(8, "little", signed=True), key=base, digest_size=32
        ).hexdigest()
    return obj


@lru_cache(maxsize=32)
def _system_for(config_json: str):
    obj = json.loads(config_json)
    return load_system(obj["algorithm"], obj)


def get_system(algorithm: str, config: dict | None, seed: int, channel: dict | None = None):
    obj = _resolve_config(algorithm, config, seed, channel)
    return _system_for(json.dumps(obj, sort_keys=True))


def _fail(exc: Exception):
    raise HTTPException(status_code=400, detail=str(exc))


@app.get("/health")
def health():
    return {"service": "latentmark", "version": __version__}


@app.get("/algorithms")
def algorithms():
    from ..registry import ALGORITHMS

    return {"algorithms": list(ALGORITHMS)}


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest):
    try:
        system = get_system(req.algorithm, req.config, req.seed)
        media = system.generate_watermarked_media(req.sample_id)
    except _USER_ERRORS as exc:
        _fail(exc)
    return GenerateResponse(
        algorithm=req.algorithm,
        media_b64=base64.b64encode(write_blob(media.array)).decode("ascii"),
        pixel=media.pixel,
        video=media.is_video,
        key=system.score_key_json() if req.include_key else None,
    )


@app.post("/detect", response_model=DetectResponse)
def detect(req: DetectRequest):
    try:
        if req.key is not None:
            # explicit key override: fresh uncached system, threshold re-resolved
            from ..registry import key_from_json, load_system as _load

            obj = _resolve_config(req.algorithm, req.config, req.seed)
            system = _load(req.algorithm, obj)
            system.key = key_from_json(req.algorithm, req.key)
            system.threshold = system._resolve_threshold()
        else:
            system = get_system(req.algorithm, req.config, req.seed)
        array = read_blob(base64.b64decode(req.media_b64))
        media = Media(array, pixel=req.pixel)
        result = system.detect_watermark_in_media(media, sample_id=req.sample_id)
    except _USER_ERRORS as exc:
        _fail(exc)
    return DetectResponse(**result.to_json())


@app.post("/evaluate", response_model=EvaluateResponse)
def evaluate(req: EvaluateRequest):
    try:
        system = get_system(req.algorithm, req.config, req.seed, req.channel)
        chain = parse_chain(req.attacks)
        samples = evaluation.SampleSet.range(req.n)
        if req.pipeline == "both":
            report = evaluation.evaluate_detection(
                system, samples, chain, target_fpr=req.target_fpr, jobs=req.jobs
            )
        elif req.pipeline in ("wmdetect", "uwmdetect"):
            runner = evaluation.run_wmdetect if req.pipeline == "wmdetect" else evaluation.run_uwmdetect
            scores = runner(system, samples, chain, jobs=req.jobs)
            report = {
                "algorithm": system.algorithm,
                "channel": system.channel.spec.to_dict(),
                "attacks": [s.token() for s in chain],
                "n": req.n,
                "orientation": "higher" if system.higher_is_watermarked else "lower",
                "scores": {req.pipeline: scores},
                "rates": {},
            }
        else:
            raise ValueError(f"unknown pipeline {req.pipeline!r}")
        if req.quality_mode:
            report["quality"] = evaluation.quality_pipeline(system, samples, req.quality_mode).to_dict()
        else:
            report["quality"] = {}
        report["seed"] = req.seed
        report["wall_time_s"] = 0.0  # deterministic placeholder; timing goes to client stderr
        return EvaluateResponse(report=report)
    except evaluation.PipelineError as exc:
        _fail(exc)
    except _USER_ERRORS as exc:
        _fail(exc)


@app.post("/visualize", response_model=VisualizeResponse)
def visualize(req: VisualizeRequest):
    try:
        system = get_system(req.algorithm, req.config, req.seed)
        media = system.generate_watermarked_media(req.sample_id)
        data = collect_visualization_data(system, media, sample_id=req.sample_id)
        cols = req.cols if req.cols is not None else len(req.methods)
        grid = PanelGrid(
            req.rows,
            cols,
            tuple(req.methods),
            tuple(req.method_kwargs) if req.method_kwargs else (),
        )
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "panel.png"
            render_panels(data, grid, out)
            payload = out.read_bytes()
    except _USER_ERRORS as exc:
        _fail(exc)
    return VisualizeResponse(png_b64=base64.b64encode(payload).decode("ascii"))
