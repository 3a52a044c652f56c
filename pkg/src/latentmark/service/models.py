"""Pydantic request/response models for the watermark service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class GenerateRequest(BaseModel):
    algorithm: str
    config: Optional[dict] = None  # inline config; falls back to the shipped default
    sample_id: int = 0
    seed: int = 0
    include_key: bool = False


class GenerateResponse(BaseModel):
    algorithm: str
    media_b64: str  # LMK1 blob
    pixel: bool
    video: bool
    key: Optional[dict] = None


class DetectRequest(BaseModel):
    algorithm: str
    config: Optional[dict] = None
    media_b64: str
    pixel: bool = False
    sample_id: int = 0
    seed: int = 0
    key: Optional[dict] = None  # explicit serialized key overriding the derived one


class DetectResponse(BaseModel):
    algorithm: str
    score: float
    threshold: float
    orientation: str
    is_watermarked: bool
    p_value: Optional[float] = None
    bit_accuracy: Optional[float] = None
    matched_key_id: Optional[int] = None
    per_frame_accuracies: Optional[list[float]] = None
    tampered_frames: Optional[list[int]] = None


class EvaluateRequest(BaseModel):
    algorithm: str
    config: Optional[dict] = None
    pipeline: str = "both"  # wmdetect | uwmdetect | both
    attacks: str = ""
    n: int = Field(default=50, ge=1)
    channel: Optional[dict] = None  # overrides the config's channel spec
    target_fpr: float = 0.01
    quality_mode: Optional[str] = None
    seed: int = 0
    jobs: int = 1


class EvaluateResponse(BaseModel):
    report: dict[str, Any]


class VisualizeRequest(BaseModel):
    algorithm: str
    config: Optional[dict] = None
    sample_id: int = 0
    seed: int = 0
    methods: list[str]
    rows: int = 1
    cols: Optional[int] = None
    method_kwargs: Optional[list[dict]] = None


class VisualizeResponse(BaseModel):
    png_b64: str


class ErrorResponse(BaseModel):
    error: str
