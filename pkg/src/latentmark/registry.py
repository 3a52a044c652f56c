"""Algorithm factory: config loading, key derivation and the unified
generate/detect surface.

``load_system(algorithm, config_source)`` validates the JSON config, derives
all key material from the master key, builds the channel, resolves the
detection threshold (fixed or calibrated to a target FPR on null runs) and
returns an immutable :class:`WatermarkSystem`.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import evaluation, keyed, patterns
from .channel import Channel, ChannelSpec, Media
from .tensor import SeededRng, ShapeError, derive_key, gaussian_latent, validate_latent_shape

ALGORITHMS = ("TR", "RI", "ROBIN", "WIND", "GS", "PRC", "SEAL", "VideoShield")

PATTERN_ALGORITHMS = {"TR", "RI", "ROBIN"}  # lower score = more watermarked
CONFIG_SCHEMA = 1

__all__ = [
    "ALGORITHMS",
    "AlgorithmConfig",
    "ConfigError",
    "DetectionResult",
    "WatermarkSystem",
    "load_system",
    "parse_config",
    "serialize_config",
    "default_config",
]


class ConfigError(ValueError):
    """Config schema violation; message names the offending field."""


@dataclass(frozen=True)
class DetectionResult:
    algorithm: str
    score: float
    threshold: float
    higher_is_watermarked: bool
    is_watermarked: bool
    p_value: Optional[float] = None
    bit_accuracy: Optional[float] = None
    matched_key_id: Optional[int] = None
    per_frame_accuracies: Optional[tuple[float, ...]] = None
    tampered_frames: Optional[tuple[int, ...]] = None

    def to_json(self) -> dict:
        out = {
            "algorithm": self.algorithm,
            "score": self.score,
            "threshold": self.threshold,
            "orientation": "higher" if self.higher_is_watermarked else "lower",
            "is_watermarked": self.is_watermarked,
        }
        for name in ("p_value", "bit_accuracy", "matched_key_id"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.per_frame_accuracies is not None:
            out["per_frame_accuracies"] = list(self.per_frame_accuracies)
        if self.tampered_frames is not None:
            out["tampered_frames"] = list(self.tampered_frames)
        return out


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_SHARED_FIELDS = {"schema", "algorithm", "latent_shape", "frames", "master_key", "channel", "threshold", "params"}

_PARAM_FIELDS = {
    "TR": {"rings", "carrier_channel"},
    "RI": {"rings", "carrier_channels", "keys", "amplitude"},
    "ROBIN": {"rings", "carrier_channel", "strength"},
    "WIND": {"noises", "groups", "rings", "carrier_channel", "amplitude"},
    "GS": {"message_bits", "replication"},
    "PRC": {"checks", "check_weight"},
    "SEAL": {"hash_bits", "patch_grid", "patch_threshold", "provider", "calibration_trials"},
    "VideoShield": {"message_bits", "max_frames", "replication", "frame_threshold"},
}

_THRESHOLD_POLICIES = ("fixed", "target_fpr", "p_value")


@dataclass(frozen=True)
class AlgorithmConfig:
    algorithm: str
    latent_shape: tuple[int, int, int]
    frames: int
    master_key: bytes
    channel: ChannelSpec
    threshold_policy: str
    threshold_value: float  # tau for fixed, alpha otherwise
    calibration_nulls: int
    params: dict

    @property
    def is_video(self) -> bool:
        return self.algorithm == "VideoShield"


def _require(cond: bool, field: str, reason: str):
    if not cond:
        raise ConfigError(f"field {field!r}: {reason}")


def parse_config(obj: dict, algorithm: Optional[str] = None) -> AlgorithmConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(obj) - _SHARED_FIELDS
    _require(not unknown, ",".join(sorted(unknown)), "unknown top-level field(s)")
    _require(obj.get("schema") == CONFIG_SCHEMA, "schema", f"must be {CONFIG_SCHEMA}")
    alg = obj.get("algorithm")
    _require(alg in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}, got {alg!r}")
    if algorithm is not None and alg != algorithm:
        raise ConfigError(f"field 'algorithm': config is for {alg!r}, requested {algorithm!r}")

    shape = obj.get("latent_shape")
    _require(isinstance(shape, (list, tuple)) and len(shape) == 3, "latent_shape", "must be [C, H, W]")
    shape = tuple(int(d) for d in shape)
    try:
        validate_latent_shape(shape)
    except ShapeError as exc:
        raise ConfigError(f"field 'latent_shape': {exc}") from exc

    frames = int(obj.get("frames", 1))
    _require(frames >= 1, "frames", "must be >= 1")

    key_hex = obj.get("master_key")
    _require(isinstance(key_hex, str), "master_key", "must be a hex string")
    try:
        master = bytes.fromhex(key_hex)
    except ValueError as exc:
        raise ConfigError(f"field 'master_key': not valid hex") from exc
    _require(len(master) == 32, "master_key", "must encode 32 bytes")

    try:
        channel = ChannelSpec.parse(obj.get("channel", "identity"))
    except ValueError as exc:
        raise ConfigError(f"field 'channel': {exc}") from exc

    thr = obj.get("threshold")
    _require(isinstance(thr, dict), "threshold", "must be an object")
    _require(thr.get("policy") in _THRESHOLD_POLICIES, "threshold.policy", f"must be one of {_THRESHOLD_POLICIES}")
    policy = thr["policy"]
    extra = set(thr) - {"policy", "tau", "alpha", "calibration_nulls"}
    _require(not extra, "threshold", f"unknown keys {sorted(extra)}")
    if policy == "fixed":
        _require("tau" in thr, "threshold.tau", "required for fixed policy")
        value = float(thr["tau"])
    else:
        _require("alpha" in thr, "threshold.alpha", "required for this policy")
        value = float(thr["alpha"])
        _require(0.0 < value < 1.0, "threshold.alpha", "must lie in (0, 1)")
    calibration_nulls = int(thr.get("calibration_nulls", 200))
    if policy == "p_value":
        _require(alg in ("GS", "PRC", "SEAL", "VideoShield"), "threshold.policy",
                 f"p_value policy needs a p-value-producing algorithm, not {alg}")

    params = obj.get("params", {})
    _require(isinstance(params, dict), "params", "must be an object")
    unknown_params = set(params) - _PARAM_FIELDS[alg]
    _require(not unknown_params, f"params.{','.join(sorted(unknown_params))}", f"unknown for {alg}")
    params = dict(params)
    _validate_params(alg, shape, frames, params)

    return AlgorithmConfig(
        algorithm=alg,
        latent_shape=shape,
        frames=frames,
        master_key=master,
        channel=channel,
        threshold_policy=policy,
        threshold_value=value,
        calibration_nulls=calibration_nulls,
        params=params,
    )


def _validate_params(alg: str, shape, frames: int, p: dict):
    c, h, w = shape
    max_rings = min(h, w) // 2 - 1
    if alg in ("TR", "ROBIN"):
        p.setdefault("rings", 8)
        p.setdefault("carrier_channel", 3)
        _require(0 < p["rings"] <= max_rings, "params.rings", f"must lie in [1, {max_rings}]")
        _require(0 <= p["carrier_channel"] < c, "params.carrier_channel", f"must lie in [0, {c})")
        if alg == "ROBIN":
            p.setdefault("strength", 0.7)
            _require(0.0 <= p["strength"] <= 1.0, "params.strength", "must lie in [0, 1]")
    elif alg == "RI":
        p.setdefault("rings", 8)
        p.setdefault("carrier_channels", [2, 3])
        p.setdefault("keys", 16)
        p.setdefault("amplitude", 1.5)
        _require(0 < p["rings"] <= max_rings, "params.rings", f"must lie in [1, {max_rings}]")
        chans = p["carrier_channels"]
        _require(len(chans) == 2 and all(0 <= ch < c for ch in chans), "params.carrier_channels",
                 f"must list two channels in [0, {c})")
        _require(1 <= p["keys"] <= 2 ** p["rings"], "params.keys", "must fit the ring code space")
    elif alg == "WIND":
        p.setdefault("noises", 64)
        p.setdefault("groups", 8)
        p.setdefault("rings", 8)
        p.setdefault("carrier_channel", 0)
        p.setdefault("amplitude", 1.5)
        _require(0 < p["groups"] <= p["noises"], "params.groups", "must lie in [1, noises]")
        _require(p["groups"] <= 2 ** p["rings"], "params.groups", "must fit the ring code space")
        _require(0 <= p["carrier_channel"] < c, "params.carrier_channel", f"must lie in [0, {c})")
    elif alg == "GS":
        p.setdefault("message_bits", 256)
        p.setdefault("replication", [1, 4, 4])
        fc, fh, fw = (int(v) for v in p["replication"])
        _require(c % fc == 0 and h % fh == 0 and w % fw == 0, "params.replication", "must divide the latent dims")
        k = (c // fc) * (h // fh) * (w // fw)
        _require(p["message_bits"] == k, "params.message_bits",
                 f"replication implies exactly {k} message bits")
    elif alg == "PRC":
        n = c * h * w
        p.setdefault("checks", 512)
        p.setdefault("check_weight", 3)
        r, t = p["checks"], p["check_weight"]
        _require(t >= 2, "params.check_weight", "must be >= 2")
        _require(r <= n - t, "params.checks", f"needs checks <= {n - t} for this latent")
        _require(r <= n // 2, "params.checks", f"needs checks <= n/2 = {n // 2}")
    elif alg == "SEAL":
        p.setdefault("hash_bits", 16)
        p.setdefault("patch_grid", [4, 4])
        p.setdefault("patch_threshold", 0.5)
        p.setdefault("provider", "avgpool8")
        p.setdefault("calibration_trials", 200)
        ph, pw = (int(v) for v in p["patch_grid"])
        _require(h % ph == 0 and w % pw == 0, "params.patch_grid", "must divide the latent dims")
        _require(p["provider"] == "avgpool8", "params.provider", "only 'avgpool8' is shipped")
    elif alg == "VideoShield":
        p.setdefault("max_frames", 16)
        p.setdefault("message_bits", 60)
        p.setdefault("replication", [1, 8, 8])
        p.setdefault("frame_threshold", 0.72)
        _require(frames <= p["max_frames"], "frames", f"must be <= max_frames ({p['max_frames']})")
        fc, fh, fw = (int(v) for v in p["replication"])
        _require(c % fc == 0 and h % fh == 0 and w % fw == 0, "params.replication", "must divide the latent dims")
        idx_bits = max(1, int(np.ceil(np.log2(p["max_frames"]))))
        k = (c // fc) * (h // fh) * (w // fw)
        _require(p["message_bits"] + idx_bits == k, "params.message_bits",
                 f"message + {idx_bits} index bits must equal the layout's {k}")


def serialize_config(cfg: AlgorithmConfig) -> dict:
    out = {
        "schema": CONFIG_SCHEMA,
        "algorithm": cfg.algorithm,
        "latent_shape": list(cfg.latent_shape),
        "master_key": cfg.master_key.hex(),
        "channel": cfg.channel.to_dict(),
        "params": dict(cfg.params),
    }
    if cfg.algorithm == "VideoShield":
        out["frames"] = cfg.frames
    if cfg.threshold_policy == "fixed":
        out["threshold"] = {"policy": "fixed", "tau": cfg.threshold_value}
    else:
        out["threshold"] = {
            "policy": cfg.threshold_policy,
            "alpha": cfg.threshold_value,
            "calibration_nulls": cfg.calibration_nulls,
        }
    return out


def default_config(algorithm: str) -> dict:
    """Shipped default config, overridable via LMK_CONFIG_DIR or ./config/<ID>.json."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; known: {', '.join(ALGORITHMS)}")
    env_dir = os.environ.get("LMK_CONFIG_DIR")
    candidates = []
    if env_dir:
        candidates.append(Path(env_dir) / f"{algorithm}.json")
    candidates.append(Path("config") / f"{algorithm}.json")
    for path in candidates:
        if path.is_file():
            return json.loads(path.read_text())
    resource = importlib.resources.files("latentmark.configs").joinpath(f"{algorithm}.json")
    return json.loads(resource.read_text())


# ---------------------------------------------------------------------------
# the system
# ---------------------------------------------------------------------------

class WatermarkSystem:
    """Immutable bundle of config, key material, channel and detector."""

    def __init__(self, config: AlgorithmConfig):
        self.config = config
        self.algorithm = config.algorithm
        self.channel = Channel(config.channel, derive_key(config.master_key, "channel-noise"))
        self.attack_key = derive_key(config.master_key, "attack-noise")
        self.higher_is_watermarked = config.algorithm not in PATTERN_ALGORITHMS
        self._alg_key = derive_key(config.master_key, "algorithm", config.algorithm)
        self._build_key_material()
        self.threshold = self._resolve_threshold()

    # -- key material --------------------------------------------------

    def _build_key_material(self):
        cfg = self.config
        shape = cfg.latent_shape
        p = cfg.params
        if cfg.algorithm == "TR":
            self.key = patterns.tr_generate_key(
                SeededRng(derive_key(self._alg_key, "ring-key")), shape, p["rings"], p["carrier_channel"]
            )
        elif cfg.algorithm == "RI":
            self.key = patterns.ri_generate_keyset(
                shape, p["rings"], tuple(p["carrier_channels"]), p["keys"], p["amplitude"]
            )
        elif cfg.algorithm == "ROBIN":
            self.key = patterns.tr_generate_key(
                SeededRng(derive_key(self._alg_key, "ring-key")), shape, p["rings"], p["carrier_channel"]
            )
        elif cfg.algorithm == "WIND":
            self.key = patterns.wind_generate_key(
                derive_key(self._alg_key, "seeds"), shape, p["noises"], p["groups"],
                p["rings"], p["carrier_channel"], p["amplitude"],
            )
        elif cfg.algorithm == "GS":
            self.key = keyed.gs_generate_key(
                derive_key(self._alg_key, "gs"), shape, p["message_bits"], tuple(p["replication"])
            )
        elif cfg.algorithm == "PRC":
            self.key = keyed.prc_generate_key(
                derive_key(self._alg_key, "prc"), int(np.prod(shape)), p["checks"], p["check_weight"]
            )
        elif cfg.algorithm == "SEAL":
            self.key = keyed.seal_generate_key(
                derive_key(self._alg_key, "seal"), shape,
                hash_bits=p["hash_bits"], patch_grid=tuple(p["patch_grid"]),
                patch_threshold=p["patch_threshold"], provider=p["provider"],
                calibration_trials=p["calibration_trials"],
            )
        elif cfg.algorithm == "VideoShield":
            self.key = keyed.videoshield_generate_key(
                derive_key(self._alg_key, "vs"), shape, cfg.frames, p["max_frames"],
                p["message_bits"], tuple(p["replication"]),
            )

    # -- generation ------------------------------------------------------

    def _draft_latent(self, sample_id: int) -> np.ndarray:
        shape = self.config.latent_shape
        if self.config.is_video:
            shape = (self.config.frames, *shape)
        return gaussian_latent(SeededRng(derive_key(self._alg_key, "draft"), sample_id), shape)

    def generate_watermarked_latent(self, sample_id: int) -> np.ndarray:
        cfg = self.config
        if cfg.algorithm == "TR":
            return patterns.tr_embed(self.key, self._draft_latent(sample_id))
        if cfg.algorithm == "RI":
            return patterns.ri_embed(self.key, sample_id % self.key.count, self._draft_latent(sample_id))
        if cfg.algorithm == "WIND":
            return patterns.wind_embed(self.key, sample_id % self.key.noise_count)
        if cfg.algorithm == "GS":
            return keyed.gs_embed(self.key, sample_id)
        if cfg.algorithm == "PRC":
            return keyed.prc_embed(self.key, sample_id, cfg.latent_shape)
        if cfg.algorithm == "VideoShield":
            return keyed.videoshield_embed(self.key, sample_id)
        if cfg.algorithm == "SEAL":
            draft = self._draft_latent(sample_id)
            reference = self.channel.forward(draft)
            latent = keyed.seal_embed(self.key, reference)
            latent = keyed.seal_transplant(latent, draft)
            return self._seal_refine(latent, reference)
        raise AssertionError(f"ROBIN embeds mid-trajectory; use generate_watermarked_media")

    def _seal_refine(self, latent: np.ndarray, reference: Media, iters: int = 4) -> np.ndarray:
        """Pin the generated media's pooled semantics to the reference's.

        The semantic hash is recomputed from received media at detection, so
        the watermarked media must pool to the same grid the key was derived
        from; a few fixed-point steps through the channel's clean inverse
        remove the resampling leakage the latent-space transplant leaves.
        """
        ref_pool = keyed.pool_grid_means(reference.array)
        for _ in range(iters):
            media = self.channel.forward(latent)
            delta = ref_pool - keyed.pool_grid_means(media.array)
            if float(np.max(np.abs(delta))) < 1e-8:
                break
            bumped = Media(
                media.array + keyed.broadcast_pool_delta(delta, media.array.shape), media.pixel
            )
            latent = latent + (self.channel.clean_invert(bumped) - self.channel.clean_invert(media))
        return latent

    def generate_watermarked_media(self, sample_id: int) -> Media:
        if self.algorithm == "ROBIN":
            return patterns.robin_embed(
                self.key, self._draft_latent(sample_id), self.channel, self.config.params["strength"]
            )
        return self.channel.forward(self.generate_watermarked_latent(sample_id))

    def generate_null_media(self, sample_id: int) -> Media:
        shape = self.config.latent_shape
        if self.config.is_video:
            shape = (self.config.frames, *shape)
        latent = gaussian_latent(SeededRng(derive_key(self._alg_key, "null"), sample_id), shape)
        return self.channel.forward(latent)

    # -- detection ---------------------------------------------------------

    def _expected_media_shape(self, media: Media):
        spec = self.config.channel
        c, h, w = self.config.latent_shape
        if spec.kind == "toy_codec":
            base = (3, h * spec.upsample, w * spec.upsample)
        else:
            base = (c, h, w)
        want = (self.config.frames, *base) if self.config.is_video else base
        if media.array.shape != want:
            raise ShapeError(f"media shape {media.array.shape} does not match configured {want}")

    def _call_id(self, media: Media) -> bytes:
        return hashlib.blake2b(media.tobytes(), digest_size=16).digest()

    def _native_detect(self, media: Media, sample_id: int, tau: float):
        cfg = self.config
        call_id = self._call_id(media)
        if cfg.algorithm == "ROBIN":
            mid = patterns.robin_invert_midstate(self.channel, media, call_id)
            return patterns.robin_detect(self.key, mid, tau)
        inverted = self.channel.invert(media, call_id)
        if cfg.algorithm == "TR":
            return patterns.tr_detect(self.key, inverted, tau)
        if cfg.algorithm == "RI":
            return patterns.ri_identify(self.key, inverted, tau)
        if cfg.algorithm == "WIND":
            return patterns.wind_detect(self.key, inverted, tau)
        if cfg.algorithm == "GS":
            return keyed.gs_detect(self.key, inverted, self._bit_policy(tau), sample_id)
        if cfg.algorithm == "PRC":
            return keyed.prc_detect(self.key, inverted, self._alpha())
        if cfg.algorithm == "SEAL":
            return keyed.seal_detect(self.key, inverted, media, None, self._alpha())
        if cfg.algorithm == "VideoShield":
            return keyed.videoshield_detect(
                self.key, inverted, self._bit_policy(tau),
                tau_frame=cfg.params["frame_threshold"], sample_id=sample_id,
            )
        raise AssertionError(cfg.algorithm)  # pragma: no cover

    def detect_watermark_in_media(self, media: Media, sample_id: int = 0) -> DetectionResult:
        """Invert the media and run the configured detector.

        ``sample_id`` selects the per-sample whitening stream used by the
        bit-shading algorithms; it must match the id used at generation.
        """
        self._expected_media_shape(media)
        native = self._native_detect(media, sample_id, self.threshold)
        return self._unify(native)

    def _bit_policy(self, tau: float) -> keyed.DetectionPolicy:
        if self.config.threshold_policy == "p_value":
            return keyed.DetectionPolicy("p_value", self.config.threshold_value)
        return keyed.DetectionPolicy("accuracy", tau)

    def _alpha(self) -> float:
        return self.config.threshold_value if self.config.threshold_policy == "p_value" else 0.01

    def _unify(self, native) -> DetectionResult:
        if isinstance(native, patterns.PatternDetectionResult):
            verdict = native.score > self.threshold if self.higher_is_watermarked else native.score < self.threshold
            return DetectionResult(
                algorithm=self.algorithm,
                score=native.score,
                threshold=self.threshold,
                higher_is_watermarked=self.higher_is_watermarked,
                is_watermarked=verdict,
                matched_key_id=native.matched_key_id,
            )
        score = native.bit_accuracy
        if self.config.threshold_policy == "p_value":
            verdict = native.p_value < self.config.threshold_value
            threshold = self.config.threshold_value
        else:
            verdict = score > self.threshold
            threshold = self.threshold
        return DetectionResult(
            algorithm=self.algorithm,
            score=score,
            threshold=threshold,
            higher_is_watermarked=True,
            is_watermarked=verdict,
            p_value=native.p_value,
            bit_accuracy=native.bit_accuracy,
            per_frame_accuracies=native.per_frame_accuracies,
            tampered_frames=native.tampered_frames,
        )

    # -- threshold resolution ---------------------------------------------

    def _resolve_threshold(self) -> float:
        policy = self.config.threshold_policy
        if policy == "fixed":
            return self.config.threshold_value
        if policy == "p_value":
            return self.config.threshold_value  # alpha; verdicts use p-values directly
        # target_fpr: calibrate on deterministic null runs through the channel
        alpha = self.config.threshold_value
        nulls = []
        for i in range(self.config.calibration_nulls):
            cal_id = 1_000_000_000 + i  # disjoint from ordinary sample ids
            media = self.generate_null_media(cal_id)
            native = self._native_detect(media, cal_id, 0.0)
            score = native.score if hasattr(native, "score") else native.bit_accuracy
            nulls.append(score)
        return evaluation.threshold_for_fpr(nulls, alpha, self.higher_is_watermarked)

    def score_key_json(self) -> dict:
        return self.key.to_json()


_KEY_KINDS = {
    "ring": ("TR", "ROBIN"),
    "ring-set": ("RI",),
    "grouped-noise": ("WIND",),
    "gs": ("GS",),
    "prc": ("PRC",),
    "seal": ("SEAL",),
    "videoshield": ("VideoShield",),
}


def key_from_json(algorithm: str, obj: dict):
    """Parse a serialized watermark key and check it fits the algorithm."""
    kind = obj.get("kind")
    if kind not in _KEY_KINDS or algorithm not in _KEY_KINDS[kind]:
        raise ConfigError(f"key of kind {kind!r} does not fit algorithm {algorithm}")
    loaders = {
        "ring": patterns.RingKey.from_json,
        "ring-set": patterns.RingKeySet.from_json,
        "grouped-noise": patterns.GroupedNoiseKey.from_json,
        "gs": keyed.GSKey.from_json,
        "prc": keyed.PRCKey.from_json,
        "seal": keyed.SEALKey.from_json,
        "videoshield": keyed.VideoShieldKey.from_json,
    }
    return loaders[kind](obj)


def load_system(algorithm: str, config_source=None) -> WatermarkSystem:
    """Build a ready-to-use system for one of the eight algorithm ids."""
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; known: {', '.join(ALGORITHMS)}")
    if config_source is None:
        obj = default_config(algorithm)
    elif isinstance(config_source, dict):
        obj = config_source
    else:
        path = Path(config_source)
        try:
            obj = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = parse_config(obj, algorithm)
    return WatermarkSystem(cfg)
