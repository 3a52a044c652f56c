"""Key-based watermarks: the initial noise is sampled FROM a secret key.

Detection statistically compares the inverted latent with what the key would
have produced: recovered bits against the message, parity-check products, or
regenerated patch noise.  All verdicts reduce to exact binomial tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .tensor import SeededRng, ShapeError, derive_key, gaussian_latent, gaussian_ppf

__all__ = [
    "DetectionPolicy",
    "BitDetectionResult",
    "binomial_tail_pvalue",
    "GSKey",
    "gs_generate_key",
    "gs_embed",
    "gs_detect",
    "PRCKey",
    "prc_generate_key",
    "prc_embed",
    "prc_detect",
    "SEALKey",
    "seal_generate_key",
    "seal_embed",
    "seal_detect",
    "seal_transplant",
    "semantic_vector",
    "simhash_bits",
    "hyperplanes_from_salt",
    "VideoShieldKey",
    "videoshield_generate_key",
    "videoshield_embed",
    "videoshield_detect",
]

_TINY = 5e-324  # smallest subnormal double; p-values stay in (0, 1]


@dataclass(frozen=True)
class DetectionPolicy:
    """Verdict rule: bit accuracy above tau, or binomial p-value below alpha."""

    kind: str  # "accuracy" | "p_value"
    value: float

    def __post_init__(self):
        if self.kind not in ("accuracy", "p_value"):
            raise ValueError(f"unknown policy kind {self.kind!r}")

    def decide(self, accuracy: float, p_value: float) -> bool:
        if self.kind == "accuracy":
            return accuracy > self.value
        return p_value < self.value


@dataclass(frozen=True)
class BitDetectionResult:
    recovered_bits: np.ndarray
    bit_accuracy: float
    p_value: float
    is_watermarked: bool
    policy: DetectionPolicy
    per_frame_accuracies: Optional[tuple[float, ...]] = None
    tampered_frames: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not 0.0 < self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside (0, 1]")


def binomial_tail_pvalue(n: int, x: int, p: float = 0.5) -> float:
    """P(X >= x) for X ~ Binomial(n, p), exact log-space summation."""
    if not 0 <= x <= n:
        raise ValueError(f"need 0 <= x <= n, got x={x}, n={n}")
    if not 0.0 < p < 1.0:
        raise ValueError("success probability must lie in (0, 1)")
    if x == 0:
        return 1.0
    i = np.arange(x, n + 1, dtype=np.float64)
    log_terms = (
        gammaln(n + 1.0)
        - gammaln(i + 1.0)
        - gammaln(n - i + 1.0)
        + i * math.log(p)
        + (n - i) * math.log1p(-p)
    )
    tail = float(np.exp(logsumexp(log_terms)))
    return min(1.0, max(tail, _TINY))


# ---------------------------------------------------------------------------
# bit shading: message -> half-line Gaussian bins
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GSKey:
    """Message bits plus replication factors tiling the whole latent.

    Each latent entry carries one replicated, cipher-whitened bit: bit 0 draws
    from the lower Gaussian half, bit 1 from the upper, uniformly within the
    half, so the marginal stays exactly standard normal.
    """

    message: tuple[int, ...]
    replication: tuple[int, int, int]
    shape: tuple[int, int, int]
    stream_key: bytes

    def __post_init__(self):
        c, h, w = self.shape
        fc, fh, fw = self.replication
        if c % fc or h % fh or w % fw:
            raise ValueError(f"replication {self.replication} does not divide shape {self.shape}")
        k = (c // fc) * (h // fh) * (w // fw)
        if len(self.message) != k:
            raise ValueError(f"message of {len(self.message)} bits but layout expects {k}")

    @property
    def bit_count(self) -> int:
        return len(self.message)

    def to_json(self) -> dict:
        packed = np.packbits(np.asarray(self.message, dtype=np.uint8))
        return {
            "kind": "gs",
            "message_hex": packed.tobytes().hex(),
            "message_bits": len(self.message),
            "replication": list(self.replication),
            "shape": list(self.shape),
            "stream_key": self.stream_key.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GSKey":
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(obj["message_hex"]), dtype=np.uint8))
        k = int(obj["message_bits"])
        return cls(
            message=tuple(int(b) for b in bits[:k]),
            replication=tuple(obj["replication"]),
            shape=tuple(obj["shape"]),
            stream_key=bytes.fromhex(obj["stream_key"]),
        )


def gs_generate_key(key: bytes, shape, message_bits: int, replication) -> GSKey:
    message = SeededRng(derive_key(key, "gs-message")).bits(message_bits)
    return GSKey(
        message=tuple(int(b) for b in message),
        replication=tuple(replication),
        shape=tuple(shape),
        stream_key=derive_key(key, "gs-stream"),
    )


def _replicate_bits(bits: np.ndarray, shape, replication) -> np.ndarray:
    c, h, w = shape
    fc, fh, fw = replication
    grid = np.asarray(bits, dtype=np.uint8).reshape(c // fc, h // fh, w // fw)
    grid = np.repeat(np.repeat(np.repeat(grid, fc, axis=0), fh, axis=1), fw, axis=2)
    return grid


def _vote_bits(carrier_bits: np.ndarray, shape, replication) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote per message bit; ties decode as 1.  Returns (bits, counts)."""
    c, h, w = shape
    fc, fh, fw = replication
    blocks = carrier_bits.reshape(c // fc, fc, h // fh, fh, w // fw, fw)
    counts = blocks.sum(axis=(1, 3, 5), dtype=np.int64)
    replicas = fc * fh * fw
    return (counts * 2 >= replicas).astype(np.uint8).ravel(), counts.ravel()


def _cipher_bits(stream_key: bytes, sample_id: int, n: int) -> np.ndarray:
    return SeededRng(derive_key(stream_key, "cipher"), sample_id).bits(n)


def gs_embed(key: GSKey, sample_id: int) -> np.ndarray:
    """Latent entries y = ppf((s + u) / 2): the sign of y encodes s exactly."""
    n = int(np.prod(key.shape))
    s = (_replicate_bits(np.array(key.message), key.shape, key.replication).ravel()
         ^ _cipher_bits(key.stream_key, sample_id, n))
    u = SeededRng(derive_key(key.stream_key, "shade"), sample_id).uniforms(n)
    y = gaussian_ppf((s.astype(np.float64) + u) / 2.0)
    return y.reshape(key.shape)


def gs_recovered_carrier(key: GSKey, inverted: np.ndarray, sample_id: int) -> np.ndarray:
    """Per-entry recovered (de-whitened) replica bits; sign ties decode as 1."""
    if inverted.shape != key.shape:
        raise ShapeError(f"latent shape {inverted.shape} != key shape {key.shape}")
    n = int(np.prod(key.shape))
    s_hat = (inverted.ravel() >= 0.0).astype(np.uint8)
    return s_hat ^ _cipher_bits(key.stream_key, sample_id, n)


def gs_detect(key: GSKey, inverted: np.ndarray, policy: DetectionPolicy, sample_id: int = 0) -> BitDetectionResult:
    carrier = gs_recovered_carrier(key, inverted, sample_id)
    decoded, _ = _vote_bits(carrier, key.shape, key.replication)
    message = np.array(key.message, dtype=np.uint8)
    matches = int(np.sum(decoded == message))
    accuracy = matches / key.bit_count
    p = binomial_tail_pvalue(key.bit_count, matches)
    return BitDetectionResult(decoded, accuracy, p, policy.decide(accuracy, p), policy)


# ---------------------------------------------------------------------------
# sparse parity codes in staircase form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PRCKey:
    """r parity checks of weight t over n sign positions.

    Check i's largest position is the unique pivot n-r+i, so the pivots can be
    solved in one forward pass and every check's sign product comes out +1.
    """

    n: int
    checks: np.ndarray  # (r, t) int positions, ascending per row
    stream_key: bytes

    def __post_init__(self):
        r, t = self.checks.shape
        pivots = self.checks[:, -1]
        if not np.array_equal(pivots, np.arange(self.n - r, self.n)):
            raise ValueError("checks are not in staircase form")
        if t < 2:
            raise ValueError("every check needs at least 2 positions")
        if r > self.n // 2:
            raise ValueError(f"too many checks: r={r} > n/2={self.n // 2}")

    @property
    def check_count(self) -> int:
        return self.checks.shape[0]

    def to_json(self) -> dict:
        return {
            "kind": "prc",
            "n": self.n,
            "checks": self.checks.tolist(),
            "stream_key": self.stream_key.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PRCKey":
        return cls(
            n=int(obj["n"]),
            checks=np.asarray(obj["checks"], dtype=np.int64),
            stream_key=bytes.fromhex(obj["stream_key"]),
        )


def prc_generate_key(key: bytes, n: int, r: int, t: int) -> PRCKey:
    """Staircase-solvable construction: pivot i = n-r+i, t-1 members below it."""
    if t < 2:
        raise ValueError("check weight must be at least 2")
    if r > n - t:
        raise ValueError(f"infeasible: need r <= n - t, got r={r}, n={n}, t={t}")
    if r > n // 2:
        raise ValueError(f"too many checks: r={r} > n/2={n // 2}")
    checks = np.empty((r, t), dtype=np.int64)
    for i in range(r):
        pivot = n - r + i
        rng = SeededRng(derive_key(key, "prc-check"), i)
        chosen: list[int] = []
        seen: set[int] = set()
        while len(chosen) < t - 1:
            for v in rng.integers(2 * t, pivot):
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    chosen.append(v)
                    if len(chosen) == t - 1:
                        break
        checks[i] = sorted(chosen) + [pivot]
    return PRCKey(n=n, checks=checks, stream_key=derive_key(key, "prc-stream"))


def prc_embed(key: PRCKey, sample_id: int, shape) -> np.ndarray:
    """Keyed free signs, pivots solved so every parity product is +1."""
    n = int(np.prod(shape))
    if n != key.n:
        raise ShapeError(f"latent holds {n} entries but codeword length is {key.n}")
    r = key.check_count
    signs = SeededRng(derive_key(key.stream_key, "signs"), sample_id).signs(n)
    for i in range(r):
        members = key.checks[i, :-1]
        signs[key.n - r + i] = np.prod(signs[members])
    magnitudes = np.abs(SeededRng(derive_key(key.stream_key, "magnitude"), sample_id).gaussians(n))
    return (magnitudes * signs).reshape(shape)


def prc_detect(key: PRCKey, inverted: np.ndarray, alpha: float) -> BitDetectionResult:
    """Count satisfied parity checks; binomial tail under the fair-coin null."""
    if inverted.size != key.n:
        raise ShapeError(f"latent holds {inverted.size} entries but codeword length is {key.n}")
    signs = np.where(inverted.ravel() >= 0.0, 1.0, -1.0)  # ties decode as +1
    products = np.prod(signs[key.checks], axis=1)
    satisfied = int(np.sum(products > 0))
    r = key.check_count
    p = binomial_tail_pvalue(r, satisfied)
    accuracy = satisfied / r
    policy = DetectionPolicy("p_value", alpha)
    bits = (products > 0).astype(np.uint8)
    return BitDetectionResult(bits, accuracy, p, policy.decide(accuracy, p), policy)


# ---------------------------------------------------------------------------
# semantic-salt patch noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SEALKey:
    """Secret salt, simhash geometry, patch grid and the calibrated null rate."""

    salt: bytes
    hash_bits: int
    patch_grid: tuple[int, int]
    patch_threshold: float
    null_match_rate: float
    provider: str
    shape: tuple[int, int, int]

    def __post_init__(self):
        c, h, w = self.shape
        ph, pw = self.patch_grid
        if h % ph or w % pw:
            raise ValueError(f"patch grid {self.patch_grid} does not divide ({h}, {w})")
        if not 0.0 < self.null_match_rate < 1.0:
            raise ValueError("null match rate must lie in (0, 1)")

    @property
    def patch_count(self) -> int:
        return self.patch_grid[0] * self.patch_grid[1]

    def to_json(self) -> dict:
        return {
            "kind": "seal",
            "salt": self.salt.hex(),
            "hash_bits": self.hash_bits,
            "patch_grid": list(self.patch_grid),
            "patch_threshold": self.patch_threshold,
            "null_match_rate": self.null_match_rate,
            "provider": self.provider,
            "shape": list(self.shape),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SEALKey":
        return cls(
            salt=bytes.fromhex(obj["salt"]),
            hash_bits=int(obj["hash_bits"]),
            patch_grid=tuple(obj["patch_grid"]),
            patch_threshold=float(obj["patch_threshold"]),
            null_match_rate=float(obj["null_match_rate"]),
            provider=obj["provider"],
            shape=tuple(obj["shape"]),
        )


POOL_GRID = 8  # provider pools media to an 8x8 per-channel grid


def semantic_vector(media_array: np.ndarray) -> np.ndarray:
    """Shipped provider: normalized 8x8 average-pool of the media.

    Pools each channel to POOL_GRID x POOL_GRID, centers and L2-normalizes,
    so the hash depends on coarse content rather than global brightness.
    """
    arr = np.asarray(media_array, dtype=np.float64)
    if arr.ndim == 4:  # video: pool over frames too
        arr = arr.mean(axis=0)
    if arr.ndim != 3:
        raise ShapeError(f"provider expects (C,H,W) media, got {arr.shape}")
    c, h, w = arr.shape
    if h % POOL_GRID or w % POOL_GRID:
        raise ShapeError(f"media dims ({h},{w}) not divisible by pool grid {POOL_GRID}")
    pooled = arr.reshape(c, POOL_GRID, h // POOL_GRID, POOL_GRID, w // POOL_GRID).mean(axis=(2, 4))
    v = pooled.ravel()
    v = v - v.mean()
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v
    return v / norm


def pool_grid_means(arr: np.ndarray) -> np.ndarray:
    """Per-channel POOL_GRID x POOL_GRID block means: what the provider measures."""
    c, h, w = arr.shape
    return arr.reshape(c, POOL_GRID, h // POOL_GRID, POOL_GRID, w // POOL_GRID).mean(axis=(2, 4))


def broadcast_pool_delta(delta: np.ndarray, shape) -> np.ndarray:
    """Blockwise-constant (C,H,W) image from a (C,8,8) pooled-grid delta."""
    c, h, w = shape
    return np.repeat(np.repeat(delta, h // POOL_GRID, axis=1), w // POOL_GRID, axis=2)


def hyperplanes_from_salt(salt: bytes, dim: int, bits: int) -> np.ndarray:
    """bits unit vectors in R^dim, deterministic from the salt."""
    g = SeededRng(derive_key(salt, "hyperplanes", dim)).gaussians(bits * dim).reshape(bits, dim)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def simhash_bits(v: np.ndarray, planes: np.ndarray) -> np.ndarray:
    return (planes @ v >= 0.0).astype(np.uint8)


def _patch_slices(shape, patch_grid):
    c, h, w = shape
    ph, pw = patch_grid
    sh, sw = h // ph, w // pw
    for i in range(ph):
        for j in range(pw):
            yield slice(i * sh, (i + 1) * sh), slice(j * sw, (j + 1) * sw)


def _patch_noise(key: SEALKey, hash_bits: np.ndarray, patch_index: int, patch_shape) -> np.ndarray:
    rng = SeededRng(derive_key(key.salt, "patch", hash_bits.tobytes(), patch_index))
    return rng.gaussians(int(np.prod(patch_shape))).reshape(patch_shape)


def seal_generate_key(
    key: bytes,
    shape,
    hash_bits: int = 16,
    patch_grid=(4, 4),
    patch_threshold: float = 0.5,
    provider: str = "avgpool8",
    calibration_trials: int = 200,
) -> SEALKey:
    """Key with the per-patch null match rate estimated once and stored."""
    salt = derive_key(key, "seal-salt")
    shape = tuple(shape)
    proto = SEALKey(salt, hash_bits, tuple(patch_grid), patch_threshold, 0.5, provider, shape)
    h_cal = SeededRng(derive_key(salt, "calibration-hash")).bits(hash_bits)
    c = shape[0]
    matches = 0
    total = 0
    for trial in range(calibration_trials):
        latent = gaussian_latent(SeededRng(derive_key(salt, "calibration"), trial), shape)
        for p_idx, (sy, sx) in enumerate(_patch_slices(shape, proto.patch_grid)):
            patch = latent[:, sy, sx].ravel()
            noise = _patch_noise(proto, h_cal, p_idx, (c, sy.stop - sy.start, sx.stop - sx.start)).ravel()
            cos = float(patch @ noise / (np.linalg.norm(patch) * np.linalg.norm(noise)))
            matches += cos > patch_threshold
            total += 1
    rate = max(matches / total, 1.0 / (total + 1))
    return SEALKey(salt, hash_bits, tuple(patch_grid), patch_threshold, rate, provider, shape)


def seal_embed(key: SEALKey, reference_media) -> np.ndarray:
    """Latent assembled from per-patch noise seeded by (salt, media hash, patch)."""
    arr = reference_media.array if hasattr(reference_media, "array") else np.asarray(reference_media)
    v = semantic_vector(arr)
    planes = hyperplanes_from_salt(key.salt, v.size, key.hash_bits)
    h = simhash_bits(v, planes)
    c = key.shape[0]
    latent = np.empty(key.shape)
    for p_idx, (sy, sx) in enumerate(_patch_slices(key.shape, key.patch_grid)):
        latent[:, sy, sx] = _patch_noise(key, h, p_idx, (c, sy.stop - sy.start, sx.stop - sx.start))
    return latent


def seal_transplant(latent: np.ndarray, semantic_source: np.ndarray) -> np.ndarray:
    """Overwrite the latent's pooled 8x8 means with the source's.

    The provider measures exactly these pooled means (up to the channel map),
    so the transplanted latent generates media that hashes like the source
    while the within-patch noise still carries the key.
    """
    if latent.shape != semantic_source.shape:
        raise ShapeError("transplant requires matching shapes")
    c, h, w = latent.shape
    bh, bw = h // POOL_GRID, w // POOL_GRID
    out = latent.reshape(c, POOL_GRID, bh, POOL_GRID, bw)
    src = semantic_source.reshape(c, POOL_GRID, bh, POOL_GRID, bw)
    delta = src.mean(axis=(2, 4), keepdims=True) - out.mean(axis=(2, 4), keepdims=True)
    return (out + delta).reshape(c, h, w)


def seal_detect(
    key: SEALKey,
    inverted: np.ndarray,
    attacked_media,
    tau_patch: Optional[float] = None,
    alpha: float = 0.01,
) -> BitDetectionResult:
    """Recompute the media hash, regenerate patch noise, count cosine matches."""
    if inverted.shape != key.shape:
        raise ShapeError(f"latent shape {inverted.shape} != key shape {key.shape}")
    tau_patch = key.patch_threshold if tau_patch is None else tau_patch
    arr = attacked_media.array if hasattr(attacked_media, "array") else np.asarray(attacked_media)
    v = semantic_vector(arr)
    planes = hyperplanes_from_salt(key.salt, v.size, key.hash_bits)
    h = simhash_bits(v, planes)
    c = key.shape[0]
    matched = []
    for p_idx, (sy, sx) in enumerate(_patch_slices(key.shape, key.patch_grid)):
        patch = inverted[:, sy, sx].ravel()
        noise = _patch_noise(key, h, p_idx, (c, sy.stop - sy.start, sx.stop - sx.start)).ravel()
        denom = np.linalg.norm(patch) * np.linalg.norm(noise)
        cos = float(patch @ noise / denom) if denom > 0 else 0.0
        matched.append(cos > tau_patch)
    matches = int(np.sum(matched))
    p = binomial_tail_pvalue(key.patch_count, matches, key.null_match_rate)
    accuracy = matches / key.patch_count
    policy = DetectionPolicy("p_value", alpha)
    return BitDetectionResult(np.asarray(matched, dtype=np.uint8), accuracy, p, policy.decide(accuracy, p), policy)


# ---------------------------------------------------------------------------
# per-frame shading with index payloads (video)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoShieldKey:
    """Per-frame payload = shared message ++ frame-index bits, shaded per frame.

    The whitening cipher is shared by all frames so a swapped frame still
    decodes to its original index and can be localized.
    """

    message: tuple[int, ...]
    frames: int
    max_frames: int
    replication: tuple[int, int, int]
    frame_shape: tuple[int, int, int]
    stream_key: bytes

    def __post_init__(self):
        if self.frames < 1 or self.frames > self.max_frames:
            raise ValueError(f"frames {self.frames} outside [1, {self.max_frames}]")
        c, h, w = self.frame_shape
        fc, fh, fw = self.replication
        k = (c // fc) * (h // fh) * (w // fw)
        if len(self.message) + self.index_bits != k:
            raise ValueError(
                f"payload of {len(self.message)}+{self.index_bits} bits does not fit layout of {k}"
            )

    @property
    def index_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.max_frames)))

    @property
    def payload_bits(self) -> int:
        return len(self.message) + self.index_bits

    def payload(self, frame: int) -> np.ndarray:
        idx = [(frame >> b) & 1 for b in range(self.index_bits)]
        return np.array(list(self.message) + idx, dtype=np.uint8)

    def to_json(self) -> dict:
        packed = np.packbits(np.asarray(self.message, dtype=np.uint8))
        return {
            "kind": "videoshield",
            "message_hex": packed.tobytes().hex(),
            "message_bits": len(self.message),
            "frames": self.frames,
            "max_frames": self.max_frames,
            "replication": list(self.replication),
            "frame_shape": list(self.frame_shape),
            "stream_key": self.stream_key.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VideoShieldKey":
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(obj["message_hex"]), dtype=np.uint8))
        k = int(obj["message_bits"])
        return cls(
            message=tuple(int(b) for b in bits[:k]),
            frames=int(obj["frames"]),
            max_frames=int(obj["max_frames"]),
            replication=tuple(obj["replication"]),
            frame_shape=tuple(obj["frame_shape"]),
            stream_key=bytes.fromhex(obj["stream_key"]),
        )


def videoshield_generate_key(
    key: bytes, frame_shape, frames: int, max_frames: int, message_bits: int, replication
) -> VideoShieldKey:
    message = SeededRng(derive_key(key, "vs-message")).bits(message_bits)
    return VideoShieldKey(
        message=tuple(int(b) for b in message),
        frames=frames,
        max_frames=max_frames,
        replication=tuple(replication),
        frame_shape=tuple(frame_shape),
        stream_key=derive_key(key, "vs-stream"),
    )


def videoshield_embed(key: VideoShieldKey, sample_id: int) -> np.ndarray:
    n = int(np.prod(key.frame_shape))
    cipher = _cipher_bits(key.stream_key, sample_id, n)
    out = np.empty((key.frames, *key.frame_shape))
    for t in range(key.frames):
        s = _replicate_bits(key.payload(t), key.frame_shape, key.replication).ravel() ^ cipher
        u = SeededRng(derive_key(key.stream_key, "shade", t), sample_id).uniforms(n)
        out[t] = gaussian_ppf((s.astype(np.float64) + u) / 2.0).reshape(key.frame_shape)
    return out


def videoshield_detect(
    key: VideoShieldKey,
    inverted: np.ndarray,
    policy: DetectionPolicy,
    tau_frame: float = 0.75,
    sample_id: int = 0,
) -> BitDetectionResult:
    """Global message vote across frames plus per-frame tamper localization.

    Per-frame accuracy is the raw replica-bit agreement with the payload
    expected at that position (pre-vote), which stays sensitive to frame
    corruption that heavy replication would otherwise vote away.
    """
    expected_shape = (key.frames, *key.frame_shape)
    if inverted.shape != expected_shape:
        raise ShapeError(f"video shape {inverted.shape} != key shape {expected_shape}")
    n = int(np.prod(key.frame_shape))
    cipher = _cipher_bits(key.stream_key, sample_id, n)
    k_msg = len(key.message)
    message = np.array(key.message, dtype=np.uint8)
    global_counts = np.zeros(key.payload_bits, dtype=np.int64)
    per_frame_acc = []
    tampered = []
    for t in range(key.frames):
        carrier = ((inverted[t].ravel() >= 0.0).astype(np.uint8)) ^ cipher
        expected = _replicate_bits(key.payload(t), key.frame_shape, key.replication).ravel()
        per_frame_acc.append(float(np.mean(carrier == expected)))
        decoded, counts = _vote_bits(carrier, key.frame_shape, key.replication)
        global_counts += counts
        decoded_index = int(sum(int(b) << i for i, b in enumerate(decoded[k_msg:])))
        if decoded_index != t or per_frame_acc[-1] < tau_frame:
            tampered.append(t)
    replicas = int(np.prod(key.replication)) * key.frames
    global_bits = (global_counts * 2 >= replicas).astype(np.uint8)[:k_msg]
    matches = int(np.sum(global_bits == message))
    accuracy = matches / k_msg
    p = binomial_tail_pvalue(k_msg, matches)
    return BitDetectionResult(
        global_bits,
        accuracy,
        p,
        policy.decide(accuracy, p),
        policy,
        per_frame_accuracies=tuple(per_frame_acc),
        tampered_frames=tuple(tampered),
    )
