"""Media attacks applied between generation and detection.

Image kinds: rotation, crop-and-scale, additive noise, blur, JPEG-style
quantization, color jitter.  Video kinds: frame averaging, frame swaps and a
keyframe+delta codec proxy.  Attacks compose as ordered chains parsed from
compact CLI tokens like ``jpeg:60,rot:15``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .channel import Media, bilinear_resize
from .tensor import SeededRng

__all__ = ["AttackSpec", "apply_attack", "apply_chain", "parse_chain", "AttackError"]


class AttackError(ValueError):
    """Bad attack parameters or attack/media kind mismatch."""


# libjpeg-style baseline quantization tables (Annex K) and quality scaling
LUMA_QT = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_QT = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

_KINDS = {"rot": 1, "crop": 1, "noise": 1, "blur": 2, "jpeg": 1, "jitter": 3, "favg": 1, "fswap": 1, "mpeg": 2}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    args: tuple[float, ...]
    pairs: Optional[tuple[tuple[int, int], ...]] = None  # explicit fswap pairs

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if len(self.args) != _KINDS[self.kind]:
            raise AttackError(f"{self.kind} takes {_KINDS[self.kind]} parameter(s), got {len(self.args)}")
        a = self.args
        if self.kind == "crop" and not 0.0 < a[0] <= 1.0:
            raise AttackError(f"crop ratio must lie in (0, 1], got {a[0]}")
        if self.kind == "noise" and a[0] < 0:
            raise AttackError("noise sigma must be nonnegative")
        if self.kind == "blur":
            k = int(a[0])
            if k < 1 or k % 2 == 0 or a[1] <= 0:
                raise AttackError(f"blur kernel must be odd positive with sigma > 0, got {a}")
        if self.kind in ("jpeg", "mpeg") and not 1 <= a[0] <= 100:
            raise AttackError(f"quality must lie in [1, 100], got {a[0]}")
        if self.kind == "mpeg" and int(a[1]) < 1:
            raise AttackError("keyframe interval must be positive")
        if self.kind == "jitter" and any(v < 0 for v in a):
            raise AttackError("jitter parameters must be nonnegative")
        if self.kind == "favg" and (int(a[0]) < 1 or int(a[0]) % 2 == 0):
            raise AttackError("frame-average window must be odd positive")
        if self.kind == "fswap" and self.pairs is None and int(a[0]) < 1:
            raise AttackError("frame-swap count must be positive")

    def token(self) -> str:
        return f"{self.kind}:" + ",".join(format(v, "g") for v in self.args)


def parse_chain(text: str) -> tuple[AttackSpec, ...]:
    """Parse comma-chained attack tokens; bare segments extend the previous token."""
    text = text.strip()
    if not text:
        return ()
    groups: list[list[str]] = []
    for segment in text.split(","):
        segment = segment.strip()
        if ":" in segment:
            name, first = segment.split(":", 1)
            groups.append([name.strip(), first.strip()])
        elif groups:
            groups[-1].append(segment)
        else:
            raise AttackError(f"attack token {segment!r} has no parameters")
    specs = []
    for name, *args in groups:
        if name not in _KINDS:
            raise AttackError(f"unknown attack token {name!r}")
        try:
            values = tuple(float(a) for a in args)
        except ValueError as exc:
            raise AttackError(f"bad parameters for {name!r}: {args}") from exc
        specs.append(AttackSpec(name, values))
    return tuple(specs)


# ---------------------------------------------------------------------------
# image kinds
# ---------------------------------------------------------------------------

def _per_image(media_array: np.ndarray, fn) -> np.ndarray:
    if media_array.ndim == 4:
        return np.stack([fn(frame) for frame in media_array])
    return fn(media_array)


def _rotate(arr: np.ndarray, theta: float) -> np.ndarray:
    return ndimage.rotate(arr, theta, axes=(-2, -1), reshape=False, order=1, mode="constant", cval=0.0)


def _crop_scale(img: np.ndarray, ratio: float) -> np.ndarray:
    h, w = img.shape[-2], img.shape[-1]
    ch = max(1, round(h * ratio))
    cw = max(1, round(w * ratio))
    top = (h - ch) // 2
    left = (w - cw) // 2
    cropped = img[..., top : top + ch, left : left + cw]
    return bilinear_resize(cropped, h, w)


def _blur(arr: np.ndarray, k: int, sigma: float) -> np.ndarray:
    radius = k // 2
    taps = np.exp(-0.5 * ((np.arange(k) - radius) / sigma) ** 2)
    taps /= taps.sum()
    out = ndimage.correlate1d(arr, taps, axis=-1, mode="nearest")
    return ndimage.correlate1d(out, taps, axis=-2, mode="nearest")


_RGB_TO_YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC_TO_RGB = np.linalg.inv(_RGB_TO_YCC)


def _dct_matrix() -> np.ndarray:
    n = np.arange(8)
    d = np.sqrt(2.0 / 8.0) * np.cos((2 * n[None, :] + 1) * n[:, None] * np.pi / 16.0)
    d[0] /= np.sqrt(2.0)
    return d


_DCT = _dct_matrix()


def jpeg_tables(quality: float) -> tuple[np.ndarray, np.ndarray]:
    """Annex-K tables scaled by the libjpeg quality rule, floored at 1."""
    q = float(quality)
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    luma = np.clip(np.floor((LUMA_QT * scale + 50.0) / 100.0), 1, 255)
    chroma = np.clip(np.floor((CHROMA_QT * scale + 50.0) / 100.0), 1, 255)
    return luma, chroma


def _quantize_plane(plane: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    blocks = plane.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    coefs = _DCT @ (blocks - 128.0) @ _DCT.T
    coefs = np.round(coefs / table) * table
    back = _DCT.T @ coefs @ _DCT + 128.0
    return back.reshape(h // 8, w // 8, 8, 8).transpose(0, 2, 1, 3).reshape(h, w)


def _jpeg(img: np.ndarray, quality: float) -> np.ndarray:

    if img.shape[0] != 3:
        raise AttackError(f"jpeg needs 3-channel pixel media, got {img.shape[0]} channels")
    h, w = img.shape[-2], img.shape[-1]
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    padded = np.pad(img, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    ycc = np.einsum("rc,chw->rhw", _RGB_TO_YCC, padded)
    ycc[1:] += 128.0
    luma, chroma = jpeg_tables(quality)
    out = np.empty_like(ycc)
    out[0] = _quantize_plane(ycc[0], luma)
    out[1] = _quantize_plane(ycc[1], chroma)
    out[2] = _quantize_plane(ycc[2], chroma)
    out[1:] -= 128.0
    rgb = np.einsum("rc,chw->rhw", _YCC_TO_RGB, out)
    # codecs emit integer pixels; rounding here keeps q=100 a pure rounding loss
    return np.clip(np.round(rgb[:, :h, :w]), 0.0, 255.0)


_LUMA_W = np.array([0.299, 0.587, 0.114])


def _jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    if img.shape[0] != 3:
        raise AttackError("color jitter needs 3-channel pixel media")
    mean_luma = float(np.einsum("c,chw->hw", _LUMA_W, img).mean())
    adjusted = ((img - mean_luma) * contrast + mean_luma) * brightness
    luma = np.einsum("c,chw->hw", _LUMA_W, adjusted)
    out = luma[None, :, :] + saturation * (adjusted - luma[None, :, :])
    return np.clip(out, 0.0, 255.0)


# ---------------------------------------------------------------------------
# video kinds
# ---------------------------------------------------------------------------

def _frame_average(video: np.ndarray, window: int) -> np.ndarray:
    radius = window // 2
    t = video.shape[0]
    out = np.empty_like(video)
    for i in range(t):
        lo = max(0, i - radius)
        hi = min(t, i + radius + 1)
        out[i] = video[lo:hi].mean(axis=0)
    return out


def _frame_swap(video: np.ndarray, spec: AttackSpec, rng: Optional[SeededRng]) -> np.ndarray:
    t = video.shape[0]
    out = video.copy()
    if spec.pairs is not None:
        pairs = spec.pairs
    else:
        count = int(spec.args[0])
        if 2 * count > t:
            raise AttackError(f"cannot swap {count} disjoint pairs among {t} frames")
        if rng is None:
            raise AttackError("seeded frame swap requires an rng")
        order = np.argsort(rng.uniforms(t))
        pairs = tuple((int(order[2 * i]), int(order[2 * i + 1])) for i in range(count))
    for a, b in pairs:
        if not (0 <= a < t and 0 <= b < t):
            raise AttackError(f"swap pair ({a}, {b}) outside {t} frames")
        out[[a, b]] = out[[b, a]]
    return out


def _mpeg_proxy(video: np.ndarray, quality: float, keyint: int) -> np.ndarray:
    out = np.empty_like(video)
    prev = None
    for t in range(video.shape[0]):
        if t % keyint == 0 or prev is None:
            decoded = _jpeg(video[t], quality)
        else:
            delta = video[t] - prev
            coded = _jpeg(np.clip(delta / 2.0 + 128.0, 0.0, 255.0), quality)
            decoded = np.clip(prev + (coded - 128.0) * 2.0, 0.0, 255.0)
        out[t] = decoded
        prev = decoded
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def apply_attack(spec: AttackSpec, media: Media, rng: Optional[SeededRng] = None) -> Media:
    """Apply one attack; shape is always preserved."""
    arr = media.array
    kind = spec.kind
    if kind in ("favg", "fswap", "mpeg") and not media.is_video:
        raise AttackError(f"{kind} requires video media")
    if kind in ("jpeg", "jitter", "mpeg") and not media.pixel:
        raise AttackError(f"{kind} requires pixel media in [0, 255]")

    if kind == "rot":
        out = _per_image(arr, lambda img: _rotate(img, spec.args[0]))
    elif kind == "crop":
        out = _per_image(arr, lambda img: _crop_scale(img, spec.args[0]))
    elif kind == "noise":
        if rng is None:
            raise AttackError("seeded noise attack requires an rng")
        noise = rng.gaussians(arr.size).reshape(arr.shape) * spec.args[0]
        out = arr + noise
        if media.pixel:
            out = np.clip(out, 0.0, 255.0)
    elif kind == "blur":
        out = _per_image(arr, lambda img: _blur(img, int(spec.args[0]), spec.args[1]))
        if media.pixel:
            out = np.clip(out, 0.0, 255.0)
    elif kind == "jpeg":
        out = _per_image(arr, lambda img: _jpeg(img, spec.args[0]))
    elif kind == "jitter":
        out = _per_image(arr, lambda img: _jitter(img, *spec.args))
    elif kind == "favg":
        out = _frame_average(arr, int(spec.args[0]))
    elif kind == "fswap":
        out = _frame_swap(arr, spec, rng)
    elif kind == "mpeg":
        out = _mpeg_proxy(arr, spec.args[0], int(spec.args[1]))
    else:  # pragma: no cover - guarded by AttackSpec
        raise AttackError(f"unhandled kind {kind}")
    if out.shape != arr.shape:
        raise AssertionError("attack changed media shape")
    return Media(out, pixel=media.pixel)


def apply_chain(specs, media: Media, key: bytes, call_id=0) -> Media:
    """Apply an ordered attack chain with per-attack derived noise streams."""
    from .tensor import derive_key

    for i, spec in enumerate(specs):
        if isinstance(call_id, bytes):
            rng = SeededRng(derive_key(key, "attack", i, spec.token(), call_id))
        else:
            rng = SeededRng(derive_key(key, "attack", i, spec.token()), int(call_id))
        media = apply_attack(spec, media, rng)
    return media
