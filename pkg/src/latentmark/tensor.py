"""Deterministic tensor, spectral and sampling primitives shared by every algorithm.

Latents are plain float64 numpy arrays shaped (C, H, W) for images and
(T, C, H, W) for video, with H and W powers of two.  All randomness flows
through :class:`SeededRng`, a counter-based keyed generator, so any value in
the pipeline is addressable by (key, stream id) with no shared mutable state.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

BLOB_MAGIC = b"LMK1"
_DTYPE_F32 = 0

__all__ = [
    "SeededRng",
    "derive_key",
    "fft2_centered",
    "ifft2_centered",
    "symmetrize_spectrum",
    "conjugate_mirror",
    "circle_mask",
    "ring_mask",
    "gaussian_cdf",
    "gaussian_ppf",
    "gaussian_latent",
    "validate_latent_shape",
    "write_blob",
    "read_blob",
    "ShapeError",
]


class ShapeError(ValueError):
    """Raised when an array does not meet a documented shape contract."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def validate_latent_shape(shape: tuple[int, ...]) -> None:
    """Check a (C,H,W) or (T,C,H,W) latent shape: positive dims, pow2 H and W."""
    if len(shape) not in (3, 4):
        raise ShapeError(f"latent must be (C,H,W) or (T,C,H,W), got {shape}")
    if any(int(d) <= 0 for d in shape):
        raise ShapeError(f"latent dims must be positive, got {shape}")
    h, w = shape[-2], shape[-1]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"H and W must be powers of two, got ({h}, {w})")


# ---------------------------------------------------------------------------
# keyed counter-based randomness
# ---------------------------------------------------------------------------

def derive_key(key: bytes, *labels) -> bytes:
    """Derive a 32-byte subkey from `key` and an ordered list of labels.

    Labels may be str, int or bytes.  Each derivation step is a keyed
    BLAKE2b hash, so subkeys are unlinkable without the parent key.
    """
    if len(key) != 32:
        raise ValueError(f"key must be 32 bytes, got {len(key)}")
    out = key
    for label in labels:
        if isinstance(label, str):
            data = b"s" + label.encode("utf-8")
        elif isinstance(label, (int, np.integer)):
            data = b"i" + struct.pack("<q", int(label))
        elif isinstance(label, bytes):
            data = b"b" + label
        else:
            raise TypeError(f"unsupported label type {type(label)!r}")
        out = hashlib.blake2b(data, key=out, digest_size=32).digest()
    return out


class SeededRng:
    """Counter-based keyed random stream.

    The (key, stream_id) pair fully determines the scalar stream: the pair is
    hashed into a Philox-4x64 key and draws are built from the raw counter
    output, so identical inputs reproduce bit-identically across platforms,
    runs and processes.  Instances are cheap; build one per (purpose, sample)
    rather than sharing a cursor between threads.
    """

    def __init__(self, key: bytes, stream_id: int = 0):
        if len(key) != 32:
            raise ValueError(f"key must be 32 bytes, got {len(key)}")
        self.key = key
        self.stream_id = int(stream_id)
        seed = hashlib.blake2b(
            struct.pack("<q", self.stream_id), key=key, digest_size=16
        ).digest()
        philox_key = np.frombuffer(seed, dtype="<u8")
        self._bitgen = np.random.Philox(key=philox_key)

    def _raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n))

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on (0, 1), never exactly 0 or 1."""
        raw = self._raw(n) >> np.uint64(11)
        return (raw.astype(np.float64) + 0.5) * (2.0 ** -53)

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normal doubles via the inverse CDF of uniforms."""
        return ndtri(self.uniforms(n))

    def bits(self, n: int) -> np.ndarray:
        """n uniform bits as uint8 {0,1}."""
        return (self._raw(n) & np.uint64(1)).astype(np.uint8)

    def signs(self, n: int) -> np.ndarray:
        """n uniform signs as float64 {-1.0, +1.0}."""
        return self.bits(n).astype(np.float64) * 2.0 - 1.0

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on [0, bound).  Modulo bias < 2**-32 for bound < 2**32."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self._raw(n) % np.uint64(bound)).astype(np.int64)

    def child(self, *labels) -> "SeededRng":
        """Fresh stream under a derived key; stream_id resets to 0."""
        return SeededRng(derive_key(self.key, self.stream_id, *labels))


def gaussian_latent(rng: SeededRng, shape: tuple[int, ...]) -> np.ndarray:
    """i.i.d. standard normal latent of the given (C,H,W) / (T,C,H,W) shape."""
    validate_latent_shape(tuple(shape))
    n = int(np.prod(shape))
    return rng.gaussians(n).reshape(shape)


# ---------------------------------------------------------------------------
# centered unitary FFT
# ---------------------------------------------------------------------------

def fft2_centered(plane: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT with the zero frequency shifted to (H/2, W/2).

    Operates over the last two axes, which must be powers of two.
    """
    h, w = plane.shape[-2], plane.shape[-1]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"fft2_centered needs power-of-two dims, got ({h}, {w})")
    return np.fft.fftshift(np.fft.fft2(plane, norm="ortho"), axes=(-2, -1))


def ifft2_centered(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`; returns the complex plane."""
    h, w = spectrum.shape[-2], spectrum.shape[-1]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ShapeError(f"ifft2_centered needs power-of-two dims, got ({h}, {w})")
    return np.fft.ifft2(np.fft.ifftshift(spectrum, axes=(-2, -1)), norm="ortho")


def conjugate_mirror(spectrum: np.ndarray) -> np.ndarray:
    """Value at each cell's 180-degree partner around the DC bin, conjugated.

    A centered spectrum X corresponds to a real signal iff
    X == conjugate_mirror(X).
    """
    flipped = spectrum[..., ::-1, ::-1]
    return np.conj(np.roll(flipped, shift=(1, 1), axis=(-2, -1)))


def symmetrize_spectrum(spectrum: np.ndarray) -> np.ndarray:
    """Project a centered spectrum onto the conjugate-symmetric subspace."""
    return 0.5 * (spectrum + conjugate_mirror(spectrum))


# ---------------------------------------------------------------------------
# Fourier masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FourierMask:
    """Boolean membership over an (H, W) centered spectrum."""

    kind: str
    shape: tuple[int, int]
    cells: np.ndarray  # bool (H, W)

    def __post_init__(self):
        if self.cells.shape != self.shape:
            raise ShapeError("mask cells do not match declared shape")

    @property
    def count(self) -> int:
        return int(self.cells.sum())


def _center_distance(shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    cy, cx = h // 2, w // 2
    yy, xx = np.ogrid[:h, :w]
    return np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)


def circle_mask(shape: tuple[int, int], r: float) -> FourierMask:
    """Cells strictly closer than r to the spectral center."""
    h, w = shape
    if not 0 < r <= min(h, w) / 2:
        raise ValueError(f"radius {r} out of range for shape {shape}")
    return FourierMask("circle", (h, w), _center_distance(shape) < r)


def ring_mask(shape: tuple[int, int], radii) -> FourierMask:
    """Cells whose distance to center rounds to one of the listed integer radii."""
    h, w = shape
    radii = [int(r) for r in radii]
    for r in radii:
        if not 0 < r <= min(h, w) // 2:
            raise ValueError(f"ring radius {r} out of range for shape {shape}")
    rounded = np.round(_center_distance(shape)).astype(int)
    cells = np.isin(rounded, radii)
    return FourierMask("ring-set", (h, w), cells)


def ring_index(shape: tuple[int, int]) -> np.ndarray:
    """Integer rounded distance-to-center per cell (the ring each cell belongs to)."""
    return np.round(_center_distance(shape)).astype(int)


# ---------------------------------------------------------------------------
# normal distribution helpers
# ---------------------------------------------------------------------------

def gaussian_cdf(x):
    """Standard normal CDF."""
    return ndtr(x)


def gaussian_ppf(p):
    """Standard normal inverse CDF; p must lie strictly inside (0, 1)."""
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("gaussian_ppf requires p in the open interval (0, 1)")
    out = ndtri(p_arr)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# blob serialization: 16-byte header + u32 dims + little-endian f32 payload
# ---------------------------------------------------------------------------

def write_blob(array: np.ndarray) -> bytes:
    """Serialize a real array as magic/rank/dtype header, u32 dims, f32 data."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    rank = arr.ndim
    if rank < 1 or rank > 255:
        raise ShapeError(f"unsupported rank {rank}")
    header = BLOB_MAGIC + struct.pack("<BB", rank, _DTYPE_F32)
    header = header.ljust(16, b"\x00")
    dims = struct.pack(f"<{rank}I", *arr.shape)
    return header + dims + arr.tobytes()


def read_blob(blob: bytes) -> np.ndarray:
    """Parse a blob produced by :func:`write_blob`; returns float64."""
    if len(blob) < 16 or blob[:4] != BLOB_MAGIC:
        raise ValueError("not a latent/media blob: bad magic")
    rank, dtype_tag = struct.unpack_from("<BB", blob, 4)
    if dtype_tag != _DTYPE_F32:
        raise ValueError(f"unsupported dtype tag {dtype_tag}")
    dims_end = 16 + 4 * rank
    if len(blob) < dims_end:
        raise ValueError("truncated blob: missing dims")
    shape = struct.unpack_from(f"<{rank}I", blob, 16)
    count = int(np.prod(shape))
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise ValueError(f"blob payload size mismatch: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    return data.astype(np.float64).reshape(shape)
