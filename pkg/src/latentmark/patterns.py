"""Pattern-based watermarks: spectral ring patterns written into initial noise.

Four methods share the same skeleton -- substitute a predefined pattern into
the centered spectrum of one or more latent channels, then detect by pattern
distance after inversion:

* single ring key, one carrier channel, L1 verification
* ring key set over two carriers with multi-key identification
* mid-trajectory blended injection at reduced strength
* grouped noise sets with ring codes as group identifiers and
  nearest-noise matching as the second stage
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import (
    FourierMask,
    SeededRng,
    ShapeError,
    fft2_centered,
    gaussian_latent,
    ifft2_centered,
    ring_index,
    ring_mask,
    symmetrize_spectrum,
)

IMAG_RESIDUE_TOL = 1e-9

__all__ = [
    "RingKey",
    "RingKeySet",
    "GroupedNoiseKey",
    "PatternDetectionResult",
    "tr_generate_key",
    "tr_embed",
    "tr_detect",
    "ri_generate_keyset",
    "ri_embed",
    "ri_identify",
    "robin_embed",
    "robin_invert_midstate",
    "robin_detect",
    "wind_generate_key",
    "wind_embed",
    "wind_detect",
]


@dataclass(frozen=True)
class PatternDetectionResult:
    score: float
    threshold: float
    higher_is_watermarked: bool
    is_watermarked: bool
    matched_key_id: Optional[int] = None


@dataclass(frozen=True)
class RingKey:
    """Per-ring real constants over a concentric ring mask of one channel.

    Ring values are real so the patterned spectrum stays conjugate-symmetric
    (each ring is its own 180-degree mirror), which keeps embedded latents
    exactly real.
    """

    shape: tuple[int, int]
    radii: tuple[int, ...]
    values: tuple[float, ...]
    carrier_channel: int

    def __post_init__(self):
        if len(self.radii) != len(self.values):
            raise ValueError("one value per ring required")

    @property
    def mask(self) -> FourierMask:
        if not self.radii:
            return FourierMask("ring-set", self.shape, np.zeros(self.shape, dtype=bool))
        return ring_mask(self.shape, self.radii)

    def pattern_plane(self) -> np.ndarray:
        """Complex (H, W) plane holding the pattern on masked cells, 0 elsewhere."""
        plane = np.zeros(self.shape, dtype=complex)
        idx = ring_index(self.shape)
        for r, v in zip(self.radii, self.values):
            plane[idx == r] = v
        return plane

    def to_json(self) -> dict:
        return {
            "kind": "ring",
            "shape": list(self.shape),
            "radii": list(self.radii),
            "values": [[float(v), 0.0] for v in self.values],
            "carrier_channel": self.carrier_channel,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RingKey":
        return cls(
            shape=tuple(obj["shape"]),
            radii=tuple(int(r) for r in obj["radii"]),
            values=tuple(float(v[0]) for v in obj["values"]),
            carrier_channel=int(obj["carrier_channel"]),
        )


def _substitute(spectrum: np.ndarray, key: RingKey) -> np.ndarray:
    out = spectrum.copy()
    cells = key.mask.cells
    out[cells] = key.pattern_plane()[cells]
    return out


def _embed_channel(plane: np.ndarray, key: RingKey) -> np.ndarray:
    spec = _substitute(fft2_centered(plane), key)
    spec = symmetrize_spectrum(spec)
    back = ifft2_centered(spec)
    resid = float(np.max(np.abs(back.imag))) if back.size else 0.0
    if resid > IMAG_RESIDUE_TOL:
        raise AssertionError(f"imaginary residue {resid} exceeds tolerance")
    return back.real


def _ring_l1(plane: np.ndarray, key: RingKey) -> float:
    cells = key.mask.cells
    if not cells.any():
        return 0.0
    spec = fft2_centered(plane)
    return float(np.mean(np.abs(spec[cells] - key.pattern_plane()[cells])))


# ---------------------------------------------------------------------------
# single ring key
# ---------------------------------------------------------------------------

def tr_generate_key(rng: SeededRng, shape: tuple[int, int, int], rings: int, carrier_channel: int) -> RingKey:
    """Ring constants from a ring-averaged spectrum of fresh Gaussian noise.

    Averaging over a full ring of a real signal's spectrum is real up to
    rounding (cells pair conjugate within the ring); the real part is kept so
    the stored pattern is exactly self-conjugate.
    """
    c, h, w = shape
    if not 0 <= carrier_channel < c:
        raise ValueError(f"carrier channel {carrier_channel} outside {c} channels")
    if rings < 0 or rings > min(h, w) // 2 - 1:
        raise ValueError(f"ring count {rings} out of range for ({h}, {w})")
    if rings == 0:
        return RingKey((h, w), (), (), carrier_channel)
    reference = rng.gaussians(h * w).reshape(h, w)
    spec = fft2_centered(reference)
    idx = ring_index((h, w))
    values = tuple(float(np.mean(spec[idx == r]).real) for r in range(1, rings + 1))
    return RingKey((h, w), tuple(range(1, rings + 1)), values, carrier_channel)


def tr_embed(key: RingKey, latent: np.ndarray) -> np.ndarray:
    """Substitute the key pattern into the carrier channel's spectrum."""
    if latent.shape[-2:] != key.shape:
        raise ShapeError(f"latent plane {latent.shape[-2:]} != key shape {key.shape}")
    out = np.array(latent, dtype=np.float64, copy=True)
    out[key.carrier_channel] = _embed_channel(out[key.carrier_channel], key)
    return out


def tr_detect(key: RingKey, inverted: np.ndarray, tau: float) -> PatternDetectionResult:
    """Mean complex-modulus deviation from the key pattern over masked cells."""
    if inverted.shape[-2:] != key.shape:
        raise ShapeError(f"latent plane {inverted.shape[-2:]} != key shape {key.shape}")
    score = _ring_l1(inverted[key.carrier_channel], key)
    return PatternDetectionResult(score, tau, False, score < tau)


# ---------------------------------------------------------------------------
# multi-key ring set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingKeySet:
    """N ring keys of shared geometry over two carrier channels.

    Per-ring values are +-amplitude selected by each key's index bits, so any
    two keys differ on at least one full ring and the pairwise mean-L1
    separation is bounded below by construction.
    """

    shape: tuple[int, int]
    radii: tuple[int, ...]
    carrier_channels: tuple[int, int]
    amplitude: float
    codes: np.ndarray  # (N, n_rings) in {-1, +1}
    delta_min: float

    @property
    def count(self) -> int:
        return len(self.codes)

    def key(self, key_id: int) -> RingKey:
        values = tuple(float(v) for v in self.codes[key_id] * self.amplitude)
        return RingKey(self.shape, self.radii, values, self.carrier_channels[0])

    def to_json(self) -> dict:
        return {
            "kind": "ring-set",
            "shape": list(self.shape),
            "radii": list(self.radii),
            "carrier_channels": list(self.carrier_channels),
            "amplitude": self.amplitude,
            "codes": self.codes.astype(int).tolist(),
            "delta_min": self.delta_min,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RingKeySet":
        return cls(
            shape=tuple(obj["shape"]),
            radii=tuple(int(r) for r in obj["radii"]),
            carrier_channels=tuple(obj["carrier_channels"]),
            amplitude=float(obj["amplitude"]),
            codes=np.asarray(obj["codes"], dtype=np.float64),
            delta_min=float(obj["delta_min"]),
        )


def ri_generate_keyset(
    shape: tuple[int, int, int],
    rings: int,
    carrier_channels: tuple[int, int],
    count: int,
    amplitude: float = 1.5,
) -> RingKeySet:
    c, h, w = shape
    for ch in carrier_channels:
        if not 0 <= ch < c:
            raise ValueError(f"carrier channel {ch} outside {c} channels")
    if count < 1:
        raise ValueError("keyset must hold at least one key")
    if count > 2**rings:
        raise ValueError(f"{rings} rings can distinguish at most {2**rings} keys")
    codes = np.array(
        [[1.0 if (k >> j) & 1 else -1.0 for j in range(rings)] for k in range(count)]
    )
    radii = tuple(range(1, rings + 1))
    idx = ring_index((h, w))
    cells_per_ring = np.array([(idx == r).sum() for r in radii], dtype=float)
    total = cells_per_ring.sum()
    if count > 1:
        seps = [
            2.0 * amplitude * float(cells_per_ring[np.nonzero(codes[a] != codes[b])[0]].sum()) / total
            for a in range(count)
            for b in range(a + 1, count)
        ]
        delta_min = min(seps)
    else:
        delta_min = 2.0 * amplitude  # degenerate single-key set
    if delta_min <= 0:
        raise ValueError("key codes collide: zero pattern separation")
    return RingKeySet((h, w), radii, tuple(carrier_channels), amplitude, codes, delta_min)


def ri_embed(keyset: RingKeySet, key_id: int, latent: np.ndarray) -> np.ndarray:
    if not 0 <= key_id < keyset.count:
        raise ValueError(f"key id {key_id} outside keyset of {keyset.count}")
    out = np.array(latent, dtype=np.float64, copy=True)
    base = keyset.key(key_id)
    for ch in keyset.carrier_channels:
        key = RingKey(base.shape, base.radii, base.values, ch)
        out[ch] = _embed_channel(out[ch], key)
    return out


def ri_identify(keyset: RingKeySet, inverted: np.ndarray, tau: float) -> PatternDetectionResult:
    """Argmin over keys of the per-channel-summed L1 distance."""
    if keyset.count == 0:
        raise ValueError("empty keyset")
    specs = [fft2_centered(inverted[ch]) for ch in keyset.carrier_channels]
    idx = ring_index(keyset.shape)
    scores = np.zeros(keyset.count)
    cells = ring_mask(keyset.shape, keyset.radii).cells
    ring_of_cell = idx[cells]
    for k in range(keyset.count):
        per_cell = np.zeros(cells.sum(), dtype=float)
        values = keyset.codes[k] * keyset.amplitude
        value_of_cell = values[ring_of_cell - 1]
        total = 0.0
        for spec in specs:
            total += float(np.mean(np.abs(spec[cells] - value_of_cell)))
        scores[k] = total
    best = int(np.argmin(scores))
    score = float(scores[best])
    return PatternDetectionResult(score, tau, False, score < tau, matched_key_id=best)


# ---------------------------------------------------------------------------
# mid-trajectory injection
# ---------------------------------------------------------------------------

def _blend_modifier(key: RingKey, strength: float):
    def modifier(state: np.ndarray) -> np.ndarray:
        out = np.array(state, dtype=np.float64, copy=True)
        if strength == 0.0:
            return out
        spec = fft2_centered(out[key.carrier_channel])
        cells = key.mask.cells
        spec[cells] = (1.0 - strength) * spec[cells] + strength * key.pattern_plane()[cells]
        spec = symmetrize_spectrum(spec)
        out[key.carrier_channel] = ifft2_centered(spec).real
        return out

    return modifier


def robin_inject_step(channel) -> int:
    return channel.spec.steps // 2


def robin_embed(key: RingKey, latent: np.ndarray, channel, strength: float):
    """Inject the blended pattern at the trajectory midpoint; returns Media."""
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must lie in [0, 1]")
    return channel.inject_at(latent, robin_inject_step(channel), _blend_modifier(key, strength))


def robin_invert_midstate(channel, media, call_id=0) -> np.ndarray:
    """Invert media and walk the estimate back to the injection step."""
    inverted = channel.invert(media, call_id)
    return channel.trajectory(inverted)[robin_inject_step(channel)]


def robin_detect(key: RingKey, inverted_midstate: np.ndarray, tau: float) -> PatternDetectionResult:
    return tr_detect(key, inverted_midstate, tau)


# ---------------------------------------------------------------------------
# grouped noise sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupedNoiseKey:
    """N reusable initial noises split into G groups with ring-code identifiers.

    The embedded form of every noise (group code substituted into the carrier
    spectrum) is cached so detection's nearest-noise stage is a single matrix
    product.
    """

    seed_key: bytes
    shape: tuple[int, int, int]
    noise_count: int
    group_count: int
    radii: tuple[int, ...]
    carrier_channel: int
    amplitude: float
    group_codes: np.ndarray  # (G, n_rings) in {-1, +1}
    embedded: np.ndarray  # (N, C*H*W) cached watermarked noises

    def group_of(self, seed_index: int) -> int:
        bounds = np.array_split(np.arange(self.noise_count), self.group_count)
        for g, members in enumerate(bounds):
            if seed_index in members:
                return g
        raise ValueError(f"seed index {seed_index} out of range")

    def group_members(self, group: int) -> np.ndarray:
        return np.array_split(np.arange(self.noise_count), self.group_count)[group]

    def group_key(self, group: int) -> RingKey:
        values = tuple(float(v) for v in self.group_codes[group] * self.amplitude)
        return RingKey(self.shape[1:], self.radii, values, self.carrier_channel)

    def to_json(self) -> dict:
        return {
            "kind": "grouped-noise",
            "seed_key": self.seed_key.hex(),
            "shape": list(self.shape),
            "noise_count": self.noise_count,
            "group_count": self.group_count,
            "radii": list(self.radii),
            "carrier_channel": self.carrier_channel,
            "amplitude": self.amplitude,
            "group_codes": self.group_codes.astype(int).tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroupedNoiseKey":
        return wind_generate_key(
            seed_key=bytes.fromhex(obj["seed_key"]),
            shape=tuple(obj["shape"]),
            noise_count=int(obj["noise_count"]),
            group_count=int(obj["group_count"]),
            rings=len(obj["radii"]),
            carrier_channel=int(obj["carrier_channel"]),
            amplitude=float(obj["amplitude"]),
        )


def wind_generate_key(
    seed_key: bytes,
    shape: tuple[int, int, int],
    noise_count: int,
    group_count: int,
    rings: int,
    carrier_channel: int,
    amplitude: float = 1.5,
) -> GroupedNoiseKey:
    c, h, w = shape
    if not 0 < group_count <= noise_count:
        raise ValueError("need 0 < groups <= noises")
    if group_count > 2**rings:
        raise ValueError(f"{rings} rings can distinguish at most {2**rings} groups")
    if not 0 <= carrier_channel < c:
        raise ValueError(f"carrier channel {carrier_channel} outside {c} channels")
    codes = np.array(
        [[1.0 if (g >> j) & 1 else -1.0 for j in range(rings)] for g in range(group_count)]
    )
    radii = tuple(range(1, rings + 1))
    groups = np.array_split(np.arange(noise_count), group_count)
    embedded = np.empty((noise_count, c * h * w))
    for g, members in enumerate(groups):
        key = RingKey((h, w), radii, tuple(codes[g] * amplitude), carrier_channel)
        for i in members:
            noise = gaussian_latent(SeededRng(seed_key, int(i)), shape)
            embedded[i] = tr_embed(key, noise).ravel()
    return GroupedNoiseKey(
        seed_key=seed_key,
        shape=shape,
        noise_count=noise_count,
        group_count=group_count,
        radii=radii,
        carrier_channel=carrier_channel,
        amplitude=amplitude,
        group_codes=codes,
        embedded=embedded,
    )


def wind_embed(key: GroupedNoiseKey, seed_index: int) -> np.ndarray:
    if not 0 <= seed_index < key.noise_count:
        raise ValueError(f"seed index {seed_index} outside noise set of {key.noise_count}")
    return key.embedded[seed_index].reshape(key.shape).copy()


def wind_detect(key: GroupedNoiseKey, inverted: np.ndarray, tau: float) -> PatternDetectionResult:
    """Two-stage match: ring-code correlation picks the group, cosine the seed."""
    if inverted.shape != key.shape:
        raise ShapeError(f"latent shape {inverted.shape} != key shape {key.shape}")
    spec = fft2_centered(inverted[key.carrier_channel])
    idx = ring_index(key.shape[1:])
    cells = ring_mask(key.shape[1:], key.radii).cells
    ring_of_cell = idx[cells] - 1
    observed = spec[cells].real
    corr = np.array(
        [float(observed @ (code[ring_of_cell] * key.amplitude)) for code in key.group_codes]
    )
    group = int(np.argmax(corr))
    members = key.group_members(group)
    flat = inverted.ravel()
    flat_norm = float(np.linalg.norm(flat))
    if flat_norm == 0.0:
        return PatternDetectionResult(0.0, tau, True, False, matched_key_id=int(members[0]))
    candidates = key.embedded[members]
    sims = candidates @ flat / (np.linalg.norm(candidates, axis=1) * flat_norm)
    best = int(np.argmax(sims))
    score = float(sims[best])
    return PatternDetectionResult(score, tau, True, score > tau, matched_key_id=int(members[best]))
