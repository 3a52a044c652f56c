"""Generation/inversion channels standing in for the diffusion model.

A channel maps an initial latent to media (``forward``) and media back to a
latent estimate (``invert``).  The identity and noise channels operate in
latent space; the toy codec renders pixel media so pixel-space attacks are
meaningful; the external bridge hands both directions to a subprocess
speaking newline-delimited JSON.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .tensor import SeededRng, ShapeError, derive_key

PIXEL_SCALE = 255.0 / 8.0  # latent range +-4 sigma mapped onto [0, 255]
PIXEL_OFFSET = 127.5

__all__ = [
    "ChannelSpec",
    "Media",
    "Channel",
    "build_channel",
    "ChannelError",
    "CapabilityError",
    "BridgeProtocolError",
    "bilinear_resize",
    "box_downsample",
]


class ChannelError(RuntimeError):
    """Channel failure (spawn, shape, protocol, timeout)."""


class CapabilityError(ChannelError):
    """The configured channel cannot perform the requested operation."""


class BridgeProtocolError(ChannelError):
    """The bridge subprocess violated the wire protocol."""


@dataclass(frozen=True)
class Media:
    """Channel output: pixel media in [0,255] or a raw latent passthrough."""

    array: np.ndarray
    pixel: bool

    @property
    def is_video(self) -> bool:
        return self.array.ndim == 4

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.array, dtype="<f8").tobytes()


@dataclass(frozen=True)
class ChannelSpec:
    kind: str  # identity | latent_noise | toy_codec | external_bridge
    sigma: float = 0.0  # latent_noise inversion noise
    upsample: int = 8  # toy_codec spatial factor
    codec_seed: int = 0  # toy_codec mixing matrix seed
    sigma_inv: float = 0.0  # toy_codec inversion noise
    command: str = ""  # external_bridge command line
    timeout_s: float = 60.0
    steps: int = 8  # trajectory length S

    def __post_init__(self):
        if self.kind not in ("identity", "latent_noise", "toy_codec", "external_bridge"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.sigma < 0 or self.sigma_inv < 0:
            raise ValueError("channel noise levels must be nonnegative")
        if self.kind == "toy_codec" and self.upsample not in (4, 8):
            raise ValueError(f"toy_codec upsample must be 4 or 8, got {self.upsample}")
        if self.steps < 2:
            raise ValueError("trajectory length must be at least 2")
        if self.kind == "external_bridge" and not self.command:
            raise ValueError("external_bridge requires a command line")

    @classmethod
    def parse(cls, obj) -> "ChannelSpec":
        if isinstance(obj, str):
            obj = {"kind": obj}
        if not isinstance(obj, dict):
            raise ValueError(f"channel spec must be a name or mapping, got {type(obj)}")
        known = {"kind", "sigma", "upsample", "codec_seed", "sigma_inv", "command", "timeout_s", "steps"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown channel fields: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "steps": self.steps}
        if self.kind == "latent_noise":
            d["sigma"] = self.sigma
        elif self.kind == "toy_codec":
            d.update(upsample=self.upsample, codec_seed=self.codec_seed, sigma_inv=self.sigma_inv)
        elif self.kind == "external_bridge":
            d.update(command=self.command, timeout_s=self.timeout_s)
        return d


# ---------------------------------------------------------------------------
# resampling primitives
# ---------------------------------------------------------------------------

def _linear_axis_weights(n_in: int, n_out: int):
    # half-pixel-center convention: src = (i + 0.5) * n_in/n_out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize over the last two axes."""
    h, w = img.shape[-2], img.shape[-1]
    lo_y, hi_y, fy = _linear_axis_weights(h, out_h)
    lo_x, hi_x, fx = _linear_axis_weights(w, out_w)
    rows = img[..., lo_y, :] * (1 - fy)[:, None] + img[..., hi_y, :] * fy[:, None]
    return rows[..., :, lo_x] * (1 - fx) + rows[..., :, hi_x] * fx


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping factor x factor blocks of the last two axes."""
    h, w = img.shape[-2], img.shape[-1]
    if h % factor or w % factor:
        raise ShapeError(f"dims ({h},{w}) not divisible by box factor {factor}")
    shaped = img.reshape(*img.shape[:-2], h // factor, factor, w // factor, factor)
    return shaped.mean(axis=(-3, -1))


def codec_matrix(seed: int) -> np.ndarray:
    """Fixed 3x4 channel-mixing matrix with orthonormal rows."""
    g = SeededRng(derive_key(bytes(32), "toy-codec-matrix"), seed).gaussians(16).reshape(4, 4)
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # sign-fix so the factorization is unique
    return q[:3].copy()


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

class Channel:
    """Forward/invert pair for one ChannelSpec; instances are immutable."""

    def __init__(self, spec: ChannelSpec, key: bytes):
        self.spec = spec
        self._key = derive_key(key, "channel", spec.kind)
        if spec.kind == "toy_codec":
            self._mix = codec_matrix(spec.codec_seed)

    # -- helpers -----------------------------------------------------------

    def _noise_rng(self, purpose: str, call_id) -> SeededRng:
        if isinstance(call_id, bytes):
            return SeededRng(derive_key(self._key, purpose, call_id))
        return SeededRng(derive_key(self._key, purpose), int(call_id))

    def _codec_forward(self, latent: np.ndarray) -> np.ndarray:
        if latent.shape[-3] != 4:
            raise ShapeError(f"toy_codec expects 4 latent channels, got {latent.shape[-3]}")
        mixed = np.einsum("rc,...chw->...rhw", self._mix, latent)
        u = self.spec.upsample
        up = bilinear_resize(mixed, mixed.shape[-2] * u, mixed.shape[-1] * u)
        return np.clip(up * PIXEL_SCALE + PIXEL_OFFSET, 0.0, 255.0)

    def _codec_invert(self, pixels: np.ndarray) -> np.ndarray:
        if pixels.shape[-3] != 3:
            raise ShapeError(f"toy_codec media must have 3 channels, got {pixels.shape[-3]}")
        y = (pixels - PIXEL_OFFSET) / PIXEL_SCALE
        down = box_downsample(y, self.spec.upsample)
        return np.einsum("rc,...rhw->...chw", self._mix, down)

    # -- public surface ----------------------------------------------------

    def forward(self, latent: np.ndarray) -> Media:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim not in (3, 4):
            raise ShapeError(f"latent must be (C,H,W) or (T,C,H,W), got {latent.shape}")
        kind = self.spec.kind
        if kind in ("identity", "latent_noise"):
            return Media(latent.copy(), pixel=False)
        if kind == "toy_codec":
            return Media(self._codec_forward(latent), pixel=True)
        return self._bridge_call("forward", latent, pixel=True)

    def invert(self, media: Media, call_id=0) -> np.ndarray:
        kind = self.spec.kind
        if kind == "identity":
            if media.pixel:
                raise ShapeError("identity channel cannot invert pixel media")
            return media.array.copy()
        if kind == "latent_noise":
            if media.pixel:
                raise ShapeError("latent_noise channel cannot invert pixel media")
            noise = self._noise_rng("invert", call_id).gaussians(media.array.size)
            return media.array + self.spec.sigma * noise.reshape(media.array.shape)
        if kind == "toy_codec":
            if not media.pixel:
                raise ShapeError("toy_codec channel expects pixel media")
            est = self._codec_invert(media.array)
            if self.spec.sigma_inv > 0:
                noise = self._noise_rng("invert", call_id).gaussians(est.size)
                est = est + self.spec.sigma_inv * noise.reshape(est.shape)
            return est
        return self._bridge_call("invert", media.array, pixel=False).array

    def clean_invert(self, media: Media) -> np.ndarray:
        """Inversion with all noise terms disabled; used at generation time."""
        kind = self.spec.kind
        if kind in ("identity", "latent_noise"):
            if media.pixel:
                raise ShapeError(f"{kind} channel cannot invert pixel media")
            return media.array.copy()
        if kind == "toy_codec":
            return self._codec_invert(media.array)
        raise CapabilityError("external_bridge channels have no local inverse")

    def latent_equivalent(self, latent: np.ndarray) -> np.ndarray:
        """Noise-free invert(forward(latent)): the endpoint of the trajectory."""
        kind = self.spec.kind
        if kind in ("identity", "latent_noise"):
            return np.asarray(latent, dtype=np.float64).copy()
        if kind == "toy_codec":
            return self._codec_invert(self._codec_forward(np.asarray(latent, dtype=np.float64)))
        raise CapabilityError("external_bridge channels do not expose trajectories")

    def trajectory(self, latent: np.ndarray) -> list[np.ndarray]:
        """S states interpolating from the latent to its latent-equivalent."""
        end = self.latent_equivalent(latent)
        start = np.asarray(latent, dtype=np.float64)
        s = self.spec.steps
        return [start + (k / (s - 1)) * (end - start) for k in range(s)]

    def inject_at(self, latent: np.ndarray, step: int, modifier) -> Media:
        """Modify one trajectory state and complete the generation.

        The state change is transported back to the initial latent, so
        injecting at step 0 is exactly embed-then-forward and an identity
        modifier reproduces the plain forward output.
        """
        states = self.trajectory(latent)
        if not 0 <= step < len(states):
            raise ValueError(f"step {step} outside trajectory of length {len(states)}")
        delta = modifier(states[step]) - states[step]
        return self.forward(np.asarray(latent, dtype=np.float64) + delta)

    # -- bridge ------------------------------------------------------------

    def _bridge(self) -> "BridgeClient":
        if not hasattr(self, "_bridge_client"):
            self._bridge_client = BridgeClient(self.spec.command, self.spec.timeout_s)
        return self._bridge_client

    def _bridge_call(self, op: str, array: np.ndarray, pixel: bool) -> Media | np.ndarray:
        out = self._bridge().call(op, array)
        if op == "forward":
            return Media(out, pixel=pixel)
        return Media(out, pixel=False)

    def close(self):
        if hasattr(self, "_bridge_client"):
            self._bridge_client.close()


def build_channel(spec: ChannelSpec, key: bytes) -> Channel:
    return Channel(spec, key)


# ---------------------------------------------------------------------------
# bridge wire protocol client (newline-delimited JSON over stdio)
# ---------------------------------------------------------------------------

class BridgeClient:
    """One subprocess, one in-flight request at a time."""

    def __init__(self, command: str, timeout_s: float = 60.0):
        self.timeout_s = timeout_s
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ChannelError(f"failed to spawn bridge {command!r}: {exc}") from exc
        self._lock = threading.Lock()
        self._next_id = 0
        hello = self._read_line()
        try:
            head = json.loads(hello)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"bad handshake line: {hello!r}") from exc
        if head.get("protocol") != "lmk-bridge" or head.get("version") != 1:
            raise BridgeProtocolError(f"unexpected handshake: {head!r}")

    def _read_line(self) -> str:
        out: list[str] = []

        def reader():
            out.append(self._proc.stdout.readline())

        t = threading.Thread(target=reader, daemon=True)
        t.start()
        t.join(self.timeout_s)
        if t.is_alive() or not out or not out[0]:
            self.close()
            raise ChannelError("bridge timed out or closed its stdout")
        return out[0]

    def call(self, op: str, array: np.ndarray) -> np.ndarray:
        with self._lock:
            self._next_id += 1
            req_id = self._next_id
            payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
            request = {
                "id": req_id,
                "op": op,
                "shape": list(array.shape),
                "data_b64": base64.b64encode(payload).decode("ascii"),
            }
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
            line = self._read_line()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"malformed response JSON: {line.strip()!r}") from exc
        if resp.get("id") != req_id:
            raise BridgeProtocolError(f"response id {resp.get('id')} does not match request {req_id}")
        if not resp.get("ok"):
            raise ChannelError(f"bridge error: {resp.get('error', 'unspecified')}")
        try:
            shape = tuple(int(d) for d in resp["shape"])
            data = base64.b64decode(resp["data_b64"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BridgeProtocolError(f"response missing fields: {line.strip()!r}") from exc
        flat = np.frombuffer(data, dtype="<f4")
        if flat.size != int(np.prod(shape)):
            raise BridgeProtocolError("response payload does not match its shape")
        return flat.astype(np.float64).reshape(shape)

    def close(self):
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
