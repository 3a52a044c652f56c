"""Mechanism visualization: latent heatmaps, spectra, bit grids and media
thumbnails arranged in panel grids.

Panel methods are looked up by name (``draw_pattern_fft``,
``draw_watermark_bits``, ...) so CLI invocations map directly onto grids.
Rendering is byte-deterministic: fixed figure geometry, fixed dpi, no
timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .channel import Media
from .tensor import fft2_centered

__all__ = ["VisualizationData", "PanelGrid", "collect_visualization_data", "render_panels", "PANEL_METHODS"]


@dataclass
class VisualizationData:
    """Per-algorithm bundle of intermediates; only meaningful fields are set."""

    algorithm: str
    original_latent: Optional[np.ndarray] = None
    watermarked_latent: Optional[np.ndarray] = None
    inverted_latent: Optional[np.ndarray] = None
    key_pattern: Optional[np.ndarray] = None  # complex (H, W) spectral pattern
    recovered_pattern: Optional[np.ndarray] = None
    watermark_bits: Optional[np.ndarray] = None
    reconstructed_bits: Optional[np.ndarray] = None
    codeword: Optional[np.ndarray] = None
    recovered_codeword: Optional[np.ndarray] = None
    embedding_vector: Optional[np.ndarray] = None
    patch_similarities: Optional[np.ndarray] = None
    media: Optional[Media] = None
    carrier_channels: tuple[int, ...] = ()


@dataclass(frozen=True)
class PanelGrid:
    rows: int
    cols: int
    methods: tuple[str, ...]
    method_kwargs: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.rows * self.cols < len(self.methods):
            raise ValueError(
                f"grid {self.rows}x{self.cols} cannot hold {len(self.methods)} panels"
            )
        if self.method_kwargs and len(self.method_kwargs) != len(self.methods):
            raise ValueError("method_kwargs must match methods one-to-one")
        unknown = [m for m in self.methods if m not in PANEL_METHODS]
        if unknown:
            raise ValueError(f"unknown panel method(s): {unknown}")


def _need(data: VisualizationData, name: str, method: str):
    value = getattr(data, name)
    if value is None:
        raise ValueError(
            f"visualization data for {data.algorithm} has no {name!r}; panel {method!r} unavailable"
        )
    return value


def _frame(latent: np.ndarray, channel: int) -> np.ndarray:
    plane = latent[0] if latent.ndim == 4 else latent
    return plane[channel]


def _heat_latent(ax, plane: np.ndarray):
    lim = float(np.max(np.abs(plane))) or 1.0
    ax.imshow(plane, cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")


def _heat_spectrum(ax, spectrum: np.ndarray):
    ax.imshow(np.log1p(np.abs(spectrum)), cmap="viridis", interpolation="nearest")


def _bit_grid(ax, bits: np.ndarray):
    side = int(np.ceil(np.sqrt(bits.size)))
    padded = np.zeros(side * side, dtype=float)
    padded[: bits.size] = bits
    ax.imshow(padded.reshape(side, side), cmap="gray", vmin=0, vmax=1, interpolation="nearest")


def _show_media(ax, media: Media, num_frames: int = 1):
    arr = media.array
    if arr.ndim == 4:
        arr = np.concatenate(list(arr[:num_frames]), axis=-1)
    if media.pixel and arr.shape[0] == 3:
        ax.imshow(np.clip(arr.transpose(1, 2, 0) / 255.0, 0, 1), interpolation="nearest")
    else:
        _heat_latent(ax, arr[0])


def _draw_pattern(ax, data, method, **kw):
    _heat_spectrum(ax, _need(data, "key_pattern", method))


def _draw_recovered_pattern(ax, data, method, **kw):
    _heat_spectrum(ax, _need(data, "recovered_pattern", method))


def _draw_heter_pattern(ax, data, method, **kw):
    inverted = _need(data, "inverted_latent", method)
    channel = kw.get("channel", data.carrier_channels[-1] if data.carrier_channels else 0)
    _heat_spectrum(ax, fft2_centered(_frame(inverted, channel)))


def _draw_latent(field_name):
    def draw(ax, data, method, **kw):
        latent = _need(data, field_name, method)
        _heat_latent(ax, _frame(latent, kw.get("channel", 0)))

    return draw


def _draw_latent_fft(field_name):
    def draw(ax, data, method, **kw):
        latent = _need(data, field_name, method)
        _heat_spectrum(ax, fft2_centered(_frame(latent, kw.get("channel", 0))))

    return draw


def _draw_bits(field_name):
    def draw(ax, data, method, **kw):
        _bit_grid(ax, _need(data, field_name, method))

    return draw


def _draw_media(ax, data, method, **kw):
    _show_media(ax, _need(data, "media", method), kw.get("num_frames", 1))


def _draw_video_frames(ax, data, method, **kw):
    _show_media(ax, _need(data, "media", method), kw.get("num_frames", 4))


def _draw_embedding(ax, data, method, **kw):
    v = _need(data, "embedding_vector", method)
    ax.hist(v, bins=32, color="#4878cf")


def _draw_patch_diff(ax, data, method, **kw):
    sims = _need(data, "patch_similarities", method)
    ax.imshow(sims, cmap="RdBu_r", vmin=-1, vmax=1, interpolation="nearest")


PANEL_METHODS = {
    "draw_pattern_fft": _draw_pattern,
    "draw_ring_pattern_fft": _draw_pattern,
    "draw_group_pattern_fft": _draw_pattern,
    "draw_inverted_pattern_fft": _draw_recovered_pattern,
    "draw_inverted_group_pattern_fft": _draw_recovered_pattern,
    "draw_heter_pattern_fft": _draw_heter_pattern,
    "draw_orig_latents": _draw_latent("original_latent"),
    "draw_orig_latents_fft": _draw_latent_fft("original_latent"),
    "draw_inverted_latents": _draw_latent("inverted_latent"),
    "draw_inverted_latents_fft": _draw_latent_fft("inverted_latent"),
    "draw_watermarked_image": _draw_media,
    "draw_watermarked_video_frames": _draw_video_frames,
    "draw_watermark_bits": _draw_bits("watermark_bits"),
    "draw_reconstructed_watermark_bits": _draw_bits("reconstructed_bits"),
    "draw_codeword": _draw_bits("codeword"),
    "draw_recovered_codeword": _draw_bits("recovered_codeword"),
    "draw_embedding_distributions": _draw_embedding,
    "draw_patch_diff": _draw_patch_diff,
}


def collect_visualization_data(system, media: Media, sample_id: int = 0) -> VisualizationData:
    """Invert and detect internally, capturing the algorithm's intermediates."""
    from . import keyed

    alg = system.algorithm
    data = VisualizationData(algorithm=alg, media=media)
    call_id = system._call_id(media)
    inverted = (
        None if alg == "ROBIN" else system.channel.invert(media, call_id)
    )
    if alg in ("TR", "ROBIN"):
        from .patterns import robin_invert_midstate

        key = system.key
        data.original_latent = system._draft_latent(sample_id)
        data.key_pattern = key.pattern_plane()
        if alg == "ROBIN":
            inverted = robin_invert_midstate(system.channel, media, call_id)
        else:
            data.watermarked_latent = system.generate_watermarked_latent(sample_id)
        data.inverted_latent = inverted
        spec = fft2_centered(inverted[key.carrier_channel])
        data.recovered_pattern = np.where(key.mask.cells, spec, 0.0)
        data.carrier_channels = (key.carrier_channel,)
    elif alg == "RI":
        keyset = system.key
        data.original_latent = system._draft_latent(sample_id)
        data.watermarked_latent = system.generate_watermarked_latent(sample_id)
        data.inverted_latent = inverted
        matched = system.detect_watermark_in_media(media, sample_id).matched_key_id or 0
        data.key_pattern = keyset.key(matched).pattern_plane()
        cells = keyset.key(matched).mask.cells
        spec = fft2_centered(inverted[keyset.carrier_channels[0]])
        data.recovered_pattern = np.where(cells, spec, 0.0)
        data.carrier_channels = tuple(keyset.carrier_channels)
    elif alg == "WIND":
        key = system.key
        result = system.detect_watermark_in_media(media, sample_id)
        group = key.group_of(result.matched_key_id or 0)
        gkey = key.group_key(group)
        data.original_latent = system.generate_watermarked_latent(sample_id)
        data.watermarked_latent = data.original_latent
        data.inverted_latent = inverted
        data.key_pattern = gkey.pattern_plane()
        spec = fft2_centered(inverted[key.carrier_channel])
        data.recovered_pattern = np.where(gkey.mask.cells, spec, 0.0)
        data.carrier_channels = (key.carrier_channel,)
    elif alg in ("GS", "VideoShield"):
        key = system.key
        data.original_latent = system.generate_watermarked_latent(sample_id)
        data.watermarked_latent = data.original_latent
        data.inverted_latent = inverted
        if alg == "GS":
            data.watermark_bits = np.asarray(key.message, dtype=np.uint8)
            native = keyed.gs_detect(key, inverted, keyed.DetectionPolicy("accuracy", 0.5), sample_id)
        else:
            data.watermark_bits = np.asarray(key.message, dtype=np.uint8)
            native = keyed.videoshield_detect(
                key, inverted, keyed.DetectionPolicy("accuracy", 0.5), sample_id=sample_id
            )
        data.reconstructed_bits = native.recovered_bits
    elif alg == "PRC":
        data.original_latent = system.generate_watermarked_latent(sample_id)
        data.watermarked_latent = data.original_latent
        data.inverted_latent = inverted
        data.codeword = (data.original_latent.ravel() >= 0).astype(np.uint8)[: 64 * 64]
        data.recovered_codeword = (inverted.ravel() >= 0).astype(np.uint8)[: 64 * 64]
    elif alg == "SEAL":
        key = system.key
        data.original_latent = system.generate_watermarked_latent(sample_id)
        data.watermarked_latent = data.original_latent
        data.inverted_latent = inverted
        data.embedding_vector = keyed.semantic_vector(media.array)
        native = keyed.seal_detect(key, inverted, media)
        ph, pw = key.patch_grid
        data.patch_similarities = native.recovered_bits.astype(float).reshape(ph, pw)
    return data


def render_panels(data: VisualizationData, grid: PanelGrid, out_path) -> None:
    """Write a deterministic PNG with one subplot per panel method."""
    fig, axes = plt.subplots(grid.rows, grid.cols, figsize=(3 * grid.cols, 3 * grid.rows))
    axes = np.atleast_1d(axes).ravel()
    kwargs_list = grid.method_kwargs or tuple({} for _ in grid.methods)
    try:
        for ax in axes:
            ax.set_axis_off()
        for ax, method, kw in zip(axes, grid.methods, kwargs_list):
            PANEL_METHODS[method](ax, data, method, **kw)
            ax.set_title(method, fontsize=8)
        fig.savefig(out_path, dpi=100, format="png", metadata={"Software": "latentmark"})
    finally:
        plt.close(fig)
