"""Detection pipelines, success-rate calculators and quality metrics.

Scores from watermarked and null runs feed two calculators: fixed-threshold
confusion rates, and the dynamic rule that places the threshold at the
empirical null quantile admitting the largest false-positive rate at or below
a target.  Quality is measured by reference metrics (PSNR/SSIM/MSE) and
pure-math video proxies; metrics that need pretrained networks are declared
unsupported rather than approximated silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .attacks import apply_chain
from .channel import Media

__all__ = [
    "ScoreSet",
    "SuccessRateReport",
    "QualityReport",
    "SampleSet",
    "PipelineError",
    "fundamental_rates",
    "dynamic_tpr_at_fpr",
    "threshold_for_fpr",
    "mse",
    "psnr",
    "ssim",
    "video_quality_proxies",
    "run_wmdetect",
    "run_uwmdetect",
    "evaluate_detection",
    "quality_pipeline",
]

PSNR_CAP = 100.0


class PipelineError(RuntimeError):
    """A sample failed inside a pipeline; carries the failing sample id."""


@dataclass(frozen=True)
class ScoreSet:
    watermarked: tuple[float, ...]
    null: tuple[float, ...]
    higher_is_watermarked: bool

    def __post_init__(self):
        if not self.watermarked and not self.null:
            raise ValueError("empty score set")


@dataclass(frozen=True)
class SuccessRateReport:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def tnr(self) -> float:
        return self.tn / (self.fp + self.tn) if self.fp + self.tn else 0.0

    @property
    def fnr(self) -> float:
        return self.fn / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tpr

    @property
    def f1(self) -> float:
        denom = self.precision + self.recall
        return 2.0 * self.precision * self.recall / denom if denom else 0.0

    @property
    def accuracy(self) -> float:
        total = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "tpr": self.tpr,
            "fpr": self.fpr,
            "tnr": self.tnr,
            "fnr": self.fnr,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
        }


def _positives(scores, tau: float, higher_is_wm: bool) -> int:
    arr = np.asarray(scores, dtype=float)
    # tie rule: score == tau counts positive for higher-is-watermarked scores
    return int(np.sum(arr >= tau)) if higher_is_wm else int(np.sum(arr < tau))


def fundamental_rates(scores: ScoreSet, tau: float) -> SuccessRateReport:
    """Confusion rates at a fixed threshold."""
    if not scores.watermarked or not scores.null:
        raise ValueError("fundamental rates need both watermarked and null scores")
    tp = _positives(scores.watermarked, tau, scores.higher_is_watermarked)
    fp = _positives(scores.null, tau, scores.higher_is_watermarked)
    return SuccessRateReport(tau, tp, fp, len(scores.null) - fp, len(scores.watermarked) - tp)


def threshold_for_fpr(null_scores, target_fpr: float, higher_is_wm: bool) -> float:
    """Threshold from null order statistics with achieved FPR <= target.

    Candidates are the observed null scores plus a beyond-extreme sentinel;
    the feasible candidate maximizing admitted positives is returned.
    """
    if not 0.0 <= target_fpr < 1.0:
        raise ValueError(f"target FPR must lie in [0, 1), got {target_fpr}")
    null = np.asarray(sorted(null_scores), dtype=float)
    n = len(null)
    if n == 0:
        raise ValueError("cannot calibrate on an empty null set")
    budget = int(np.floor(n * target_fpr))
    if higher_is_wm:
        # smallest tau with #(null >= tau) <= budget
        candidates = np.concatenate([np.unique(null), [np.inf]])
        counts = n - np.searchsorted(null, candidates, side="left")
        feasible = candidates[counts <= budget]
        return float(feasible[0])
    # largest tau with #(null < tau) <= budget
    candidates = np.concatenate([[-np.inf], np.unique(null)])
    counts = np.searchsorted(null, candidates, side="left")
    feasible = candidates[counts <= budget]
    return float(feasible[-1])


def dynamic_tpr_at_fpr(scores: ScoreSet, target_fpr: float) -> SuccessRateReport:
    """Operating point maximizing TPR subject to empirical FPR <= target.

    The threshold is restricted to observed scores (plus a beyond-extreme
    sentinel), making the result exactly reproducible by a brute-force sweep.
    """
    if not 0.0 <= target_fpr < 1.0:
        raise ValueError(f"target FPR must lie in [0, 1), got {target_fpr}")
    if not scores.null:
        raise ValueError("dynamic threshold needs null scores")
    null = np.asarray(sorted(scores.null), dtype=float)
    wm = np.asarray(scores.watermarked, dtype=float)
    n = len(null)
    budget = int(np.floor(n * target_fpr))
    pool = np.unique(np.concatenate([wm, null])) if len(wm) else np.unique(null)
    if scores.higher_is_watermarked:
        candidates = np.concatenate([pool, [np.inf]])
        fp_counts = n - np.searchsorted(null, candidates, side="left")
        feasible = candidates[fp_counts <= budget]
        tau = float(feasible[0])  # smallest feasible threshold admits the most positives
    else:
        candidates = np.concatenate([[-np.inf], pool])
        fp_counts = np.searchsorted(null, candidates, side="left")
        feasible = candidates[fp_counts <= budget]
        tau = float(feasible[-1])
    return fundamental_rates(scores, tau)


# ---------------------------------------------------------------------------
# quality metrics
# ---------------------------------------------------------------------------

def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(255.0**2 / err), PSNR_CAP))


def _gaussian_window_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    radius = size // 2
    taps = np.exp(-0.5 * ((np.arange(size) - radius) / sigma) ** 2)
    return taps / taps.sum()


def _windowed(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(plane, taps, axis=-1, mode="reflect")
    return ndimage.correlate1d(out, taps, axis=-2, mode="reflect")


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 255.0) -> float:
    """Single-scale SSIM: 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03.

    Edge-affected rows and columns are cropped before averaging; channels
    (and frames) are averaged uniformly.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    taps = _gaussian_window_taps()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a = _windowed(a, taps)
    mu_b = _windowed(b, taps)
    var_a = _windowed(a * a, taps) - mu_a**2
    var_b = _windowed(b * b, taps) - mu_b**2
    cov = _windowed(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    ssim_map = num / den
    pad = len(taps) // 2
    valid = ssim_map[..., pad:-pad, pad:-pad]
    return float(np.mean(valid))


def video_quality_proxies(frames: np.ndarray, value_range: float = 255.0) -> dict[str, float]:
    """No-reference temporal proxies: second-difference smoothness, first-difference motion."""
    frames = np.asarray(frames, dtype=float)
    if frames.ndim < 2 or frames.shape[0] < 2:
        raise ValueError("video proxies need at least 2 frames")
    first = np.abs(np.diff(frames, axis=0))
    dynamic = float(np.mean(first) / value_range)
    if frames.shape[0] >= 3:
        second = np.abs(frames[2:] - 2.0 * frames[1:-1] + frames[:-2])
        smoothness = float(1.0 - np.mean(second) / (2.0 * value_range))
    else:
        smoothness = 1.0
    return {"frame_smoothness": smoothness, "dynamic_degree_proxy": dynamic}


@dataclass(frozen=True)
class QualityReport:
    metrics: dict  # name -> {"mean": float, "std": float}

    def to_dict(self) -> dict:
        return {"metrics": self.metrics}


# ---------------------------------------------------------------------------
# sample sets and pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    entries: tuple[dict, ...]

    def __post_init__(self):
        ids = [e["sample_id"] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")

    @property
    def sample_ids(self) -> list[int]:
        return [int(e["sample_id"]) for e in self.entries]

    @classmethod
    def range(cls, n: int, start: int = 0) -> "SampleSet":
        return cls(tuple({"sample_id": start + i} for i in range(n)))

    @classmethod
    def from_jsonl(cls, path, max_samples: Optional[int] = None) -> "SampleSet":
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "sample_id" not in obj:
                    raise ValueError(f"sample entry missing sample_id: {line!r}")
                entries.append(obj)
                if max_samples is not None and len(entries) >= max_samples:
                    break
        return cls(tuple(entries))


def _one_sample(system, sample_id: int, attack_chain, watermarked: bool) -> float:
    try:
        if watermarked:
            media = system.generate_watermarked_media(sample_id)
        else:
            media = system.generate_null_media(sample_id)
        if attack_chain:
            media = apply_chain(attack_chain, media, system.attack_key, call_id=sample_id)
        return system.detect_watermark_in_media(media, sample_id=sample_id).score
    except Exception as exc:
        kind = "watermarked" if watermarked else "null"
        raise PipelineError(f"{kind} sample {sample_id} failed: {exc}") from exc


def _collect(system, samples: SampleSet, attack_chain, watermarked: bool, progress=None, jobs: int = 1) -> list[float]:
    ids = samples.sample_ids
    if jobs > 1:
        # systems and attacks are pure, so fan-out is safe; results are
        # assembled by sample order, independent of completion order
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(lambda sid: _one_sample(system, sid, attack_chain, watermarked), ids))
        if progress is not None:
            progress(len(ids), len(ids))
        return scores
    scores = []
    for i, sample_id in enumerate(ids):
        scores.append(_one_sample(system, sample_id, attack_chain, watermarked))
        if progress is not None:
            progress(i + 1, len(ids))
    return scores


def run_wmdetect(system, samples: SampleSet, attack_chain=(), progress=None, jobs: int = 1) -> list[float]:
    """Generate watermarked media, attack, invert, detect; collect scores."""
    return _collect(system, samples, attack_chain, watermarked=True, progress=progress, jobs=jobs)


def run_uwmdetect(system, samples: SampleSet, attack_chain=(), progress=None, jobs: int = 1) -> list[float]:
    """Same pipeline over fresh unwatermarked latents."""
    return _collect(system, samples, attack_chain, watermarked=False, progress=progress, jobs=jobs)


def evaluate_detection(
    system,
    samples: SampleSet,
    attack_chain=(),
    target_fpr: Optional[float] = 0.01,
    fixed_tau: Optional[float] = None,
    progress=None,
    jobs: int = 1,
) -> dict:
    """Run both pipelines and report fixed-threshold and dynamic operating points."""
    wm = run_wmdetect(system, samples, attack_chain, progress, jobs=jobs)
    null = run_uwmdetect(system, samples, attack_chain, progress, jobs=jobs)
    scores = ScoreSet(tuple(wm), tuple(null), system.higher_is_watermarked)
    rates = {}
    tau = fixed_tau if fixed_tau is not None else system.threshold
    rates["fixed"] = fundamental_rates(scores, tau).to_dict()
    if target_fpr is not None:
        rates["dynamic"] = dynamic_tpr_at_fpr(scores, target_fpr).to_dict()
        rates["dynamic"]["target_fpr"] = target_fpr
    return {
        "algorithm": system.algorithm,
        "channel": system.channel.spec.to_dict(),
        "attacks": [spec.token() for spec in attack_chain],
        "n": len(samples.entries),
        "orientation": "higher" if system.higher_is_watermarked else "lower",
        "scores": {"watermarked": wm, "null": null},
        "rates": rates,
    }


_UNSUPPORTED_MODES = {
    "group": "distribution metrics (FID, Inception Score) need a pretrained vision network",
    "repeat": "perceptual metrics (LPIPS) need a pretrained vision network",
    "ref": "reference metrics (CLIP-I, CLIP-T) need a pretrained vision-language network",
}


def quality_pipeline(system, samples: SampleSet, mode: str, progress=None) -> QualityReport:
    """Quality impact over samples: 'compared' pairs watermarked against
    unwatermarked media; 'direct'/'video' computes no-reference video proxies."""
    if mode in _UNSUPPORTED_MODES:
        raise ValueError(f"unsupported quality mode {mode!r}: {_UNSUPPORTED_MODES[mode]}")
    if mode not in ("compared", "direct", "video"):
        raise ValueError(f"unknown quality mode {mode!r}")
    per_metric: dict[str, list[float]] = {}
    for i, sample_id in enumerate(samples.sample_ids):
        try:
            wm_media = system.generate_watermarked_media(sample_id)
            if mode == "compared":
                null_media = system.generate_null_media(sample_id)
                values = {
                    "psnr": psnr(wm_media.array, null_media.array),
                    "ssim": ssim(wm_media.array, null_media.array),
                    "mse": mse(wm_media.array, null_media.array),
                }
            else:
                if not wm_media.is_video:
                    raise ValueError(
                        "direct quality mode for images needs a no-reference metric "
                        "(NIQE-class), which requires a pretrained network"
                    )
                rng = 255.0 if wm_media.pixel else 8.0
                values = video_quality_proxies(wm_media.array, value_range=rng)
        except ValueError:
            raise
        except Exception as exc:
            raise PipelineError(f"quality sample {sample_id} failed: {exc}") from exc
        for name, val in values.items():
            per_metric.setdefault(name, []).append(val)
        if progress is not None:
            progress(i + 1, len(samples.entries))
    metrics = {
        name: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        for name, vals in per_metric.items()
    }
    return QualityReport(metrics)
