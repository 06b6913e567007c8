"""Array-level bindings of the pulse augmentation engine and metrics.

Training loops consume these as plain functions over numpy arrays: video
tensors [T, H, W, 3] in [0, 1] and 1-D waveforms, with one shared frame
rate. Inputs are never mutated; float32 video passes through zero-copy,
anything else costs one explicit cast. Values only, no autodiff: the
augmentations belong in the data loader and the loss is provided for
validation-side parity with the evaluation pipeline.

Errors raised by the underlying engine (`ValueError`,
`InsufficientContextError`, ...) propagate unchanged, carrying the
original message.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from pulsekit import (
    HrSeries,
    InsufficientContextError,
    PipelineError,
    RngState,
    VideoClip,
    Waveform,
    mean_absolute_error,
    mean_error,
    modulate,
    modulation_positions,
    neg_pearson_loss,
    rmse,
    speed_augment,
)
from pulsekit import DEFAULT_BAND

__all__ = [
    "InsufficientContextError",
    "PipelineError",
    "make_rng",
    "py_metrics",
    "py_modulate",
    "py_modulation_positions",
    "py_neg_pearson",
    "py_speed_augment",
]

__version__ = "0.1.0"


def make_rng(seed: int, label: str = "") -> np.random.Generator:
    """Deterministic generator for a (seed, stream label) pair."""
    return RngState(seed, label).generator()


def _video(video: np.ndarray, fps: float) -> VideoClip:
    return VideoClip(np.asarray(video, dtype=np.float32), fps)


def _wave(wave: np.ndarray, fps: float) -> Waveform:
    return Waveform(np.asarray(wave, dtype=np.float64), fps)


def py_speed_augment(
    video: np.ndarray,
    wave: np.ndarray,
    clip_start: int,
    hr_source: float,
    hr_target: float,
    n: int = 136,
    fps: float = 30.0,
) -> tuple[np.ndarray, np.ndarray, dict[str, Any]]:
    """Resample an n-frame window toward a target heart rate.

    Returns (video', wave', provenance) where video' is float32 [n, H, W, 3],
    wave' float64 [n], and provenance records the source interval, rates,
    and factor exactly as the pipeline's own augmented-clip record does.
    """
    aug = speed_augment(
        _video(video, fps), _wave(wave, fps), clip_start, hr_source, hr_target, n
    )
    return aug.video.frames, aug.wave.samples, dict(aug.provenance)


def py_modulate(
    video: np.ndarray,
    wave: np.ndarray,
    factor: float,
    n: int | None = None,
    fps: float = 30.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Sweep the playback rate linearly by `factor` over an n-frame clip.

    n defaults to the input length; factors below 1 need one extra source
    frame beyond n (the sweep ends slower than real time).
    """
    v2, w2 = modulate(_video(video, fps), _wave(wave, fps), factor, n=n)
    return v2.frames, w2.samples


def py_modulation_positions(factor: float, n: int = 136) -> np.ndarray:
    """Debug hook: the interpolation positions the sweep samples."""
    return modulation_positions(factor, n)


def py_neg_pearson(pred, target) -> float:
    """Negative Pearson correlation, suitable as a training criterion value."""
    return neg_pearson_loss(np.asarray(pred, float), np.asarray(target, float))


def py_metrics(
    hr_pred,
    hr_gt,
    valid_pred=None,
    valid_gt=None,
    fs: float = 30.0,
    band: tuple[float, float] = DEFAULT_BAND,
) -> dict[str, float]:
    """Heart-rate error metrics over jointly valid windows.

    Returns {me, mae, rmse, n_windows}; entries flagged invalid in either
    series are excluded pairwise, exactly as the evaluation pipeline does.
    """
    sp = HrSeries(np.asarray(hr_pred, float), fs, band=band, valid=valid_pred)
    sg = HrSeries(np.asarray(hr_gt, float), fs, band=band, valid=valid_gt)
    joint = int(np.sum(sp.valid & sg.valid))
    return {
        "me": mean_error(sp, sg),
        "mae": mean_absolute_error(sp, sg),
        "rmse": rmse(sp, sg),
        "n_windows": joint,
    }
