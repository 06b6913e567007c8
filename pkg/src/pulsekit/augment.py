"""Temporal and spatial training augmentations.

The speed augmentation resamples a fixed-length clip (video and waveform
together) so its pulse frequency lands on a randomly chosen target rate;
the modulation augmentation sweeps the playback rate linearly across the
clip so the heart rate changes at a bounded slope. Both operate purely in
the time axis with linear interpolation, keeping video and waveform in
lockstep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import RngState, VideoClip, Waveform
from .errors import InsufficientContextError, NoSourceHrError
from .postprocess import StftConfig, hr_series, stft_window_centers


@dataclass(frozen=True)
class SpeedAugSpec:
    """Target heart-rate range and clip length for the speed augmentation."""

    hr_min: float = 40.0
    hr_max: float = 180.0
    clip_len: int = 136

    def __post_init__(self):
        # hr_min == hr_max is allowed: a degenerate interval pins the target
        if not (0 < self.hr_min <= self.hr_max):
            raise ValueError(f"need 0 < hr_min <= hr_max, got [{self.hr_min}, {self.hr_max}]")
        if self.clip_len < 2:
            raise ValueError(f"clip_len must be >= 2, got {self.clip_len}")


@dataclass(frozen=True)
class ModulationSpec:
    """Heart-rate slope cap for the modulation augmentation."""

    max_slope: float = 7.0  # BPM per second
    clip_len: int = 136

    def __post_init__(self):
        if not self.max_slope > 0:
            raise ValueError(f"max_slope must be positive, got {self.max_slope}")
        if self.clip_len < 2:
            raise ValueError(f"clip_len must be >= 2, got {self.clip_len}")


@dataclass(frozen=True)
class SpatialAugSpec:
    """Flip probability and noise magnitudes for spatial augmentation."""

    p_flip: float = 0.5
    sigma_illum: float = 0.1
    sigma_noise: float = 0.05

    def __post_init__(self):
        if not 0 <= self.p_flip <= 1:
            raise ValueError(f"p_flip must be in [0, 1], got {self.p_flip}")
        if self.sigma_illum < 0 or self.sigma_noise < 0:
            raise ValueError("noise magnitudes must be >= 0")


@dataclass(frozen=True)
class AugmentedClip:
    """A fixed-length augmented clip with its waveform and provenance."""

    video: VideoClip
    wave: Waveform
    realized_hr_start: float
    realized_hr_end: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.video.n_frames != len(self.wave):
            raise ValueError(
                f"video has {self.video.n_frames} frames but waveform has "
                f"{len(self.wave)} samples"
            )


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngState):
        return rng.generator()
    return rng


def _interp_axis0(arr: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Linear interpolation along the first axis, end-clamped."""
    t = arr.shape[0]
    pos = np.clip(positions, 0.0, t - 1)
    i0 = np.minimum(np.floor(pos).astype(np.intp), max(t - 2, 0))
    w = pos - i0
    if arr.ndim == 1:
        return arr[i0] * (1.0 - w) + arr[np.minimum(i0 + 1, t - 1)] * w
    shape = (len(pos),) + (1,) * (arr.ndim - 1)
    w = w.reshape(shape)
    out = arr[i0] * (1.0 - w) + arr[np.minimum(i0 + 1, t - 1)] * w
    return out.astype(arr.dtype)


def source_hr(
    wave: Waveform, clip_start: int, n: int = 136, cfg: StftConfig = StftConfig()
) -> float:
    """Ground-truth heart rate of a clip: the mean over the STFT windows
    whose centers fall inside [clip_start, clip_start + n)."""
    series = hr_series(wave, cfg)
    centers = stft_window_centers(len(wave), cfg, wave.fs)
    inside = centers[(centers >= clip_start) & (centers < clip_start + n)]
    if len(inside) == 0:
        raise NoSourceHrError(
            f"no STFT window center falls inside clip [{clip_start}, {clip_start + n})"
        )
    vals = series.bpm[inside][series.valid[inside]]
    if len(vals) == 0:
        raise NoSourceHrError(
            f"all STFT windows covering clip [{clip_start}, {clip_start + n}) are masked"
        )
    return float(vals.mean())


def _source_window(
    n_avail: int, clip_start: int, n: int, source_len: int, n_out: int
) -> tuple[int, int]:
    """Start index and highest frame index needed to emit n_out samples
    stepping source_len/n, shifted inward to fit the session."""
    needed = -(-((n_out - 1) * source_len) // n)  # ceil
    if needed > n_avail - 1:
        raise InsufficientContextError(
            f"augmentation needs {needed + 1} source frames; session has {n_avail}"
        )
    ideal = clip_start + (n - source_len) / 2.0
    s0 = int(math.floor(ideal + 0.5))
    s0 = min(max(s0, 0), n_avail - 1 - needed)
    return s0, needed


def apply_augmentation(
    video: VideoClip,
    wave: Waveform,
    clip_start: int,
    n: int = 136,
    hr_source: float | None = None,
    hr_target: float | None = None,
    factor: float | None = None,
) -> AugmentedClip:
    """Deterministic speed and/or modulation augmentation of one clip.

    With hr_target set, an interval of floor(n * hr_target / hr_source)
    source frames centered on [clip_start, clip_start + n) is linearly
    interpolated at n positions spaced source_len/n apart, scaling the
    pulse frequency so the realized rate is hr_source * source_len / n.
    With factor set, the interpolation positions are then swept by the
    modulation schedule; the speed stage draws one extra source frame of
    context for the sweep when the session has one, end-clamping otherwise.
    """
    if n < 2:
        raise ValueError(f"clip length must be >= 2, got {n}")
    t = video.n_frames
    if len(wave) != t:
        raise ValueError(f"video has {t} frames but waveform has {len(wave)} samples")
    if abs(wave.fs - video.fps) > 1e-9 * max(wave.fs, video.fps):
        raise ValueError(f"waveform rate {wave.fs} differs from video rate {video.fps}")
    if not 0 <= clip_start <= t - n:
        raise ValueError(
            f"clip [{clip_start}, {clip_start + n}) exceeds session of {t} frames"
        )
    if hr_target is not None:
        if hr_source is None:
            raise ValueError("hr_target requires hr_source")
        if hr_source <= 0 or hr_target <= 0:
            raise ValueError("heart rates must be positive")
        source_len = math.floor(n * hr_target / hr_source)
        if source_len < 2:
            raise InsufficientContextError(
                f"source interval of {source_len} frames is too short to resample"
            )
        realized = hr_source * source_len / n
    else:
        source_len = n
        realized = hr_source if hr_source is not None else math.nan

    s0, _ = _source_window(t, clip_start, n, source_len, n)
    n_mid = n
    if factor is not None and s0 + source_len <= t - 1:
        n_mid = n + 1  # extra context frame for the modulation sweep
    positions = s0 + np.arange(n_mid, dtype=np.float64) * (source_len / n)
    frames = _interp_axis0(video.frames, positions)
    samples = _interp_axis0(wave.samples, positions)

    hr_start = hr_end = realized
    if factor is not None:
        pos2 = np.minimum(modulation_positions(factor, n), n_mid - 1)
        frames = _interp_axis0(frames, pos2)
        samples = _interp_axis0(samples, pos2)
        s = 2.0 / (1.0 + factor)
        hr_start, hr_end = realized * s, realized * s * factor
    provenance = {
        "clip_start": clip_start,
        "source_start": s0,
        "source_len": source_len,
        "hr_source": hr_source,
        "hr_target": hr_target,
        "factor": factor,
        "augmented": hr_target is not None or factor is not None,
    }
    return AugmentedClip(
        video=VideoClip(frames, video.fps),
        wave=Waveform(samples, wave.fs),
        realized_hr_start=hr_start,
        realized_hr_end=hr_end,
        provenance=provenance,
    )


def speed_augment(
    video: VideoClip,
    wave: Waveform,
    clip_start: int,
    hr_source: float,
    hr_target: float,
    n: int = 136,
) -> AugmentedClip:
    """Resample an n-frame window and its waveform toward a target heart rate.

    The centered source interval shifts inward when it overhangs the
    session; if it cannot fit at all, an insufficient-context error asks
    the caller to resample hr_target.
    """
    return apply_augmentation(
        video, wave, clip_start, n=n, hr_source=hr_source, hr_target=hr_target
    )


def sample_target_hr(rng, spec: SpeedAugSpec = SpeedAugSpec()) -> float:
    """Uniform draw of a target heart rate on [hr_min, hr_max]."""
    gen = _generator(rng)
    return float(gen.uniform(spec.hr_min, spec.hr_max))


def modulation_bounds(
    hr: float, n: int, fps: float, spec: ModulationSpec = ModulationSpec()
) -> tuple[float, float]:
    """Largest factor interval around 1 keeping the HR slope under the cap.

    With start/end normalized rates s = 2/(1+f) and e = s*f, the realized
    change |hr*(e - s)| over the clip duration n/fps must stay at or below
    max_slope. The interval is symmetric in the sense f_min = 1/f_max; it
    always contains 1, and is unbounded when the cap exceeds 2*hr.
    """
    if hr <= 0:
        raise ValueError(f"hr must be positive, got {hr}")
    max_delta = spec.max_slope * n / fps
    denom = 2.0 * hr - max_delta
    if denom <= 0:
        return 0.0, math.inf
    f_max = (2.0 * hr + max_delta) / denom
    return 1.0 / f_max, f_max


def modulation_positions(factor: float, n: int) -> np.ndarray:
    """Source positions for a linear rate sweep by `factor` over n frames.

    Integrating the normalized rate s + x*(e - s)/n (with s = 2/(1+f),
    e = s*f) gives position x*s + x^2*(e - s)/(2n) for output frame x; the
    sweep preserves total span, reaching exactly n at x = n.
    """
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    if n < 2:
        raise ValueError(f"clip length must be >= 2, got {n}")
    s = 2.0 / (1.0 + factor)
    e = s * factor
    x = np.arange(n, dtype=np.float64)
    return x * s + x * x * (e - s) / (2.0 * n)


def modulate(
    video: VideoClip,
    wave: Waveform,
    factor: float,
    n: int | None = None,
    *,
    bounds: tuple[float, float] | None = None,
    end_clamp: bool = False,
) -> tuple[VideoClip, Waveform]:
    """Sweep the playback rate linearly by `factor` across an n-frame clip.

    The source must extend one frame past the output window for factors
    below 1 (the sweep ends slower than real time); with end_clamp the last
    interpolation position is clamped instead of raising.
    """
    if bounds is not None and not bounds[0] <= factor <= bounds[1]:
        raise ValueError(f"factor {factor} outside allowed bounds {bounds}")
    t = video.n_frames
    if len(wave) != t:
        raise ValueError(f"video has {t} frames but waveform has {len(wave)} samples")
    if n is None:
        n = t
    positions = modulation_positions(factor, n)
    needed = int(math.ceil(positions[-1] - 1e-12))
    if needed > t - 1 and not end_clamp:
        raise InsufficientContextError(
            f"modulation by {factor} needs {needed + 1} source frames; clip has {t}"
        )
    return (
        VideoClip(_interp_axis0(video.frames, positions), video.fps),
        Waveform(_interp_axis0(wave.samples, positions), wave.fs),
    )


def modulate_clip(
    aug: AugmentedClip,
    factor: float,
    *,
    bounds: tuple[float, float] | None = None,
    end_clamp: bool = True,
) -> AugmentedClip:
    """Apply the modulation sweep to an already-assembled clip."""
    video, wave = modulate(
        aug.video, aug.wave, factor, n=aug.video.n_frames, bounds=bounds, end_clamp=end_clamp
    )
    s = 2.0 / (1.0 + factor)
    e = s * factor
    return AugmentedClip(
        video=video,
        wave=wave,
        realized_hr_start=aug.realized_hr_start * s,
        realized_hr_end=aug.realized_hr_end * e,
        provenance={**aug.provenance, "factor": factor},
    )


def spatial_augment(
    clip: VideoClip, rng, spec: SpatialAugSpec = SpatialAugSpec()
) -> VideoClip:
    """Horizontal flip, global illumination offset, and per-pixel noise.

    One flip decision and one illumination offset apply to the whole clip;
    pixel noise is i.i.d. Results are clamped back into [0, 1].
    """
    gen = _generator(rng)
    frames = clip.frames
    if gen.random() < spec.p_flip:
        frames = frames[:, :, ::-1, :]
    out = frames.astype(np.float32)
    if spec.sigma_illum > 0:
        out = out + np.float32(gen.normal(0.0, spec.sigma_illum))
    if spec.sigma_noise > 0:
        out = out + gen.normal(0.0, spec.sigma_noise, size=frames.shape).astype(np.float32)
    return VideoClip(np.clip(out, 0.0, 1.0), clip.fps)


def _band_safe_bounds(hr: float, hr_min: float, hr_max: float) -> tuple[float, float]:
    """Factor interval keeping the swept rate endpoints within [hr_min, hr_max]."""
    lo, hi = 0.0, math.inf
    # end rate hr*e = hr*2f/(1+f) <= hr_max
    if 2 * hr > hr_max:
        hi = min(hi, hr_max / (2 * hr - hr_max))
    # start rate hr*s = hr*2/(1+f) <= hr_max
    lo = max(lo, 2 * hr / hr_max - 1)
    # end rate >= hr_min
    if 2 * hr > hr_min:
        lo = max(lo, hr_min / (2 * hr - hr_min))
    # start rate >= hr_min requires 2*hr/(1+f) >= hr_min
    hi = min(hi, 2 * hr / hr_min - 1)
    return lo, hi


def sample_modulation_factor(
    rng,
    hr: float,
    n: int,
    fps: float,
    spec: ModulationSpec = ModulationSpec(),
    hr_min: float | None = None,
    hr_max: float | None = None,
) -> float:
    """Log-uniform draw of a modulation factor within the slope bounds.

    When hr_min/hr_max are given the interval is additionally clipped so
    the realized rate endpoints stay inside that band; an empty interval
    collapses to the identity factor 1.
    """
    gen = _generator(rng)
    lo, hi = modulation_bounds(hr, n, fps, spec)
    if hr_min is not None and hr_max is not None:
        blo, bhi = _band_safe_bounds(hr, hr_min, hr_max)
        lo, hi = max(lo, blo), min(hi, bhi)
    if not lo <= hi or lo <= 0 or not math.isfinite(hi):
        if math.isfinite(lo) and lo > 0 and not math.isfinite(hi):
            raise ValueError("unbounded modulation interval; tighten the slope cap")
        return 1.0
    return float(math.exp(gen.uniform(math.log(lo), math.log(hi))))


def random_augment(
    video: VideoClip,
    wave: Waveform,
    clip_start: int,
    rng,
    speed: SpeedAugSpec = SpeedAugSpec(),
    modulation: ModulationSpec | None = ModulationSpec(),
    spatial: SpatialAugSpec | None = None,
    stft: StftConfig = StftConfig(),
    max_retries: int = 10,
) -> AugmentedClip:
    """Sample and apply the full augmentation chain to one clip.

    Speed runs first toward a uniformly drawn target rate; the resampled
    clip is then modulated by a log-uniform factor within the slope cap.
    Targets whose source interval cannot fit in the session are redrawn up
    to max_retries times, after which the clip is used unaugmented. The
    speed stage emits one extra frame of context for the modulation stage
    when the session allows, end-clamping otherwise.
    """
    gen = _generator(rng)
    n = speed.clip_len
    t = video.n_frames
    if len(wave) != t:
        raise ValueError(f"video has {t} frames but waveform has {len(wave)} samples")
    if not 0 <= clip_start <= t - n:
        raise ValueError(f"clip [{clip_start}, {clip_start + n}) exceeds session of {t} frames")
    hr_src = source_hr(wave, clip_start, n, stft)

    chosen = None
    attempts = 0
    for _ in range(max_retries):
        attempts += 1
        hr_target = sample_target_hr(gen, speed)
        source_len = math.floor(n * hr_target / hr_src)
        if source_len < 2:
            continue
        try:
            _source_window(t, clip_start, n, source_len, n)
        except InsufficientContextError:
            continue
        chosen = hr_target
        break

    if chosen is None:
        aug = apply_augmentation(video, wave, clip_start, n=n, hr_source=hr_src)
    else:
        factor = None
        if modulation is not None:
            realized = hr_src * math.floor(n * chosen / hr_src) / n
            factor = sample_modulation_factor(
                gen, realized, n, video.fps, modulation,
                hr_min=speed.hr_min, hr_max=speed.hr_max,
            )
        aug = apply_augmentation(
            video, wave, clip_start, n=n,
            hr_source=hr_src, hr_target=chosen, factor=factor,
        )

    out_video = aug.video
    if spatial is not None:
        out_video = spatial_augment(out_video, gen, spatial)
    return AugmentedClip(
        out_video,
        aug.wave,
        aug.realized_hr_start,
        aug.realized_hr_end,
        {**aug.provenance, "attempts": attempts},
    )
