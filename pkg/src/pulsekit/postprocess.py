"""Waveform reassembly and spectral heart-rate extraction.

Chunked pulse predictions are merged by Hann-windowed overlap-add, and
heart rates are read off a zero-padded sliding-window spectrum: each
window is mean-removed, Hann-tapered, padded so the frequency grid is
bin_hz wide, and the highest in-band magnitude peak gives the BPM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DEFAULT_BAND, HrSeries, Waveform

# Accumulated window weight below which an overlap-add sample is masked.
_WEIGHT_FLOOR = 1e-3
_WEIGHT_EPS = 1e-6

_FFT_BATCH = 128


@dataclass(frozen=True)
class StftConfig:
    """Sliding-window spectral estimation settings.

    window_s: analysis window length in seconds (10 by default; 30 for the
        long-window variant).
    stride_frames: hop between windows, in samples of the waveform.
    bin_hz: frequency grid width after zero padding.
    band: [lo, hi] Hz range searched for the pulse peak.
    """

    window_s: float = 10.0
    stride_frames: int = 1
    bin_hz: float = 0.001
    band: tuple[float, float] = DEFAULT_BAND

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError(f"window_s must be positive, got {self.window_s}")
        if self.stride_frames < 1:
            raise ValueError(f"stride_frames must be >= 1, got {self.stride_frames}")
        if not self.bin_hz > 0:
            raise ValueError(f"bin_hz must be positive, got {self.bin_hz}")
        lo, hi = self.band
        if not (0 < lo < hi):
            raise ValueError(f"band must satisfy 0 < lo < hi, got {self.band}")


def periodic_hann(n: int) -> np.ndarray:
    """Periodic Hann window: shifts at 50% hop sum to a constant."""
    k = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


def window_length(cfg: StftConfig, fs: float) -> int:
    """Analysis window length in samples for a given rate."""
    w = int(math.floor(cfg.window_s * fs + 0.5))
    if w < 2:
        raise ValueError(
            f"STFT window of {cfg.window_s} s at {fs} Hz spans {w} samples; need >= 2"
        )
    return w


def _fft_length(cfg: StftConfig, fs: float, n: int) -> int:
    return max(int(math.ceil(fs / cfg.bin_hz - 1e-9)), n)


def _band_bins(nfft: int, fs: float, band: tuple[float, float]) -> tuple[int, int, float]:
    binw = fs / nfft
    k_lo = max(int(math.ceil(band[0] / binw - 1e-9)), 0)
    k_hi = min(int(math.floor(band[1] / binw + 1e-9)), nfft // 2)
    if k_lo > k_hi:
        raise ValueError(
            f"band {band} Hz contains no FFT bins at resolution {binw} Hz"
        )
    return k_lo, k_hi, binw


def _peak_bpm(segments: np.ndarray, fs: float, cfg: StftConfig, nfft: int) -> np.ndarray:
    """Highest in-band spectral peak per row, in BPM (ties -> lower frequency)."""
    k_lo, k_hi, binw = _band_bins(nfft, fs, cfg.band)
    mag = np.abs(np.fft.rfft(segments, n=nfft, axis=1))[:, k_lo : k_hi + 1]
    return 60.0 * (k_lo + np.argmax(mag, axis=1)) * binw


def stft_window_centers(n_samples: int, cfg: StftConfig, fs: float) -> np.ndarray:
    """Center frame of every analysis window that fits in the waveform."""
    w = window_length(cfg, fs)
    if n_samples < w:
        raise ValueError(f"waveform has {n_samples} samples; STFT window needs {w}")
    starts = np.arange(0, n_samples - w + 1, cfg.stride_frames)
    return starts + w // 2


def hr_series(wave: Waveform, cfg: StftConfig = StftConfig()) -> HrSeries:
    """Per-frame heart-rate series from a sliding-window spectrum.

    Each window's peak is assigned to its center frame; frames before the
    first and after the last center carry the nearest computed value.
    Windows overlapping masked samples (and constant windows) yield invalid
    entries.
    """
    fs = wave.fs
    x = wave.samples
    n = len(x)
    w = window_length(cfg, fs)
    if n < w:
        raise ValueError(f"waveform has {n} samples; STFT window needs {w}")
    nfft = _fft_length(cfg, fs, w)
    starts = np.arange(0, n - w + 1, cfg.stride_frames)
    centers = starts + w // 2

    if wave.mask is not None:
        invalid_cum = np.concatenate(([0], np.cumsum(~wave.mask)))
        tainted = (invalid_cum[starts + w] - invalid_cum[starts]) > 0
    else:
        tainted = np.zeros(len(starts), dtype=bool)

    all_windows = sliding_window_view(x, w)
    taper = periodic_hann(w)
    win_bpm = np.full(len(starts), np.nan)
    ok = np.zeros(len(starts), dtype=bool)
    # batched so long sessions never materialize every window at once
    for i in range(0, len(starts), _FFT_BATCH):
        idx = slice(i, min(i + _FFT_BATCH, len(starts)))
        segments = all_windows[starts[idx]].copy()
        segments -= segments.mean(axis=1, keepdims=True)
        good = ~tainted[idx] & (np.max(np.abs(segments), axis=1) >= 1e-12)
        if good.any():
            bpm_batch = _peak_bpm(segments[good] * taper, fs, cfg, nfft)
            out = np.full(good.shape, np.nan)
            out[good] = bpm_batch
            win_bpm[idx] = out
            ok[idx] = good

    # Nearest-center fill over all frames (ties break toward the earlier center).
    frames = np.arange(n)
    pos = np.searchsorted(centers, frames)
    left = np.clip(pos - 1, 0, len(centers) - 1)
    right = np.clip(pos, 0, len(centers) - 1)
    use_left = np.abs(frames - centers[left]) <= np.abs(centers[right] - frames)
    nearest = np.where(use_left, left, right)
    return HrSeries(win_bpm[nearest], fs=fs, band=cfg.band, valid=ok[nearest])


def hr_full(wave: Waveform, cfg: StftConfig = StftConfig()) -> float:
    """Single heart rate from one full-length transform.

    Same mean-removal, taper, padding, and band rules as the sliding
    windows; masked samples are zeroed after mean removal.
    """
    n = len(wave)
    if n < 2:
        raise ValueError("waveform must have at least 2 samples")
    valid = wave.valid_mask()
    if int(valid.sum()) < 2:
        raise ValueError("waveform has fewer than 2 valid samples")
    seg = wave.samples - wave.samples[valid].mean()
    seg = np.where(valid, seg, 0.0)
    if np.max(np.abs(seg)) < 1e-12:
        raise ValueError("waveform has no spectral content (constant signal)")
    nfft = _fft_length(cfg, wave.fs, n)
    bpm = _peak_bpm((seg * periodic_hann(n))[None, :], wave.fs, cfg, nfft)
    return float(bpm[0])


def overlap_add(chunks: Sequence, total_len: int, fs: float) -> Waveform:
    """Merge chunk predictions into one waveform by Hann overlap-add.

    Each chunk is multiplied by a periodic Hann window and summed at its
    offset; the result is normalized by the accumulated window weight.
    Samples whose weight stays below the floor (uncovered frames and the
    very edges of the covered span) are masked invalid.
    """
    chunks = sorted(chunks, key=lambda c: c.start)
    if not chunks:
        raise ValueError("empty chunk list")
    n = len(chunks[0].values)
    for c in chunks:
        if len(c.values) != n:
            raise ValueError(
                f"chunk at start {c.start} has {len(c.values)} values, expected {n}"
            )
    last = chunks[-1].start + n
    if total_len < last:
        raise ValueError(f"total_len {total_len} < last chunk end {last}")
    win = periodic_hann(n)
    acc = np.zeros(total_len, dtype=np.float64)
    weight = np.zeros(total_len, dtype=np.float64)
    for c in chunks:
        acc[c.start : c.start + n] += np.asarray(c.values, dtype=np.float64) * win
        weight[c.start : c.start + n] += win
    out = acc / np.maximum(weight, _WEIGHT_EPS)
    return Waveform(out, fs, mask=weight >= _WEIGHT_FLOOR)


def mask_unstable_gt(
    hr: HrSeries, threshold: float = 7.0, segment_s: float = 10.0
) -> HrSeries:
    """Invalidate segments around heart-rate jumps steeper than threshold.

    Wherever the rate changes by more than `threshold` BPM over one second,
    every `segment_s`-long segment covering that second is marked invalid.
    """
    n = len(hr)
    fs = hr.fs
    one_s = max(1, int(math.floor(fs + 0.5)))
    seg = max(1, int(math.floor(segment_s * fs + 0.5)))
    valid = hr.valid.copy()
    bpm = hr.bpm.copy()
    if n > one_s:
        a = hr.bpm[:-one_s]
        b = hr.bpm[one_s:]
        jointly = hr.valid[:-one_s] & hr.valid[one_s:]
        with np.errstate(invalid="ignore"):
            viol = jointly & (np.abs(b - a) > threshold)
        if viol.any():
            # Difference-array union of [i - seg + 1, i + one_s + seg) per violation.
            marks = np.zeros(n + 1, dtype=np.int64)
            for i in np.flatnonzero(viol):
                lo = max(0, i - seg + 1)
                hi = min(n, i + one_s + seg)
                marks[lo] += 1
                marks[hi] -= 1
            covered = np.cumsum(marks[:-1]) > 0
            valid &= ~covered
    bpm[~valid] = np.nan
    return HrSeries(bpm, fs=fs, band=hr.band, valid=valid)


def session_hr_sd(hr: HrSeries, window_s: float = 60.0) -> float:
    """Average within-session HR standard deviation over sliding windows.

    Windows are `window_s` long with a stride of one frame; the population
    standard deviation is taken over the valid entries of each window and
    averaged. A series shorter than one window is treated as one window.
    """
    n = len(hr)
    w = min(n, max(2, int(math.floor(window_s * hr.fs + 0.5))))
    vals = np.where(hr.valid, hr.bpm, 0.0)
    sq = vals * vals
    cnt = hr.valid.astype(np.float64)
    cum = lambda a: np.concatenate(([0.0], np.cumsum(a)))
    cs, csq, cc = cum(vals), cum(sq), cum(cnt)
    starts = np.arange(0, n - w + 1)
    c = cc[starts + w] - cc[starts]
    ok = c >= 2
    if not ok.any():
        return 0.0
    s = cs[starts + w] - cs[starts]
    q = csq[starts + w] - csq[starts]
    mean = s[ok] / c[ok]
    var = np.maximum(q[ok] / c[ok] - mean * mean, 0.0)
    return float(np.mean(np.sqrt(var)))


@dataclass(frozen=True)
class DatasetStats:
    """Across-session summary: mean and 95% CI per statistic."""

    n_sessions: int
    duration_mean: float
    duration_ci95: float
    hr_mean: float
    hr_ci95: float
    hr_sd_mean: float
    hr_sd_ci95: float


def _mean_ci95(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    if len(values) < 2:
        return mean, 0.0
    return mean, float(1.96 * values.std(ddof=1) / math.sqrt(len(values)))


def dataset_stats(
    series: Sequence[HrSeries], durations: Sequence[float]
) -> DatasetStats:
    """Dataset summary: duration, mean HR, and within-session 60 s HR SD.

    Confidence intervals are computed across sessions (1.96 * SE).
    """
    if not series:
        raise ValueError("empty dataset: no sessions with ground truth")
    if len(series) != len(durations):
        raise ValueError("series and durations must have equal length")
    hr_means = []
    hr_sds = []
    for s in series:
        good = s.bpm[s.valid]
        if not len(good):
            raise ValueError("session has no valid HR windows")
        hr_means.append(float(good.mean()))
        hr_sds.append(session_hr_sd(s))
    d_mean, d_ci = _mean_ci95(np.asarray(durations))
    h_mean, h_ci = _mean_ci95(np.asarray(hr_means))
    sd_mean, sd_ci = _mean_ci95(np.asarray(hr_sds))
    return DatasetStats(len(series), d_mean, d_ci, h_mean, h_ci, sd_mean, sd_ci)


def write_hr_series_csv(path, hr: HrSeries) -> None:
    """Export as CSV with columns frame_index, bpm, valid."""
    lines = ["frame_index,bpm,valid"]
    for i, (b, v) in enumerate(zip(hr.bpm, hr.valid)):
        lines.append(f"{i},{repr(float(b))},{int(v)}")
    Path(path).write_text("\n".join(lines) + "\n")
