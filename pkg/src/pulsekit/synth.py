"""Synthetic pulse-video generator for end-to-end verification.

Produces sessions with exactly known heart-rate trajectories: a two-harmonic
sinusoidal pulse painted onto a skin-colored disc, plus per-pixel noise and
a slow multiplicative illumination drift. The emitted frame directory, CSV
waveform, landmark file, and manifest use the same layout the ingestion
path consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    LandmarkTrack,
    RngState,
    SessionManifest,
    VideoClip,
    Waveform,
    write_waveform_csv,
)

MAX_HR_SLOPE = 7.0  # BPM per second
HR_RANGE = (40.0, 180.0)

_SKIN_DIRECTION = np.array([0.3, 1.0, 0.5])
_SKIN_DIRECTION = _SKIN_DIRECTION / np.linalg.norm(_SKIN_DIRECTION)
_DISC_RADIUS_FRAC = 0.45  # covers ~64% of the frame


@dataclass(frozen=True)
class HrTrajectory:
    """An analytic heart-rate-over-time curve.

    kind is one of constant, linear_ramp, sinusoidal. The instantaneous
    rate must stay inside [40, 180] BPM and never change faster than
    7 BPM/s.
    """

    kind: str
    duration_s: float
    base_bpm: float
    slope_bpm_s: float = 0.0
    depth_bpm: float = 0.0
    period_s: float = 10.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear_ramp", "sinusoidal"):
            raise ValueError(f"unknown trajectory kind '{self.kind}'")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        lo, hi = HR_RANGE
        if self.kind == "constant":
            ends = (self.base_bpm, self.base_bpm)
            slope = 0.0
        elif self.kind == "linear_ramp":
            ends = (self.base_bpm, self.base_bpm + self.slope_bpm_s * self.duration_s)
            slope = abs(self.slope_bpm_s)
        else:
            if self.depth_bpm < 0 or not self.period_s > 0:
                raise ValueError("sinusoidal trajectory needs depth >= 0 and period > 0")
            ends = (self.base_bpm - self.depth_bpm, self.base_bpm + self.depth_bpm)
            slope = self.depth_bpm * 2.0 * math.pi / self.period_s
        if slope > MAX_HR_SLOPE + 1e-9:
            raise ValueError(
                f"trajectory slope {slope:.3f} BPM/s exceeds the {MAX_HR_SLOPE} BPM/s cap"
            )
        if min(ends) < lo - 1e-9 or max(ends) > hi + 1e-9:
            raise ValueError(f"instantaneous HR {ends} leaves the {lo}-{hi} BPM range")

    def hr_at(self, t: np.ndarray) -> np.ndarray:
        """Instantaneous heart rate (BPM) at each time in seconds."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            return np.full_like(t, self.base_bpm)
        if self.kind == "linear_ramp":
            return self.base_bpm + self.slope_bpm_s * t
        return self.base_bpm + self.depth_bpm * np.sin(2.0 * np.pi * t / self.period_s)

    def phase_at(self, t: np.ndarray) -> np.ndarray:
        """Pulse phase 2*pi * integral of HR/60, integrated exactly."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            beats = self.base_bpm * t / 60.0
        elif self.kind == "linear_ramp":
            beats = (self.base_bpm * t + 0.5 * self.slope_bpm_s * t * t) / 60.0
        else:
            w = 2.0 * np.pi / self.period_s
            beats = (
                self.base_bpm * t + self.depth_bpm / w * (1.0 - np.cos(w * t))
            ) / 60.0
        return 2.0 * np.pi * beats


@dataclass(frozen=True)
class SynthSpec:
    """Full recipe for one synthetic session."""

    trajectory: HrTrajectory
    fps: float = 30.0
    size: int = 64
    base_rgb: tuple[float, float, float] = (0.70, 0.52, 0.44)
    pulse_amplitude: float = 0.03
    harmonic_ratio: float = 0.2
    noise_sigma: float = 0.01
    illum_drift_amplitude: float = 0.05
    illum_drift_period_s: float = 20.0
    seed: int = 0
    gt_fs: float | None = None  # defaults to fps

    def __post_init__(self):
        if not self.pulse_amplitude > 0:
            raise ValueError("pulse_amplitude must be positive")
        if not 0 <= self.harmonic_ratio < 1:
            raise ValueError("harmonic_ratio must be in [0, 1)")
        if not self.fps > 0 or self.size < 8:
            raise ValueError("need fps > 0 and size >= 8")

    @property
    def effective_gt_fs(self) -> float:
        return self.gt_fs if self.gt_fs is not None else self.fps


def synth_waveform(
    traj: HrTrajectory, fs: float, harmonic_ratio: float = 0.0
) -> Waveform:
    """Exactly integrated pulse waveform: sin(phase) plus a second harmonic,
    peak-normalized."""
    if not fs > 0:
        raise ValueError(f"fs must be positive, got {fs}")
    n = max(2, int(math.floor(traj.duration_s * fs + 0.5)))
    t = np.arange(n, dtype=np.float64) / fs
    phase = traj.phase_at(t)
    wave = np.sin(phase) + harmonic_ratio * np.sin(2.0 * phase)
    return Waveform(wave / np.max(np.abs(wave)), fs)


def _disc_mask(size: int) -> np.ndarray:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size]
    r = _DISC_RADIUS_FRAC * size
    return ((xx - c) ** 2 + (yy - c) ** 2) <= r * r


def disc_box(size: int) -> tuple[float, float, float, float]:
    """Bounding box [x0, y0, x1, y1] of the synthetic face disc."""
    c = (size - 1) / 2.0
    r = _DISC_RADIUS_FRAC * size
    return (c - r, c - r, c + r, c + r)


def render_session(
    spec: SynthSpec,
) -> tuple[VideoClip, Waveform, LandmarkTrack]:
    """Render a session in memory: video, ground-truth waveform, landmarks."""
    fps = spec.fps
    video_wave = synth_waveform(spec.trajectory, fps, spec.harmonic_ratio)
    gt_wave = synth_waveform(spec.trajectory, spec.effective_gt_fs, spec.harmonic_ratio)
    n = len(video_wave)
    t = np.arange(n, dtype=np.float64) / fps

    disc = _disc_mask(spec.size).astype(np.float32)
    base = np.asarray(spec.base_rgb, dtype=np.float32)
    pulse = (
        spec.pulse_amplitude
        * video_wave.samples.astype(np.float32)[:, None, None, None]
        * disc[None, :, :, None]
        * _SKIN_DIRECTION.astype(np.float32)
    )
    frames = base[None, None, None, :] + pulse
    if spec.illum_drift_amplitude > 0:
        drift = 1.0 + spec.illum_drift_amplitude * np.sin(
            2.0 * np.pi * t / spec.illum_drift_period_s
        )
        frames = frames * drift.astype(np.float32)[:, None, None, None]
    if spec.noise_sigma > 0:
        gen = RngState(spec.seed, "synth-noise").generator()
        frames = frames + gen.normal(0.0, spec.noise_sigma, size=frames.shape).astype(
            np.float32
        )
    frames = np.clip(frames, 0.0, 1.0)
    boxes = np.tile(np.asarray(disc_box(spec.size)), (n, 1))
    return VideoClip(frames, fps), gt_wave, LandmarkTrack(boxes=boxes)


def synth_session(
    spec: SynthSpec,
    out_dir: str | Path,
    session_id: str = "synth00",
    subject_id: str = "subj00",
) -> tuple[VideoClip, Waveform, SessionManifest]:
    """Render a session and write it in the standard ingestion layout.

    Creates <out_dir>/frames/%06d.png, gt.csv, landmarks.json, and
    manifest.json, then returns the in-memory clip, waveform, and manifest.
    """
    out_dir = Path(out_dir)
    clip, gt_wave, landmarks = render_session(spec)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i in range(clip.n_frames):
        img = np.round(clip.frames[i] * 255.0).astype(np.uint8)
        Image.fromarray(img, mode="RGB").save(frames_dir / f"{i:06d}.png")
    write_waveform_csv(out_dir / "gt.csv", gt_wave)
    boxes = [[float(v) for v in row] for row in landmarks.boxes]
    (out_dir / "landmarks.json").write_text(json.dumps(boxes) + "\n")
    manifest = SessionManifest(
        session_id=session_id,
        subject_id=subject_id,
        frames_dir=frames_dir.resolve(),
        fps=spec.fps,
        gt_waveform=(out_dir / "gt.csv").resolve(),
        gt_fs=spec.effective_gt_fs,
        landmarks=(out_dir / "landmarks.json").resolve(),
    )
    manifest.save(out_dir / "manifest.json")
    return clip, gt_wave, manifest
