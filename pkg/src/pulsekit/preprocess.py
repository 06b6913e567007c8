"""Face cropping, frame-rate reduction, and the on-disk clip cache.

Raw session video is converted into the square, fixed-size, rate-normalized
clips the estimators consume: frame averaging first (when the source runs
faster than the target rate), then a padded square crop around the facial
landmarks, resized with bicubic interpolation.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import LandmarkTrack, VideoClip

_MAGIC = b"RPPG"
_VERSION = 1
_DTYPE_F32 = 1
_HEADER = struct.Struct("<4sBBHIHH")


@dataclass(frozen=True)
class CropSpec:
    """Padding fractions and output size for the face crop."""

    pad_top: float = 0.30
    pad_sides: float = 0.05
    pad_bottom: float = 0.05
    out_size: int = 64

    def __post_init__(self):
        for name in ("pad_top", "pad_sides", "pad_bottom"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.out_size < 8:
            raise ValueError(f"out_size must be >= 8, got {self.out_size}")


def _extremes(landmarks: np.ndarray) -> tuple[float, float, float, float]:
    arr = np.asarray(landmarks, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape != (4,):
            raise ValueError(f"box must have 4 coordinates, got {arr.shape}")
        x0, y0, x1, y1 = arr
        return float(x0), float(y0), float(x1), float(y1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"landmarks must be (K, 2) points or a length-4 box, got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("empty landmark set")
    return (
        float(arr[:, 0].min()),
        float(arr[:, 1].min()),
        float(arr[:, 0].max()),
        float(arr[:, 1].max()),
    )


def crop_region(
    x_lo: float,
    y_lo: float,
    x_hi: float,
    y_hi: float,
    spec: CropSpec,
    frame_h: int,
    frame_w: int,
) -> tuple[int, int, int, int]:
    """Integer (x0, y0, x1, y1) of the padded square crop for a face box.

    The landmark extremes are padded by pad_top of the box height upward,
    pad_bottom downward, and pad_sides on each side; the shorter dimension
    is symmetrically extended to make the region square. Fractional edges
    round outward (floor min, ceil max), with one pixel trimmed from the
    max side when rounding breaks squareness. Regions overhanging the image
    are shifted inward (and shrunk only if larger than the image itself).
    """
    w = x_hi - x_lo
    h = y_hi - y_lo
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate (zero-area) landmark box: {w} x {h}")
    x0 = x_lo - spec.pad_sides * w
    x1 = x_hi + spec.pad_sides * w
    y0 = y_lo - spec.pad_top * h
    y1 = y_hi + spec.pad_bottom * h
    pw = x1 - x0
    ph = y1 - y0
    if ph > pw:
        cx = 0.5 * (x0 + x1)
        x0, x1 = cx - 0.5 * ph, cx + 0.5 * ph
    elif pw > ph:
        cy = 0.5 * (y0 + y1)
        y0, y1 = cy - 0.5 * pw, cy + 0.5 * pw
    xi0, xi1 = math.floor(x0), math.ceil(x1)
    yi0, yi1 = math.floor(y0), math.ceil(y1)
    if (xi1 - xi0) > (yi1 - yi0):
        xi1 -= (xi1 - xi0) - (yi1 - yi0)
    elif (yi1 - yi0) > (xi1 - xi0):
        yi1 -= (yi1 - yi0) - (xi1 - xi0)
    side = min(xi1 - xi0, frame_h, frame_w)
    xi0 = min(max(xi0, 0), frame_w - side)
    yi0 = min(max(yi0, 0), frame_h - side)
    return xi0, yi0, xi0 + side, yi0 + side


def crop_face(frame: np.ndarray, landmarks: np.ndarray, spec: CropSpec = CropSpec()) -> np.ndarray:
    """Square face crop of one frame, resized to out_size with bicubic interpolation.

    landmarks is either a (K, 2) point set or a length-4 [x0, y0, x1, y1] box.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or frame.size == 0:
        raise ValueError(f"frame must be [H, W, 3], got {frame.shape}")
    x_lo, y_lo, x_hi, y_hi = _extremes(landmarks)
    x0, y0, x1, y1 = crop_region(x_lo, y_lo, x_hi, y_hi, spec, frame.shape[0], frame.shape[1])
    patch = np.ascontiguousarray(frame[y0:y1, x0:x1], dtype=np.float32)
    out = cv2.resize(patch, (spec.out_size, spec.out_size), interpolation=cv2.INTER_CUBIC)
    return np.clip(out, 0.0, 1.0)


def average_downsample_fps(clip: VideoClip, factor: int) -> VideoClip:
    """Reduce frame rate by averaging consecutive groups of `factor` frames.

    Emulates a slower shutter: output frame i is the mean of input frames
    [i*factor, (i+1)*factor). Trailing frames short of a full group drop.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return clip
    t = clip.n_frames
    if t < factor:
        raise ValueError(f"clip has {t} frames; need at least {factor}")
    t_out = t // factor
    grouped = clip.frames[: t_out * factor].reshape(
        t_out, factor, clip.height, clip.width, 3
    )
    averaged = grouped.mean(axis=1, dtype=np.float64).astype(np.float32)
    return VideoClip(averaged, clip.fps / factor)


def preprocess_session(
    clip: VideoClip,
    landmarks: LandmarkTrack,
    spec: CropSpec = CropSpec(),
    fps_target: float = 30.0,
) -> VideoClip:
    """Full preprocessing for one session: rate conversion, then per-frame crop.

    Frame averaging runs first when the clip is faster than fps_target
    (integer factors only); landmarks for an averaged frame are taken from
    the first source frame of its group.
    """
    if landmarks.n_frames != clip.n_frames:
        raise ValueError(
            f"landmark track has {landmarks.n_frames} frames for a "
            f"{clip.n_frames}-frame video"
        )
    ratio = clip.fps / fps_target
    if ratio < 1 - 1e-9:
        raise ValueError(
            f"cannot upsample {clip.fps} fps to {fps_target} fps (only integer "
            "rate reduction is supported)"
        )
    factor = int(math.floor(ratio + 0.5))
    if abs(ratio - factor) > 1e-6:
        raise ValueError(
            f"{clip.fps} fps is not an integer multiple of target {fps_target} fps"
        )
    if factor > 1:
        clip = average_downsample_fps(clip, factor)
        landmarks = landmarks.subsample(np.arange(clip.n_frames) * factor)
    out = np.empty((clip.n_frames, spec.out_size, spec.out_size, 3), dtype=np.float32)
    for i in range(clip.n_frames):
        out[i] = crop_face(clip.frames[i], landmarks.frame_landmarks(i), spec)
    return VideoClip(out, fps_target)


def save_clip(path: str | Path, clip: VideoClip) -> None:
    """Cache a clip as a raw little-endian float32 tensor plus a JSON sidecar.

    Layout: 16-byte header (magic, version, dtype tag, reserved, T, H, W)
    followed by frame-major [T, H, W, 3] data; `<path>.json` holds {fps}.
    """
    path = Path(path)
    header = _HEADER.pack(
        _MAGIC, _VERSION, _DTYPE_F32, 0, clip.n_frames, clip.height, clip.width
    )
    data = np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
    path.write_bytes(header + data)
    Path(str(path) + ".json").write_text(json.dumps({"fps": clip.fps}) + "\n")


def load_clip(path: str | Path) -> VideoClip:
    """Load a clip cached by save_clip."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated clip file")
    magic, version, dtype, _, t, h, w = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype tag {dtype}")
    expect = t * h * w * 3 * 4
    payload = blob[_HEADER.size :]
    if len(payload) != expect:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, 3)
    sidecar = Path(str(path) + ".json")
    if not sidecar.is_file():
        raise ValueError(f"{path}: missing fps sidecar {sidecar.name}")
    fps = float(json.loads(sidecar.read_text())["fps"])
    return VideoClip(frames.astype(np.float32), fps)
