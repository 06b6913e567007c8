"""Domain types, session ingestion, and seeded randomness.

Everything downstream works in terms of three value types: a VideoClip
(normalized RGB frames plus a frame rate), a Waveform (a uniformly sampled
pulse signal with an optional validity mask), and an HrSeries (per-frame
heart rates in BPM). All types are immutable after construction and safe to
share across parallel workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FrameLoadError, ManifestError

# Pulse search band in Hz (40 to 180 BPM).
DEFAULT_BAND = (2.0 / 3.0, 3.0)

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class VideoClip:
    """A time-ordered stack of RGB frames.

    frames: float32 array [T, H, W, 3] with intensities in [0, 1].
    fps: frames per second.
    """

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise ValueError(f"frames must have shape [T, H, W, 3], got {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1 or frames.shape[2] < 1:
            raise ValueError(f"frames must be non-empty, got shape {frames.shape}")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        lo = float(frames.min())
        hi = float(frames.max())
        if lo < -1e-5 or hi > 1 + 1e-5:
            raise ValueError(f"frame intensities must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


@dataclass(frozen=True)
class Waveform:
    """A uniformly sampled 1-D pulse signal.

    mask, when present, flags valid samples; invalid samples are excluded
    from metric sums and poison any STFT window that overlaps them.
    """

    samples: np.ndarray
    fs: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or len(samples) < 1:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            object.__setattr__(self, "mask", mask)
            if mask.shape != samples.shape:
                raise ValueError(
                    f"mask length {mask.shape} does not match samples {samples.shape}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.fs

    def valid_mask(self) -> np.ndarray:
        """Boolean validity per sample (all True when no mask is set)."""
        if self.mask is None:
            return np.ones(len(self.samples), dtype=bool)
        return self.mask


@dataclass(frozen=True)
class HrSeries:
    """Per-frame heart rates in BPM, with per-entry validity.

    band is the [lo, hi] frequency range (Hz) used for peak picking; every
    valid bpm entry lies within [band.lo*60, band.hi*60]. Invalid entries
    hold NaN and are skipped by all metrics.
    """

    bpm: np.ndarray
    fs: float
    band: tuple[float, float] = DEFAULT_BAND
    valid: np.ndarray | None = None

    def __post_init__(self):
        bpm = np.asarray(self.bpm, dtype=np.float64)
        object.__setattr__(self, "bpm", bpm)
        if bpm.ndim != 1 or len(bpm) < 1:
            raise ValueError("bpm must be a non-empty 1-D sequence")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        lo, hi = self.band
        if not (0 < lo < hi):
            raise ValueError(f"band must satisfy 0 < lo < hi, got {self.band}")
        if self.valid is None:
            valid = np.ones(len(bpm), dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
        object.__setattr__(self, "valid", valid)
        if valid.shape != bpm.shape:
            raise ValueError("valid flags must match bpm length")
        good = bpm[valid]
        if len(good) and not np.all(np.isfinite(good)):
            raise ValueError("valid bpm entries must be finite")
        if len(good):
            vlo, vhi = float(good.min()), float(good.max())
            if vlo < lo * 60 - 1e-6 or vhi > hi * 60 + 1e-6:
                raise ValueError(
                    f"bpm values [{vlo}, {vhi}] fall outside band "
                    f"[{lo * 60}, {hi * 60}] BPM"
                )

    def __len__(self) -> int:
        return len(self.bpm)


@dataclass(frozen=True)
class LandmarkTrack:
    """Per-frame facial landmarks: either 2-D point sets or bounding boxes.

    points: one (K, 2) array of [x, y] pixel coordinates per frame, or
    boxes: a (T, 4) array of [x0, y0, x1, y1] per frame. Exactly one is set.
    """

    points: tuple[np.ndarray, ...] | None = None
    boxes: np.ndarray | None = None

    def __post_init__(self):
        if (self.points is None) == (self.boxes is None):
            raise ValueError("exactly one of points/boxes must be provided")
        if self.points is not None:
            pts = tuple(np.asarray(p, dtype=np.float64) for p in self.points)
            object.__setattr__(self, "points", pts)
            if len(pts) < 1:
                raise ValueError("landmark track must cover at least one frame")
            for i, p in enumerate(pts):
                if p.ndim != 2 or p.shape[1] != 2:
                    raise ValueError(f"frame {i}: landmark points must be (K, 2)")
                if not np.all(np.isfinite(p)):
                    raise ValueError(f"frame {i}: landmark coordinates must be finite")
        else:
            boxes = np.asarray(self.boxes, dtype=np.float64)
            object.__setattr__(self, "boxes", boxes)
            if boxes.ndim != 2 or boxes.shape[1] != 4 or boxes.shape[0] < 1:
                raise ValueError("boxes must be a (T, 4) array")
            if not np.all(np.isfinite(boxes)):
                raise ValueError("box coordinates must be finite")

    @property
    def n_frames(self) -> int:
        return len(self.points) if self.points is not None else len(self.boxes)

    def frame_landmarks(self, i: int) -> np.ndarray:
        """Landmarks for frame i: a (K, 2) point set or a length-4 box."""
        if self.points is not None:
            return self.points[i]
        return self.boxes[i]

    def subsample(self, indices) -> "LandmarkTrack":
        """Track restricted to the given frame indices."""
        if self.points is not None:
            return LandmarkTrack(points=tuple(self.points[i] for i in indices))
        return LandmarkTrack(boxes=self.boxes[list(indices)])


_MANIFEST_FIELDS = {
    "session_id": str,
    "subject_id": str,
    "frames_dir": str,
    "fps": (int, float),
    "gt_waveform": str,
    "gt_fs": (int, float),
}


@dataclass(frozen=True)
class SessionManifest:
    """Description of one recording session."""

    session_id: str
    subject_id: str
    frames_dir: Path
    fps: float
    gt_waveform: Path
    gt_fs: float
    landmarks: Path | None = None

    def __post_init__(self):
        if not self.fps > 0:
            raise ManifestError(f"manifest field 'fps' must be positive, got {self.fps}")
        if not self.gt_fs > 0:
            raise ManifestError(f"manifest field 'gt_fs' must be positive, got {self.gt_fs}")

    @classmethod
    def from_json(cls, path: str | Path) -> "SessionManifest":
        """Load and validate a manifest JSON file.

        Relative paths inside the manifest are resolved against its directory.
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ManifestError(f"{path}: manifest must be a JSON object")
        for name, types in _MANIFEST_FIELDS.items():
            if name not in data:
                raise ManifestError(f"{path}: missing required field '{name}'")
            if not isinstance(data[name], types) or isinstance(data[name], bool):
                raise ManifestError(f"{path}: field '{name}' has wrong type")
        landmarks = data.get("landmarks")
        if landmarks is not None and not isinstance(landmarks, str):
            raise ManifestError(f"{path}: field 'landmarks' must be a string or null")
        base = path.parent
        return cls(
            session_id=data["session_id"],
            subject_id=data["subject_id"],
            frames_dir=(base / data["frames_dir"]).resolve(),
            fps=float(data["fps"]),
            gt_waveform=(base / data["gt_waveform"]).resolve(),
            gt_fs=float(data["gt_fs"]),
            landmarks=(base / landmarks).resolve() if landmarks else None,
        )

    def save(self, path: str | Path) -> None:
        """Write the manifest JSON with paths relative to its directory."""
        path = Path(path)
        base = path.parent.resolve()

        def rel(p: Path) -> str:
            p = p.resolve()
            try:
                return str(p.relative_to(base))
            except ValueError:
                return str(p)

        data = {
            "session_id": self.session_id,
            "subject_id": self.subject_id,
            "frames_dir": rel(self.frames_dir),
            "fps": self.fps,
            "gt_waveform": rel(self.gt_waveform),
            "gt_fs": self.gt_fs,
            "landmarks": rel(self.landmarks) if self.landmarks else None,
        }
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _label_key(label: str) -> tuple[int, int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:8], "little"),
    )


@dataclass(frozen=True)
class RngState:
    """Deterministic per-purpose random stream.

    Identical (seed, label) pairs reproduce identical draw sequences no
    matter which other streams were used in between.
    """

    seed: int
    label: str = ""

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=_label_key(self.label))
        return np.random.default_rng(seq)

    def child(self, label: str) -> "RngState":
        sub = f"{self.label}/{label}" if self.label else label
        return RngState(self.seed, sub)


def read_waveform_csv(path: str | Path, fs: float) -> Waveform:
    """Read a one-sample-per-line CSV (optional leading 'value' header)."""
    path = Path(path)
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: waveform file is empty")
    start = 1 if lines[0].lower() == "value" else 0
    try:
        samples = np.array([float(ln) for ln in lines[start:]], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: unparseable waveform sample ({exc})") from exc
    return Waveform(samples, fs)


def write_waveform_csv(path: str | Path, wave: Waveform | np.ndarray) -> None:
    samples = wave.samples if isinstance(wave, Waveform) else np.asarray(wave)
    lines = ["value"] + [repr(float(v)) for v in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_landmarks_json(path: str | Path, n_frames: int | None = None) -> LandmarkTrack:
    """Read a landmarks JSON: per frame either [[x, y], ...] or [x0, y0, x1, y1]."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid landmarks JSON ({exc})") from exc
    if not isinstance(data, list) or not data:
        raise ManifestError(f"{path}: landmarks must be a non-empty array")
    if n_frames is not None and len(data) != n_frames:
        raise ManifestError(
            f"{path}: landmarks file has {len(data)} entries for a "
            f"{n_frames}-frame video"
        )
    first = data[0]
    if isinstance(first, list) and len(first) == 4 and all(
        isinstance(v, (int, float)) for v in first
    ):
        return LandmarkTrack(boxes=np.asarray(data, dtype=np.float64))
    return LandmarkTrack(points=tuple(np.asarray(f, dtype=np.float64) for f in data))


def _list_frame_files(frames_dir: Path) -> list[Path]:
    files = sorted(
        p for p in frames_dir.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not files:
        raise FrameLoadError(f"{frames_dir}: no frame images found")
    stems = [p.stem for p in files]
    if all(s.isdigit() for s in stems):
        numbers = [int(s) for s in stems]
        expect = range(numbers[0], numbers[0] + len(numbers))
        for got, want in zip(numbers, expect):
            if got != want:
                raise FrameLoadError(f"{frames_dir}: missing frame index {want}")
    return files


def load_session(
    manifest: SessionManifest,
) -> tuple[VideoClip, Waveform, LandmarkTrack | None]:
    """Load the frames, ground-truth waveform, and landmarks of a session.

    Frames are normalized from 8-bit to [0, 1]; the waveform is returned at
    its native gt_fs (alignment with the video happens downstream).
    """
    if not manifest.frames_dir.is_dir():
        raise ManifestError(f"frames_dir does not exist: {manifest.frames_dir}")
    if not manifest.gt_waveform.is_file():
        raise ManifestError(f"gt_waveform does not exist: {manifest.gt_waveform}")
    files = _list_frame_files(manifest.frames_dir)
    frames = []
    shape = None
    for i, f in enumerate(files):
        try:
            with Image.open(f) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            raise FrameLoadError(f"frame {i} ({f.name}): cannot decode ({exc})") from exc
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise FrameLoadError(
                f"frame {i} ({f.name}): size {arr.shape} differs from {shape}"
            )
        frames.append(arr)
    video = VideoClip(np.stack(frames).astype(np.float32) / 255.0, manifest.fps)
    wave = read_waveform_csv(manifest.gt_waveform, manifest.gt_fs)
    landmarks = None
    if manifest.landmarks is not None:
        if not manifest.landmarks.is_file():
            raise ManifestError(f"landmarks path does not exist: {manifest.landmarks}")
        landmarks = read_landmarks_json(manifest.landmarks, n_frames=video.n_frames)
    return video, wave, landmarks


def resample_waveform(wave: Waveform, target_fs: float) -> Waveform:
    """Linearly resample a waveform to target_fs, end-clamped.

    Output length is round(len * target_fs / fs). A resampled sample is
    invalid if either of its flanking input samples is invalid.
    """
    if not target_fs > 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if target_fs == wave.fs:
        return wave
    n_in = len(wave)
    n_out = max(1, int(math.floor(n_in * target_fs / wave.fs + 0.5)))
    pos = np.arange(n_out, dtype=np.float64) * (wave.fs / target_fs)
    pos = np.clip(pos, 0.0, n_in - 1)
    out = np.interp(pos, np.arange(n_in, dtype=np.float64), wave.samples)
    mask = None
    if wave.mask is not None:
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        exact = pos == i0
        mask = wave.mask[i0] & np.where(exact, True, wave.mask[i1])
    return Waveform(out, target_fs, mask)


def truncate_to_match(gt: Waveform, pred: Waveform) -> tuple[Waveform, Waveform]:
    """Trim the longer waveform's tail so both have the same length."""
    if abs(gt.fs - pred.fs) > 1e-9 * max(gt.fs, pred.fs):
        raise ValueError(f"sample-rate mismatch: gt {gt.fs} Hz vs pred {pred.fs} Hz")
    n = min(len(gt), len(pred))

    def cut(w: Waveform) -> Waveform:
        if len(w) == n:
            return w
        mask = w.mask[:n] if w.mask is not None else None
        return Waveform(w.samples[:n], w.fs, mask)

    return cut(gt), cut(pred)
