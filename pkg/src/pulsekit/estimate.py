"""Classical pulse estimators and the chunked inference driver.

Estimators map a fixed-length video chunk to one pulse value per frame.
The driver slides a chunk window across the clip (stride half a chunk by
default), standardizes each chunk output, and hands the pieces to the
overlap-add stage. Externally produced chunk predictions (e.g. from a
trained model) enter through the same JSON format.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import SessionManifest, VideoClip

log = logging.getLogger(__name__)

_POS_WINDOW_S = 1.6
_POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])


@dataclass(frozen=True)
class ChunkPrediction:
    """Pulse values for one chunk, anchored at its start frame."""

    start: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if self.start < 0:
            raise ValueError(f"chunk start must be >= 0, got {self.start}")
        if values.ndim != 1 or len(values) < 1:
            raise ValueError("chunk values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"chunk at start {self.start} contains non-finite values")


@dataclass(frozen=True)
class Estimator:
    """A named chunk-to-pulse function with its chunking geometry."""

    name: str
    fn: Callable[[VideoClip], np.ndarray]
    chunk_len: int = 136
    stride: int = 68

    def __post_init__(self):
        if not 1 <= self.stride <= self.chunk_len:
            raise ValueError(
                f"need 1 <= stride <= chunk_len, got stride {self.stride}, "
                f"chunk_len {self.chunk_len}"
            )


def spatial_mean_rgb(clip: VideoClip) -> np.ndarray:
    """Per-frame spatial mean of each color channel, [T, 3] float64."""
    return clip.frames.mean(axis=(1, 2), dtype=np.float64)


def estimate_green(chunk: VideoClip) -> np.ndarray:
    """Green-channel mean trace, zero-meaned over the chunk.

    The classical baseline: blood-volume changes absorb most strongly in
    green, so the spatially averaged green channel tracks the pulse.
    """
    g = chunk.frames[..., 1].mean(axis=(1, 2), dtype=np.float64)
    return g - g.mean()


def estimate_chrom(chunk: VideoClip) -> np.ndarray:
    """Chrominance-combination estimator (de Haan & Jeanne 2013).

    Channels are normalized by their temporal means, combined into
    X = 3R - 2G and Y = 1.5R + G - 1.5B, and mixed as S = X - (sd(X)/sd(Y)) * Y
    over the whole chunk. Falls back to X alone when Y carries no variance.
    """
    rgb = spatial_mean_rgb(chunk)
    means = rgb.mean(axis=0)
    norm = np.zeros_like(rgb)
    nz = means > 1e-12
    norm[:, nz] = rgb[:, nz] / means[nz]
    x = 3.0 * norm[:, 0] - 2.0 * norm[:, 1]
    y = 1.5 * norm[:, 0] + norm[:, 1] - 1.5 * norm[:, 2]
    sy = y.std()
    if sy < 1e-12:
        log.warning("CHROM: zero variance in Y component, falling back to X alone")
        s = x
    else:
        s = x - (x.std() / sy) * y
    return s - s.mean()


def estimate_pos(chunk: VideoClip) -> np.ndarray:
    """Plane-orthogonal-to-skin estimator (Wang et al. 2017).

    Temporally normalized RGB is projected onto [[0, 1, -1], [-2, 1, 1]],
    the two components are mixed with an adaptive gain, and standardized
    window outputs are overlap-added with a 1.6 s sliding window.
    """
    fps = chunk.fps
    t = chunk.n_frames
    win = int(round(_POS_WINDOW_S * fps))
    if t < win:
        raise ValueError(f"chunk of {t} frames is shorter than the POS window ({win})")
    rgb = spatial_mean_rgb(chunk)
    h = np.zeros(t, dtype=np.float64)
    for start in range(0, t - win + 1):
        c = rgb[start : start + win].T
        m = c.mean(axis=1)
        if np.any(m < 1e-12):
            continue
        cn = c / m[:, None]
        s2 = _POS_PROJECTION @ cn
        sd1 = s2[1].std()
        p = s2[0] + (s2[0].std() / sd1) * s2[1] if sd1 >= 1e-12 else s2[0]
        sp = p.std()
        if sp < 1e-12:
            continue
        h[start : start + win] += (p - p.mean()) / sp
    return h - h.mean()


_ESTIMATOR_FNS: dict[str, Callable[[VideoClip], np.ndarray]] = {
    "green": estimate_green,
    "chrom": estimate_chrom,
    "pos": estimate_pos,
}


def get_estimator(name: str, chunk_len: int = 136, stride: int = 68) -> Estimator:
    """Look up a built-in estimator by name (green, chrom, pos)."""
    try:
        fn = _ESTIMATOR_FNS[name]
    except KeyError:
        raise ValueError(
            f"unknown estimator '{name}' (choose from {sorted(_ESTIMATOR_FNS)})"
        ) from None
    return Estimator(name=name, fn=fn, chunk_len=chunk_len, stride=stride)


def run_chunked(estimator: Estimator, clip: VideoClip) -> list[ChunkPrediction]:
    """Run an estimator over sliding chunks of a clip.

    Chunks start at 0, stride, 2*stride, ... while a full chunk fits; each
    chunk's output is standardized to zero mean and unit variance so the
    Hann overlap-add stage can merge them coherently. Tail frames past the
    last full chunk are not predicted.
    """
    t = clip.n_frames
    if t < estimator.chunk_len:
        raise ValueError(
            f"clip of {t} frames is shorter than one chunk ({estimator.chunk_len})"
        )
    out = []
    for start in range(0, t - estimator.chunk_len + 1, estimator.stride):
        sub = VideoClip(clip.frames[start : start + estimator.chunk_len], clip.fps)
        values = np.asarray(estimator.fn(sub), dtype=np.float64)
        if len(values) != estimator.chunk_len:
            raise ValueError(
                f"estimator {estimator.name} returned {len(values)} values for a "
                f"{estimator.chunk_len}-frame chunk"
            )
        sd = values.std()
        values = (values - values.mean()) / sd if sd >= 1e-12 else np.zeros_like(values)
        out.append(ChunkPrediction(start=start, values=values))
    return out


@dataclass(frozen=True)
class PredictionSet:
    """Chunk predictions for one session plus their geometry."""

    chunk_len: int
    stride: int
    fps: float
    chunks: tuple[ChunkPrediction, ...]
    estimator: str | None = None  # provenance only, not part of the geometry


def save_predictions(path: str | Path, pred: PredictionSet) -> None:
    """Write predictions JSON: {chunk_len, stride, fps, chunks: [{start, values}]}."""
    data = {
        "chunk_len": pred.chunk_len,
        "stride": pred.stride,
        "fps": pred.fps,
        "chunks": [
            {"start": int(c.start), "values": [float(v) for v in c.values]}
            for c in pred.chunks
        ],
    }
    if pred.estimator is not None:
        data["estimator"] = pred.estimator
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")


def load_external_predictions(
    path: str | Path, session: SessionManifest | None = None
) -> PredictionSet:
    """Load and validate a predictions JSON file.

    Every chunk must have exactly chunk_len values; starts off the stride
    grid are accepted with a warning. When a session manifest is given its
    frame rate is cross-checked against the file.
    """
    path = Path(path)
    data = json.loads(path.read_text())
    for key in ("chunk_len", "stride", "fps", "chunks"):
        if key not in data:
            raise ValueError(f"{path}: missing field '{key}'")
    chunk_len = int(data["chunk_len"])
    stride = int(data["stride"])
    fps = float(data["fps"])
    if not 1 <= stride <= chunk_len:
        raise ValueError(f"{path}: need 1 <= stride <= chunk_len")
    chunks = []
    for entry in data["chunks"]:
        start = int(entry["start"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if len(values) != chunk_len:
            raise ValueError(
                f"{path}: chunk at start {start} has {len(values)} values, "
                f"expected {chunk_len}"
            )
        if start % stride != 0:
            log.warning("%s: chunk start %d is off the stride grid (%d)", path, start, stride)
        chunks.append(ChunkPrediction(start=start, values=values))
    chunks.sort(key=lambda c: c.start)
    if session is not None and abs(session.fps - fps) > 1e-9 * max(session.fps, fps):
        log.warning(
            "%s: prediction fps %s differs from session %s fps %s",
            path, fps, session.session_id, session.fps,
        )
    return PredictionSet(
        chunk_len=chunk_len,
        stride=stride,
        fps=fps,
        chunks=tuple(chunks),
        estimator=data.get("estimator"),
    )
