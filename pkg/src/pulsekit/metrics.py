"""Heart-rate error metrics, waveform correlation, and report aggregation.

ME, MAE, and RMSE operate per window on aligned heart-rate series; the
waveform correlation searches a bounded lag range for the best Pearson r.
Per-session results are averaged across sessions with normal-approximation
95% confidence intervals.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import HrSeries, Waveform

_CI_Z = 1.96


@dataclass(frozen=True)
class SessionMetrics:
    """Heart-rate and waveform metrics for one session."""

    me: float
    mae: float
    rmse: float
    r_wave: float
    n_windows: int
    lag_used: int

    def as_dict(self) -> dict:
        return {
            "me": self.me,
            "mae": self.mae,
            "rmse": self.rmse,
            "r_wave": self.r_wave,
            "n_windows": self.n_windows,
            "lag_used": self.lag_used,
        }


@dataclass(frozen=True)
class MetricsReport:
    """Per-session metrics plus across-session aggregates and the config echo."""

    sessions: dict[str, SessionMetrics]
    aggregate: dict[str, tuple[float, float]]  # metric -> (mean, ci95)
    config: dict
    diagnostics: dict[str, dict] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "n_sessions": len(self.sessions),
            "sessions": {
                sid: {**m.as_dict(), **self.diagnostics.get(sid, {})}
                for sid, m in self.sessions.items()
            },
            "aggregate": {
                name: {"mean": mean, "ci95": ci}
                for name, (mean, ci) in self.aggregate.items()
            },
        }


def _joint_values(hr_pred: HrSeries, hr_gt: HrSeries) -> tuple[np.ndarray, np.ndarray]:
    if len(hr_pred) != len(hr_gt):
        raise ValueError(
            f"series lengths differ ({len(hr_pred)} vs {len(hr_gt)}); truncate first"
        )
    joint = hr_pred.valid & hr_gt.valid
    if not joint.any():
        raise ValueError("no jointly valid windows")
    return hr_pred.bpm[joint], hr_gt.bpm[joint]


def mean_error(hr_pred: HrSeries, hr_gt: HrSeries) -> float:
    """Signed bias: mean of predicted minus ground-truth BPM over valid windows."""
    p, g = _joint_values(hr_pred, hr_gt)
    return float(np.mean(p - g))


def mean_absolute_error(hr_pred: HrSeries, hr_gt: HrSeries) -> float:
    """Mean absolute BPM error over jointly valid windows."""
    p, g = _joint_values(hr_pred, hr_gt)
    return float(np.mean(np.abs(p - g)))


def rmse(hr_pred: HrSeries, hr_gt: HrSeries) -> float:
    """Root-mean-squared BPM error over jointly valid windows."""
    p, g = _joint_values(hr_pred, hr_gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def n_joint_windows(hr_pred: HrSeries, hr_gt: HrSeries) -> int:
    if len(hr_pred) != len(hr_gt):
        raise ValueError("series lengths differ; truncate first")
    return int(np.sum(hr_pred.valid & hr_gt.valid))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a)
    vb = float(b @ b)
    if va <= 0 or vb <= 0:
        raise ValueError("zero variance")
    r = float(a @ b) / math.sqrt(va * vb)
    return min(1.0, max(-1.0, r))


def _lag_order(max_lag: int):
    yield 0
    for k in range(1, max_lag + 1):
        yield k
        yield -k


def r_wave(pred: Waveform, gt: Waveform, max_lag_s: float = 0.0) -> tuple[float, int]:
    """Best Pearson correlation between the waves over a bounded lag search.

    Positive lag means the prediction trails the ground truth by that many
    samples. Masked samples are excluded pairwise at each lag; ties prefer
    the smaller |lag|. Returns (r, lag).
    """
    if abs(pred.fs - gt.fs) > 1e-9 * max(pred.fs, gt.fs):
        raise ValueError(f"sample-rate mismatch: pred {pred.fs} Hz vs gt {gt.fs} Hz")
    max_lag = int(math.floor(max_lag_s * pred.fs))
    p = pred.samples
    g = gt.samples
    pm = pred.valid_mask()
    gm = gt.valid_mask()
    n = min(len(p), len(g))
    best: tuple[float, int] | None = None
    degenerate = 0
    for lag in _lag_order(max_lag):
        if lag >= 0:
            ps, gs = p[lag:n], g[: n - lag]
            ms = pm[lag:n] & gm[: n - lag]
        else:
            ps, gs = p[: n + lag], g[-lag:n]
            ms = pm[: n + lag] & gm[-lag:n]
        if int(ms.sum()) < 2:
            degenerate += 1
            continue
        try:
            r = _pearson(ps[ms], gs[ms])
        except ValueError:
            degenerate += 1
            continue
        if best is None or r > best[0]:
            best = (r, lag)
    if best is None:
        raise ValueError(
            "waveform correlation undefined: zero variance or not enough overlap "
            f"at all {2 * max_lag + 1} lags"
        )
    return best


def neg_pearson_loss(pred: Sequence[float], target: Sequence[float]) -> float:
    """Negative Pearson correlation, the scale- and offset-free training loss."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or len(p) < 2:
        raise ValueError("pred and target must be equal-length 1-D sequences (>= 2)")
    return -_pearson(p, t)


@dataclass(frozen=True)
class ZeroEffortBaseline:
    """Errors of the constant predictor, averaged across sessions."""

    me: float
    mae: float
    rmse: float


def zero_effort(
    hr_gt_sessions: Sequence[HrSeries], constant_bpm: float
) -> ZeroEffortBaseline:
    """Metrics of a predictor that always outputs constant_bpm.

    Per-session ME/MAE/RMSE against the constant are averaged across
    sessions; ME is exactly 0 when the constant equals the mean of the
    per-session mean heart rates.
    """
    if not hr_gt_sessions:
        raise ValueError("need at least one session")
    mes, maes, rmses = [], [], []
    for hr in hr_gt_sessions:
        g = hr.bpm[hr.valid]
        if not len(g):
            raise ValueError("session has no valid windows")
        d = constant_bpm - g
        mes.append(float(np.mean(d)))
        maes.append(float(np.mean(np.abs(d))))
        rmses.append(float(np.sqrt(np.mean(d * d))))
    return ZeroEffortBaseline(
        me=float(np.mean(mes)), mae=float(np.mean(maes)), rmse=float(np.mean(rmses))
    )


def _mean_ci95(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, 0.0
    return mean, float(_CI_Z * arr.std(ddof=1) / math.sqrt(len(arr)))


def aggregate(
    sessions: Mapping[str, SessionMetrics],
    config: dict | None = None,
    diagnostics: Mapping[str, dict] | None = None,
) -> MetricsReport:
    """Average per-session metrics with 95% confidence intervals.

    The aggregate carries both the signed ME and the |ME| variant (absolute
    values taken before averaging).
    """
    if not sessions:
        raise ValueError("need at least one session")
    ordered = dict(sorted(sessions.items()))
    agg = {
        "me": _mean_ci95([m.me for m in ordered.values()]),
        "abs_me": _mean_ci95([abs(m.me) for m in ordered.values()]),
        "mae": _mean_ci95([m.mae for m in ordered.values()]),
        "rmse": _mean_ci95([m.rmse for m in ordered.values()]),
        "r_wave": _mean_ci95([m.r_wave for m in ordered.values()]),
    }
    return MetricsReport(
        sessions=ordered,
        aggregate=agg,
        config=dict(config or {}),
        diagnostics=dict(diagnostics or {}),
    )


def write_report_json(path: str | Path, report: MetricsReport) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )


def write_report_csv(path: str | Path, report: MetricsReport) -> None:
    """One row per session plus aggregate mean/ci95 rows."""
    fields = ["session_id", "me", "mae", "rmse", "r_wave", "n_windows", "lag_used"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for sid, m in report.sessions.items():
            writer.writerow([sid, m.me, m.mae, m.rmse, m.r_wave, m.n_windows, m.lag_used])
        means = {k: v[0] for k, v in report.aggregate.items()}
        cis = {k: v[1] for k, v in report.aggregate.items()}
        writer.writerow(["AGGREGATE_MEAN", means["me"], means["mae"], means["rmse"], means["r_wave"], "", ""])
        writer.writerow(["AGGREGATE_CI95", cis["me"], cis["mae"], cis["rmse"], cis["r_wave"], "", ""])
