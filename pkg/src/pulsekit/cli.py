"""Command-line orchestration of the pipeline.

Commands communicate only through files so every experiment stage leaves a
reproducible artifact: synth writes a dataset of session directories,
preprocess caches rate-normalized cropped clips, estimate emits chunked
predictions, evaluate produces the metrics report, stats the dataset
summary. Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augment import apply_augmentation, source_hr
from .core import (
    SessionManifest,
    VideoClip,
    Waveform,
    load_session,
    read_waveform_csv,
    resample_waveform,
    truncate_to_match,
    write_waveform_csv,
)
from .errors import ManifestError, PipelineError
from .estimate import (
    PredictionSet,
    get_estimator,
    load_external_predictions,
    run_chunked,
    save_predictions,
)
from .metrics import (
    SessionMetrics,
    aggregate,
    mean_absolute_error,
    mean_error,
    n_joint_windows,
    neg_pearson_loss,
    r_wave,
    rmse,
    write_report_csv,
    write_report_json,
)
from .postprocess import (
    StftConfig,
    dataset_stats,
    hr_full,
    hr_series,
    mask_unstable_gt,
    overlap_add,
)
from .preprocess import CropSpec, load_clip, preprocess_session, save_clip
from .synth import HrTrajectory, SynthSpec, synth_session

_VARIANT_WINDOW_S = {"w10": 10.0, "w30": 30.0, "wfull": None}


class _Parser(argparse.ArgumentParser):
    """argparse with validation failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def manifest_paths(path: str | Path) -> list[Path]:
    """Manifest files under a dataset directory (or a single manifest file)."""
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise ManifestError(f"dataset path does not exist: {p}")
    candidates = sorted(p.glob("*/manifest.json"))
    if (p / "manifest.json").is_file():
        candidates.insert(0, p / "manifest.json")
    if not candidates:
        raise ManifestError(f"no manifest.json found under {p}")
    return candidates


def discover_manifests(path: str | Path) -> list[tuple[Path, SessionManifest]]:
    """Parsed session manifests with their file paths."""
    return [(c, SessionManifest.from_json(c)) for c in manifest_paths(path)]


def _run_sessions(items, worker, jobs: int, keep_going: bool):
    """Run worker over (key, payload) items, optionally in parallel.

    Returns (results, failures) keyed by session id; results are collected
    in deterministic key order regardless of completion order.
    """
    results: dict = {}
    failures: dict = {}
    if jobs <= 1:
        for key, payload in items:
            try:
                results[key] = worker(payload)
            except Exception as exc:  # noqa: BLE001 - reported per session
                if not keep_going:
                    raise PipelineError(f"session {key}: {exc}") from exc
                failures[key] = str(exc)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(worker, payload) for key, payload in items}
            for key, fut in futures.items():
                try:
                    results[key] = fut.result()
                except Exception as exc:  # noqa: BLE001
                    if not keep_going:
                        raise PipelineError(f"session {key}: {exc}") from exc
                    failures[key] = str(exc)
    return dict(sorted(results.items())), dict(sorted(failures.items()))


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hrs = [float(v) for v in args.hr.split(",")] if args.hr else []
    for i in range(args.sessions):
        base = hrs[i % len(hrs)] if hrs else 80.0
        traj = HrTrajectory(
            kind=args.kind,
            duration_s=args.duration,
            base_bpm=base,
            slope_bpm_s=args.slope,
            depth_bpm=args.depth,
            period_s=args.period,
        )
        spec = SynthSpec(
            trajectory=traj,
            fps=args.fps,
            size=args.size,
            pulse_amplitude=args.pulse_amplitude,
            harmonic_ratio=args.harmonic_ratio,
            noise_sigma=args.noise_sigma,
            illum_drift_amplitude=args.drift_amplitude,
            seed=args.seed + i,
            gt_fs=args.gt_fs,
        )
        sid = f"sess{i:02d}"
        synth_session(spec, out / sid, session_id=sid, subject_id=f"subj{i:02d}")
        print(f"wrote {out / sid}")
    return 0


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def _preprocess_worker(payload) -> str:
    manifest_path, out_dir, crop, fps_target = payload
    manifest = SessionManifest.from_json(manifest_path)
    video, wave, landmarks = load_session(manifest)
    if landmarks is None:
        raise ManifestError(
            f"session {manifest.session_id} has no landmarks; cropping requires them"
        )
    clip = preprocess_session(video, landmarks, crop, fps_target)
    out_dir = Path(out_dir)
    clip_path = out_dir / f"{manifest.session_id}.rppg"
    save_clip(clip_path, clip)
    meta = {
        "session_id": manifest.session_id,
        "subject_id": manifest.subject_id,
        "fps": fps_target,
        "clip": clip_path.name,
        "gt_waveform": str(manifest.gt_waveform),
        "gt_fs": manifest.gt_fs,
    }
    (out_dir / f"{manifest.session_id}.session.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n"
    )
    return clip_path.name


def cmd_preprocess(args) -> int:
    manifests = discover_manifests(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    crop = CropSpec(
        pad_top=args.pad_top,
        pad_sides=args.pad_sides,
        pad_bottom=args.pad_bottom,
        out_size=args.out_size,
    )
    items = [
        (m.session_id, (str(path), str(out), crop, args.fps_target))
        for path, m in manifests
    ]
    results, failures = _run_sessions(items, _preprocess_worker, args.jobs, args.keep_going)
    for sid, name in results.items():
        print(f"{sid}: {name}")
    for sid, msg in failures.items():
        print(f"{sid}: FAILED ({msg})", file=sys.stderr)
    return 0 if not failures or args.keep_going else 2


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _session_metas(pre_dir: Path) -> list[dict]:
    metas = []
    for path in sorted(pre_dir.glob("*.session.json")):
        meta = json.loads(path.read_text())
        meta["_dir"] = str(pre_dir)
        metas.append(meta)
    if not metas:
        raise ManifestError(f"no preprocessed sessions (*.session.json) under {pre_dir}")
    return metas


def _estimate_worker(payload) -> str:
    meta, out_dir, name, chunk_len, stride = payload
    estimator = get_estimator(name, chunk_len=chunk_len, stride=stride)
    clip = load_clip(Path(meta["_dir"]) / meta["clip"])
    chunks = run_chunked(estimator, clip)
    pred = PredictionSet(
        chunk_len=chunk_len, stride=stride, fps=clip.fps, chunks=tuple(chunks),
        estimator=name,
    )
    out_path = Path(out_dir) / f"{meta['session_id']}.pred.json"
    save_predictions(out_path, pred)
    return out_path.name


def cmd_estimate(args) -> int:
    metas = _session_metas(Path(args.pre))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = [
        (m["session_id"], (m, str(out), args.estimator, args.chunk_len, args.stride))
        for m in metas
    ]
    results, failures = _run_sessions(items, _estimate_worker, args.jobs, args.keep_going)
    for sid, name in results.items():
        print(f"{sid}: {name}")
    for sid, msg in failures.items():
        print(f"{sid}: FAILED ({msg})", file=sys.stderr)
    return 0 if not failures or args.keep_going else 2


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _stft_config(args, window_s: float | None) -> StftConfig:
    return StftConfig(
        window_s=window_s if window_s is not None else 10.0,
        stride_frames=args.stride_frames,
        bin_hz=args.bin_hz,
        band=(args.band_lo, args.band_hi),
    )


def _evaluate_worker(payload):
    meta, pred_dir, variant, cfg_kw, max_lag_s, mask_cfg = payload
    cfg = StftConfig(**cfg_kw)
    pred_path = Path(pred_dir) / f"{meta['session_id']}.pred.json"
    if not pred_path.is_file():
        raise ManifestError(f"missing predictions file {pred_path}")
    preds = load_external_predictions(pred_path)
    gt = read_waveform_csv(meta["gt_waveform"], meta["gt_fs"])
    gt = resample_waveform(gt, preds.fps)
    last = preds.chunks[-1].start + preds.chunk_len if preds.chunks else 0
    if not preds.chunks:
        raise ValueError(f"{pred_path}: no chunks")
    pred_wave = overlap_add(preds.chunks, last, preds.fps)
    gt_w, pred_w = truncate_to_match(gt, pred_wave)

    if variant == "wfull":
        hp = hr_full(pred_w, cfg)
        hg = hr_full(gt_w, cfg)
        diff = hp - hg
        me, mae_v, rmse_v, n_win = diff, abs(diff), abs(diff), 1
        sq_errors = [diff * diff]
    else:
        hr_p = hr_series(pred_w, cfg)
        hr_g = hr_series(gt_w, cfg)
        if mask_cfg is not None:
            hr_g = mask_unstable_gt(hr_g, mask_cfg[0], mask_cfg[1])
        me = mean_error(hr_p, hr_g)
        mae_v = mean_absolute_error(hr_p, hr_g)
        rmse_v = rmse(hr_p, hr_g)
        n_win = n_joint_windows(hr_p, hr_g)
        sq_errors = None

    r, lag = r_wave(pred_w, gt_w, max_lag_s)
    joint = pred_w.valid_mask() & gt_w.valid_mask()
    diag = {}
    if int(joint.sum()) >= 2:
        try:
            diag["neg_pearson"] = neg_pearson_loss(
                pred_w.samples[joint], gt_w.samples[joint]
            )
        except ValueError:
            pass
    sm = SessionMetrics(
        me=me, mae=mae_v, rmse=rmse_v, r_wave=r, n_windows=n_win, lag_used=lag
    )
    return sm, diag, sq_errors, preds.estimator


def _write_plots(report, out_dir: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "pulsekit"
    panels = {
        "abs_me_box.svg": ("|ME| (BPM)", [abs(m.me) for m in report.sessions.values()]),
        "mae_box.svg": ("MAE (BPM)", [m.mae for m in report.sessions.values()]),
    }
    for name, (label, values) in panels.items():
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.boxplot([values], tick_labels=[label])
        ax.set_ylabel("BPM")
        fig.tight_layout()
        fig.savefig(out_dir / name, metadata={"Date": None})
        plt.close(fig)


def cmd_evaluate(args) -> int:
    metas = _session_metas(Path(args.pre))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    window_s = _VARIANT_WINDOW_S[args.variant]
    cfg = _stft_config(args, window_s)
    cfg_kw = {
        "window_s": cfg.window_s,
        "stride_frames": cfg.stride_frames,
        "bin_hz": cfg.bin_hz,
        "band": cfg.band,
    }
    mask_cfg = (args.mask_threshold, args.mask_segment_s) if args.mask_unstable_gt else None
    items = [
        (
            m["session_id"],
            (m, str(args.pred), args.variant, cfg_kw, args.max_lag_s, mask_cfg),
        )
        for m in metas
    ]
    results, failures = _run_sessions(items, _evaluate_worker, args.jobs, args.keep_going)
    if not results:
        raise ValueError("no sessions evaluated (empty dataset or all sessions failed)")
    sessions = {sid: r[0] for sid, r in results.items()}
    diagnostics = {sid: r[1] for sid, r in results.items() if r[1]}
    estimators = sorted({r[3] for r in results.values() if r[3] is not None})
    config = {
        "command": "evaluate",
        "version": __version__,
        "estimator": estimators[0] if len(estimators) == 1 else estimators or None,
        "variant": args.variant,
        "stft": {
            "window_s": cfg.window_s,
            "stride_frames": cfg.stride_frames,
            "bin_hz": cfg.bin_hz,
            "band": list(cfg.band),
        },
        "max_lag_s": args.max_lag_s,
        "mask_unstable_gt": bool(args.mask_unstable_gt),
        "mask_threshold": args.mask_threshold,
        "mask_segment_s": args.mask_segment_s,
        "seed": args.seed,
        "pre": str(args.pre),
        "pred": str(args.pred),
        "failures": failures,
    }
    report = aggregate(sessions, config=config, diagnostics=diagnostics)
    if args.variant == "wfull":
        # Full-FFT variant additionally reports RMSE over the concatenated
        # per-session errors rather than the mean of per-session RMSEs.
        sq = [r[2][0] for r in results.values()]
        report.aggregate["rmse_concat"] = (float(math.sqrt(np.mean(sq))), 0.0)
    write_report_json(out / "report.json", report)
    write_report_csv(out / "report.csv", report)
    if args.plots:
        _write_plots(report, out)
    for sid, m in report.sessions.items():
        print(
            f"{sid}: ME {m.me:+.3f}  MAE {m.mae:.3f}  RMSE {m.rmse:.3f}  "
            f"r_wave {m.r_wave:.3f}  windows {m.n_windows}"
        )
    mae_mean, mae_ci = report.aggregate["mae"]
    print(f"aggregate MAE {mae_mean:.3f} +/- {mae_ci:.3f} BPM")
    for sid, msg in failures.items():
        print(f"{sid}: FAILED ({msg})", file=sys.stderr)
    return 0 if not failures or args.keep_going else 2


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(args) -> int:
    manifests = discover_manifests(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _stft_config(args, args.window_s)
    series = []
    durations = []
    for _, m in manifests:
        wave = read_waveform_csv(m.gt_waveform, m.gt_fs)
        series.append(hr_series(wave, cfg))
        durations.append(wave.duration_s)
    stats = dataset_stats(series, durations)
    data = {
        "config": {
            "command": "stats",
            "version": __version__,
            "dataset": str(args.dataset),
            "stft": {
                "window_s": cfg.window_s,
                "stride_frames": cfg.stride_frames,
                "bin_hz": cfg.bin_hz,
                "band": list(cfg.band),
            },
            "sd_window_s": 60.0,
        },
        "n_sessions": stats.n_sessions,
        "duration_s": {"mean": stats.duration_mean, "ci95": stats.duration_ci95},
        "hr_bpm": {"mean": stats.hr_mean, "ci95": stats.hr_ci95},
        "hr_sd_bpm": {"mean": stats.hr_sd_mean, "ci95": stats.hr_sd_ci95},
    }
    (out / "stats.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    lines = [
        "stat,mean,ci95",
        f"duration_s,{stats.duration_mean!r},{stats.duration_ci95!r}",
        f"hr_bpm,{stats.hr_mean!r},{stats.hr_ci95!r}",
        f"hr_sd_bpm,{stats.hr_sd_mean!r},{stats.hr_sd_ci95!r}",
    ]
    (out / "stats.csv").write_text("\n".join(lines) + "\n")
    print(
        f"{stats.n_sessions} sessions: duration {stats.duration_mean:.3f} s, "
        f"HR {stats.hr_mean:.3f} +/- {stats.hr_ci95:.3f} BPM, "
        f"HR SD {stats.hr_sd_mean:.3f} +/- {stats.hr_sd_ci95:.3f} BPM"
    )
    return 0


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def cmd_augment(args) -> int:
    manifests = discover_manifests(args.dataset)
    matches = [m for _, m in manifests if m.session_id == args.session]
    if not matches:
        raise ValueError(f"session '{args.session}' not found in {args.dataset}")
    manifest = matches[0]
    video, gt, _ = load_session(manifest)
    wave = resample_waveform(gt, video.fps)
    n_common = min(video.n_frames, len(wave))
    video = VideoClip(video.frames[:n_common], video.fps)
    wave = Waveform(wave.samples[:n_common], wave.fs)

    cfg = _stft_config(args, 10.0)
    hr_src = args.source_hr
    if hr_src is None:
        hr_src = source_hr(wave, args.clip_start, args.clip_len, cfg)
    aug = apply_augmentation(
        video,
        wave,
        args.clip_start,
        n=args.clip_len,
        hr_source=hr_src,
        hr_target=args.target_hr,
        factor=args.factor,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sid = manifest.session_id
    save_clip(out / f"{sid}.aug.rppg", aug.video)
    write_waveform_csv(out / f"{sid}.aug.csv", aug.wave)
    provenance = {
        "target_hr": aug.provenance["hr_target"],
        "source_hr": aug.provenance["hr_source"],
        "L": aug.provenance["source_len"],
        "f": aug.provenance["factor"],
        "seed": args.seed,
        "clip_start": aug.provenance["clip_start"],
        "source_start": aug.provenance["source_start"],
        "clip_len": args.clip_len,
        "realized_hr_start": aug.realized_hr_start,
        "realized_hr_end": aug.realized_hr_end,
    }
    (out / f"{sid}.aug.json").write_text(
        json.dumps(provenance, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"{sid}: source {hr_src:.3f} BPM -> realized "
        f"[{aug.realized_hr_start:.3f}, {aug.realized_hr_end:.3f}] BPM"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_stft_args(p: _Parser) -> None:
    p.add_argument("--stride-frames", type=int, default=1, help="STFT hop in frames")
    p.add_argument("--bin-hz", type=float, default=0.001, help="frequency bin width after padding")
    p.add_argument("--band-lo", type=float, default=2.0 / 3.0, help="low edge of the pulse band (Hz)")
    p.add_argument("--band-hi", type=float, default=3.0, help="high edge of the pulse band (Hz)")


def _add_batch_args(p: _Parser) -> None:
    p.add_argument("--jobs", type=int, default=1, help="parallel session workers")
    p.add_argument("--keep-going", action="store_true", help="continue past per-session failures")


def build_parser() -> _Parser:
    parser = _Parser(prog="pulsekit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"pulsekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic sessions")
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=5)
    p.add_argument("--hr", default=None, help="comma-separated base HRs in BPM, cycled over sessions")
    p.add_argument("--kind", choices=["constant", "linear_ramp", "sinusoidal"], default="constant")
    p.add_argument("--duration", type=float, default=40.0, help="session length in seconds")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--gt-fs", type=float, default=None, help="ground-truth sample rate (defaults to fps)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--slope", type=float, default=0.0, help="ramp slope in BPM/s")
    p.add_argument("--depth", type=float, default=0.0, help="sinusoidal depth in BPM")
    p.add_argument("--period", type=float, default=10.0, help="sinusoidal period in seconds")
    p.add_argument("--pulse-amplitude", type=float, default=0.03)
    p.add_argument("--harmonic-ratio", type=float, default=0.2)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--drift-amplitude", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="crop and rate-normalize sessions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps-target", type=float, default=30.0)
    p.add_argument("--pad-top", type=float, default=0.30)
    p.add_argument("--pad-sides", type=float, default=0.05)
    p.add_argument("--pad-bottom", type=float, default=0.05)
    p.add_argument("--out-size", type=int, default=64)
    _add_batch_args(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("estimate", help="run a pulse estimator over preprocessed clips")
    p.add_argument("--pre", required=True, help="preprocess output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--estimator", choices=["green", "chrom", "pos"], default="green")
    p.add_argument("--chunk-len", type=int, default=136)
    p.add_argument("--stride", type=int, default=68)
    _add_batch_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pre", required=True, help="preprocess output directory")
    p.add_argument("--pred", required=True, help="predictions directory")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(_VARIANT_WINDOW_S), default="w10")
    p.add_argument("--max-lag-s", type=float, default=0.0,
                   help="waveform correlation lag search bound in seconds")
    p.add_argument("--mask-unstable-gt", action="store_true",
                   help="mask ground-truth segments with steep HR changes")
    p.add_argument("--mask-threshold", type=float, default=7.0)
    p.add_argument("--mask-segment-s", type=float, default=10.0)
    p.add_argument("--plots", action="store_true", help="write SVG box plots")
    p.add_argument("--seed", type=int, default=0)
    _add_stft_args(p)
    _add_batch_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="dataset summary statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-s", type=float, default=10.0, help="STFT window for the HR series")
    _add_stft_args(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("augment", help="emit one augmented clip with provenance")
    p.add_argument("--dataset", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip-start", type=int, default=0)
    p.add_argument("--clip-len", type=int, default=136)
    p.add_argument("--source-hr", type=float, default=None,
                   help="override the STFT-derived source heart rate")
    p.add_argument("--target-hr", type=float, default=None)
    p.add_argument("--factor", type=float, default=None, help="modulation factor")
    p.add_argument("--seed", type=int, default=0)
    _add_stft_args(p)
    p.set_defaults(func=cmd_augment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
