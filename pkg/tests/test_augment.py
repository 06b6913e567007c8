import numpy as np
import pytest

import pulsekit as pk
from pulsekit.errors import InsufficientContextError, NoSourceHrError


def constant_session(hr_bpm, duration_s=40.0, fps=30.0, size=2):
    """Synthetic wave plus a dummy video of matching length."""
    traj = pk.HrTrajectory("constant", duration_s=duration_s, base_bpm=hr_bpm)
    wave = pk.synth_waveform(traj, fps)
    video = pk.VideoClip(
        np.zeros((len(wave), size, size, 3), dtype=np.float32), fps
    )
    return video, wave


def center_start(total, n=136):
    return (total - n) // 2


class TestSourceHr:
    def test_pure_sinusoid(self):
        _, wave = constant_session(72.0)
        got = pk.source_hr(wave, center_start(len(wave)), 136)
        assert abs(got - 72.0) <= 0.06

    def test_chirp_mean(self):
        # ramp sweeping 60 -> 66 BPM across the clip (63 at its center)
        fps = 30.0
        slope = 6.0 / (136 / fps)
        traj = pk.HrTrajectory(
            "linear_ramp", duration_s=40.0, base_bpm=50.0, slope_bpm_s=slope
        )
        wave = pk.synth_waveform(traj, fps)
        t_center = (63.0 - 50.0) / slope
        start = int(round(t_center * fps)) - 68
        got = pk.source_hr(wave, start, 136)
        assert abs(got - 63.0) <= 1.0

    def test_fully_masked_errors(self):
        _, wave = constant_session(72.0)
        masked = pk.Waveform(wave.samples, wave.fs, mask=np.zeros(len(wave), bool))
        with pytest.raises(NoSourceHrError, match="masked"):
            pk.source_hr(masked, center_start(len(wave)), 136)

    def test_no_covering_window_errors(self):
        _, wave = constant_session(72.0, duration_s=12.0)
        with pytest.raises(NoSourceHrError):
            pk.source_hr(wave, 0, 2)  # clip ends before the first window center


class TestSpeedAugment:
    def test_interval_length_doubling(self):
        video, wave = constant_session(60.0)
        aug = pk.speed_augment(video, wave, center_start(len(wave)), 60.0, 120.0)
        assert aug.provenance["source_len"] == 272
        assert aug.video.n_frames == len(aug.wave) == 136

    def test_interval_length_formula(self):
        video, wave = constant_session(100.0)
        aug = pk.speed_augment(video, wave, center_start(len(wave)), 100.0, 40.0)
        assert aug.provenance["source_len"] == 54

    def test_identity_target(self):
        video, wave = constant_session(72.0)
        start = center_start(len(wave))
        aug = pk.speed_augment(video, wave, start, 72.0, 72.0)
        np.testing.assert_array_equal(aug.wave.samples, wave.samples[start : start + 136])
        np.testing.assert_array_equal(aug.video.frames, video.frames[start : start + 136])
        assert aug.realized_hr_start == 72.0

    def test_spectral_doubling(self):
        video, wave = constant_session(72.0)
        aug = pk.speed_augment(video, wave, center_start(len(wave)), 72.0, 144.0)
        measured = pk.hr_full(aug.wave)
        assert abs(measured - 144.0) <= 1.06

    def test_insufficient_context(self):
        video, wave = constant_session(50.0, duration_s=6.0)  # 180 frames
        with pytest.raises(InsufficientContextError):
            pk.speed_augment(video, wave, 22, 50.0, 180.0)  # needs 489 frames

    def test_realized_rate_formula(self):
        video, wave = constant_session(72.0)
        aug = pk.speed_augment(video, wave, center_start(len(wave)), 72.0, 100.0)
        src_len = aug.provenance["source_len"]
        assert aug.realized_hr_start == pytest.approx(72.0 * src_len / 136, abs=1e-12)


class TestSampleTargetHr:
    def test_deterministic(self):
        gen = pk.RngState(5, "t").generator()
        seq1 = [pk.sample_target_hr(gen) for _ in range(5)]
        gen = pk.RngState(5, "t").generator()
        seq2 = [pk.sample_target_hr(gen) for _ in range(5)]
        assert seq1 == seq2

    def test_uniform_mean(self):
        gen = pk.RngState(99, "hr").generator()
        draws = np.array([pk.sample_target_hr(gen) for _ in range(100_000)])
        assert abs(draws.mean() - 110.0) < 1.0
        assert draws.min() >= 40.0 and draws.max() <= 180.0

    def test_degenerate_interval(self):
        spec = pk.SpeedAugSpec(hr_min=72.0, hr_max=72.0)
        gen = pk.RngState(1, "x").generator()
        assert pk.sample_target_hr(gen, spec) == 72.0


class TestModulationBounds:
    def test_reference_value(self):
        lo, hi = pk.modulation_bounds(60.0, 136, 30.0)
        assert hi == pytest.approx(1.719, abs=1e-3)
        assert lo == pytest.approx(1.0 / hi, abs=1e-12)

    def test_zero_slope_limit(self):
        spec = pk.ModulationSpec(max_slope=1e-9)
        lo, hi = pk.modulation_bounds(60.0, 136, 30.0, spec)
        assert lo == pytest.approx(1.0, abs=1e-6)
        assert hi == pytest.approx(1.0, abs=1e-6)

    def test_doubling_hr_halves_normalized_deviation(self):
        _, hi1 = pk.modulation_bounds(60.0, 136, 30.0)
        _, hi2 = pk.modulation_bounds(120.0, 136, 30.0)
        dev1 = (hi1 - 1) / (hi1 + 1)
        dev2 = (hi2 - 1) / (hi2 + 1)
        assert dev2 == pytest.approx(dev1 / 2, rel=1e-9)

    def test_interval_contains_one(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            hr = float(rng.uniform(40, 180))
            lo, hi = pk.modulation_bounds(hr, 136, 30.0)
            assert lo <= 1.0 <= hi


class TestModulationPositions:
    def test_spot_values(self):
        p15 = pk.modulation_positions(1.5, 136)
        assert p15[68] == pytest.approx(61.2, abs=1e-9)
        p05 = pk.modulation_positions(0.5, 136)
        assert p05[68] == pytest.approx(79.0 + 1.0 / 3.0, abs=1e-9)

    def test_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(4)
        n = 136
        for _ in range(100):
            hr = float(rng.uniform(40, 180))
            lo, hi = pk.modulation_bounds(hr, n, 30.0)
            f = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            p = pk.modulation_positions(f, n)
            assert p[0] == 0.0
            assert np.all(np.diff(p) > 0)
            # span preservation: extending to x = n lands exactly on n
            s = 2.0 / (1.0 + f)
            e = s * f
            p_n = n * s + n * n * (e - s) / (2 * n)
            assert abs(p_n - n) < 1e-9 * n


class TestModulate:
    def test_identity_factor(self):
        video, wave = constant_session(72.0, duration_s=10.0)
        v2, w2 = pk.modulate(video, wave, 1.0, n=136)
        np.testing.assert_array_equal(w2.samples, wave.samples[:136])
        np.testing.assert_array_equal(v2.frames, video.frames[:136])

    def test_slowdown_needs_extra_frame(self):
        video, wave = constant_session(72.0, duration_s=40.0)
        n = len(wave)
        sub_v = pk.VideoClip(video.frames[:136], video.fps)
        sub_w = pk.Waveform(wave.samples[:136], wave.fs)
        with pytest.raises(InsufficientContextError, match="137"):
            pk.modulate(sub_v, sub_w, 0.8, n=136)
        # one extra frame of context fixes it
        sub_v = pk.VideoClip(video.frames[:137], video.fps)
        sub_w = pk.Waveform(wave.samples[:137], wave.fs)
        v2, w2 = pk.modulate(sub_v, sub_w, 0.8, n=136)
        assert v2.n_frames == len(w2) == 136

    def test_bounds_enforced(self):
        video, wave = constant_session(72.0, duration_s=10.0)
        with pytest.raises(ValueError, match="bounds"):
            pk.modulate(video, wave, 3.0, n=136, bounds=(0.5, 2.0))

    def test_linear_ramp_sampled_exactly(self):
        # linear interpolation of a linear signal is exact at any position
        fps = 30.0
        t = np.arange(200, dtype=np.float64)
        wave = pk.Waveform(t, fps)
        video = pk.VideoClip(np.zeros((200, 2, 2, 3), np.float32), fps)
        _, w2 = pk.modulate(video, wave, 1.5, n=136)
        np.testing.assert_allclose(w2.samples, pk.modulation_positions(1.5, 136), atol=1e-9)

    def test_realized_slope_capped(self):
        rng = np.random.default_rng(8)
        n, fps = 136, 30.0
        for _ in range(200):
            hr = float(rng.uniform(40, 180))
            lo, hi = pk.modulation_bounds(hr, n, fps)
            f = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            s = 2.0 / (1.0 + f)
            e = s * f
            slope = abs(hr * e - hr * s) / (n / fps)
            assert slope <= 7.0 + 1e-9


class TestSpatialAugment:
    def test_flip_involution(self):
        rng = np.random.default_rng(9)
        clip = pk.VideoClip(rng.uniform(0, 1, (4, 6, 6, 3)).astype(np.float32), 30.0)
        spec = pk.SpatialAugSpec(p_flip=1.0, sigma_illum=0.0, sigma_noise=0.0)
        once = pk.spatial_augment(clip, pk.RngState(0, "a").generator(), spec)
        twice = pk.spatial_augment(once, pk.RngState(0, "b").generator(), spec)
        np.testing.assert_array_equal(twice.frames, clip.frames)

    def test_identity_settings(self):
        rng = np.random.default_rng(10)
        clip = pk.VideoClip(rng.uniform(0, 1, (4, 6, 6, 3)).astype(np.float32), 30.0)
        spec = pk.SpatialAugSpec(p_flip=0.0, sigma_illum=0.0, sigma_noise=0.0)
        out = pk.spatial_augment(clip, pk.RngState(3, "c").generator(), spec)
        np.testing.assert_array_equal(out.frames, clip.frames)

    def test_noise_std_calibrated(self):
        clip = pk.VideoClip(np.full((16, 80, 80, 3), 0.5, dtype=np.float32), 30.0)
        spec = pk.SpatialAugSpec(p_flip=0.0, sigma_illum=0.0, sigma_noise=0.05)
        out = pk.spatial_augment(clip, pk.RngState(4, "d").generator(), spec)
        noise = out.frames.astype(np.float64) - 0.5  # far from clamp bounds
        assert abs(noise.std() - 0.05) < 0.02 * 0.05

    def test_illumination_shared_offset(self):
        clip = pk.VideoClip(np.full((3, 8, 8, 3), 0.5, dtype=np.float32), 30.0)
        spec = pk.SpatialAugSpec(p_flip=0.0, sigma_illum=0.1, sigma_noise=0.0)
        out = pk.spatial_augment(clip, pk.RngState(5, "e").generator(), spec)
        assert np.ptp(out.frames) < 1e-6  # one shared offset everywhere


class TestLockstep:
    def test_wave_follows_mean_green(self):
        # waveform defined as an affine function of the video's mean green
        rng = np.random.default_rng(11)
        t_len, fps = 400, 30.0
        frames = rng.uniform(0.2, 0.8, (t_len, 4, 4, 3)).astype(np.float32)
        video = pk.VideoClip(frames, fps)
        green = frames[..., 1].mean(axis=(1, 2)).astype(np.float64)
        wave = pk.Waveform(2.0 * green + 0.1, fps)
        aug = pk.apply_augmentation(
            video, wave, clip_start=100, n=136, hr_source=70.0, hr_target=95.0,
            factor=1.3,
        )
        green_out = aug.video.frames[..., 1].mean(axis=(1, 2), dtype=np.float64)
        np.testing.assert_allclose(aug.wave.samples, 2.0 * green_out + 0.1, atol=2e-6)


class TestRandomAugment:
    def test_deterministic_replay(self):
        video, wave = constant_session(72.0, size=4)
        a = pk.random_augment(video, wave, center_start(len(wave)), pk.RngState(21, "aug"))
        b = pk.random_augment(video, wave, center_start(len(wave)), pk.RngState(21, "aug"))
        np.testing.assert_array_equal(a.video.frames, b.video.frames)
        np.testing.assert_array_equal(a.wave.samples, b.wave.samples)
        assert a.provenance == b.provenance

    def test_output_length_and_band(self):
        video, wave = constant_session(72.0, size=4)
        spec = pk.SpeedAugSpec()
        for seed in range(20):
            aug = pk.random_augment(
                video, wave, center_start(len(wave)), pk.RngState(seed, "aug")
            )
            assert aug.video.n_frames == len(aug.wave) == 136
            # realized endpoints stay in band up to the floor quantization of
            # the source interval length
            quantum = aug.provenance["hr_source"] / 136
            assert aug.realized_hr_start >= spec.hr_min - quantum - 1e-9
            assert aug.realized_hr_end >= spec.hr_min - quantum - 1e-9
            assert aug.realized_hr_start <= spec.hr_max + quantum + 1e-9
            assert aug.realized_hr_end <= spec.hr_max + quantum + 1e-9

    def test_unaugmented_fallback(self):
        # short session: the 170-180 BPM targets need ~513 source frames
        video, wave = constant_session(45.0, duration_s=12.0)  # 360 frames
        spec = pk.SpeedAugSpec(hr_min=170.0, hr_max=180.0)
        aug = pk.random_augment(
            video, wave, 100, pk.RngState(2, "fb"), speed=spec, modulation=None
        )
        assert aug.provenance["augmented"] is False
        assert aug.provenance["attempts"] == 10
        np.testing.assert_array_equal(aug.wave.samples, wave.samples[100 : 100 + 136])

    def test_modulated_slope_within_cap(self):
        video, wave = constant_session(80.0, size=4)
        for seed in range(10):
            aug = pk.random_augment(
                video, wave, center_start(len(wave)), pk.RngState(seed, "slope")
            )
            if aug.provenance.get("factor") is None:
                continue
            slope = abs(aug.realized_hr_end - aug.realized_hr_start) / (136 / 30.0)
            assert slope <= 7.0 + 1e-9


class TestSpecValidation:
    def test_speed_spec(self):
        with pytest.raises(ValueError):
            pk.SpeedAugSpec(hr_min=0.0, hr_max=100.0)
        with pytest.raises(ValueError):
            pk.SpeedAugSpec(hr_min=100.0, hr_max=50.0)

    def test_modulation_spec(self):
        with pytest.raises(ValueError):
            pk.ModulationSpec(max_slope=0.0)

    def test_augmented_clip_length_invariant(self):
        video, wave = constant_session(72.0, duration_s=10.0)
        with pytest.raises(ValueError, match="frames"):
            pk.AugmentedClip(
                video=pk.VideoClip(video.frames[:100], 30.0),
                wave=pk.Waveform(wave.samples[:99], 30.0),
                realized_hr_start=72.0,
                realized_hr_end=72.0,
            )
