import numpy as np
import pytest

import pulsekit as pk
from pulsekit.preprocess import crop_region


def random_clip(rng, t, h, w, fps=30.0):
    return pk.VideoClip(rng.uniform(0, 1, size=(t, h, w, 3)).astype(np.float32), fps)


class TestCropRegion:
    def test_padding_arithmetic(self):
        # landmark extremes x in [100, 200], y in [120, 220], default spec:
        # padded x [95, 205], y [90, 225]; height 135 wins, width extended to
        # [82.5, 217.5]; rounding gives x [82, 218] -> trimmed to [82, 217]
        x0, y0, x1, y1 = crop_region(100, 120, 200, 220, pk.CropSpec(), 400, 400)
        assert (x0, y0, x1, y1) == (82, 90, 217, 225)
        assert x1 - x0 == y1 - y0 == 135

    def test_already_square_after_padding(self):
        # pad_top .3/.05/.05: w*1.1 == h*1.35 for w=135, h=110
        spec = pk.CropSpec()
        x0, y0, x1, y1 = crop_region(10, 20, 145, 130, spec, 500, 500)
        # padded: x [3.25, 151.75] -> [3, 152], y [-13, 135.5] -> [-13, 136]
        assert x1 - x0 == y1 - y0

    def test_shift_inward_at_edges(self):
        spec = pk.CropSpec()
        x0, y0, x1, y1 = crop_region(2, 2, 30, 40, spec, 100, 100)
        assert 0 <= x0 < x1 <= 100 and 0 <= y0 < y1 <= 100
        assert x1 - x0 == y1 - y0

    def test_larger_than_frame_shrinks_square(self):
        x0, y0, x1, y1 = crop_region(0, 0, 300, 200, pk.CropSpec(), 120, 150)
        assert x1 - x0 == y1 - y0 <= 120

    def test_degenerate_box(self):
        with pytest.raises(ValueError, match="zero-area"):
            crop_region(50, 50, 50, 80, pk.CropSpec(), 100, 100)

    def test_square_property_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            h = int(rng.integers(40, 300))
            w = int(rng.integers(40, 300))
            pts = rng.uniform(-20, max(h, w) + 20, size=(int(rng.integers(2, 30)), 2))
            lo = pts.min(axis=0)
            hi = pts.max(axis=0)
            if hi[0] - lo[0] <= 0 or hi[1] - lo[1] <= 0:
                continue
            x0, y0, x1, y1 = crop_region(lo[0], lo[1], hi[0], hi[1], pk.CropSpec(), h, w)
            assert x1 - x0 == y1 - y0, "region must stay square"
            assert 0 <= x0 and x1 <= w and 0 <= y0 and y1 <= h


class TestCropFace:
    def test_output_shape_and_range(self):
        rng = np.random.default_rng(3)
        frame = rng.uniform(0, 1, size=(200, 180, 3)).astype(np.float32)
        pts = rng.uniform(20, 150, size=(15, 2))
        out = pk.crop_face(frame, pts)
        assert out.shape == (64, 64, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_box_input(self):
        frame = np.zeros((100, 100, 3), dtype=np.float32)
        out = pk.crop_face(frame, np.array([10.0, 10.0, 60.0, 60.0]))
        assert out.shape == (64, 64, 3)

    def test_single_point_degenerate(self):
        frame = np.zeros((100, 100, 3), dtype=np.float32)
        with pytest.raises(ValueError, match="zero-area"):
            pk.crop_face(frame, np.array([[50.0, 50.0]]))

    def test_empty_landmarks(self):
        frame = np.zeros((100, 100, 3), dtype=np.float32)
        with pytest.raises(ValueError, match="empty landmark set"):
            pk.crop_face(frame, np.zeros((0, 2)))


class TestAverageDownsample:
    def test_90_to_30(self):
        rng = np.random.default_rng(0)
        clip = random_clip(rng, 270, 4, 4, fps=90.0)
        out = pk.average_downsample_fps(clip, 3)
        assert out.n_frames == 90
        assert out.fps == 30.0

    def test_identity_factor_one(self):
        rng = np.random.default_rng(0)
        clip = random_clip(rng, 10, 4, 4)
        out = pk.average_downsample_fps(clip, 1)
        np.testing.assert_array_equal(out.frames, clip.frames)

    def test_constant_group_mean(self):
        frames = np.stack(
            [np.full((2, 2, 3), v, dtype=np.float32) for v in (0.0, 0.3, 0.6)]
        )
        out = pk.average_downsample_fps(pk.VideoClip(frames, 90.0), 3)
        assert out.n_frames == 1
        np.testing.assert_allclose(out.frames, 0.3, atol=1e-7)

    def test_group_means_exact(self):
        rng = np.random.default_rng(5)
        clip = random_clip(rng, 271, 6, 5, fps=90.0)  # one trailing frame dropped
        out = pk.average_downsample_fps(clip, 3)
        assert out.n_frames == 90
        oracle = clip.frames[:270].astype(np.float64).reshape(90, 3, 6, 5, 3).mean(axis=1)
        assert np.max(np.abs(out.frames - oracle)) < 1e-7

    def test_mean_preserved(self):
        rng = np.random.default_rng(6)
        clip = random_clip(rng, 30, 8, 8, fps=90.0)
        out = pk.average_downsample_fps(clip, 3)
        consumed = clip.frames[:30].astype(np.float64)
        assert abs(out.frames.mean() - consumed.mean()) < 1e-6

    def test_bad_factor(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            pk.average_downsample_fps(random_clip(rng, 5, 2, 2), 0)


class TestPreprocessSession:
    def _session(self, rng, t, fps):
        clip = random_clip(rng, t, 120, 100, fps=fps)
        boxes = np.tile([10.0, 15.0, 80.0, 95.0], (t, 1))
        boxes[:, [0, 2]] += rng.uniform(-3, 3, size=(t, 1))
        return clip, pk.LandmarkTrack(boxes=boxes)

    def test_rate_conversion_before_crop(self):
        rng = np.random.default_rng(8)
        clip, lm = self._session(rng, 91, 90.0)
        out = pk.preprocess_session(clip, lm, fps_target=30.0)
        assert out.n_frames == 30  # floor(91/3)
        assert out.fps == 30.0
        assert out.frames.shape == (30, 64, 64, 3)

    def test_landmarks_first_of_group(self):
        rng = np.random.default_rng(9)
        clip, lm = self._session(rng, 9, 90.0)
        out = pk.preprocess_session(clip, lm, fps_target=30.0)
        averaged = pk.average_downsample_fps(clip, 3)
        expect = pk.crop_face(averaged.frames[1], lm.frame_landmarks(3))
        np.testing.assert_array_equal(out.frames[1], expect)

    def test_identity_rate(self):
        rng = np.random.default_rng(10)
        clip, lm = self._session(rng, 12, 30.0)
        out = pk.preprocess_session(clip, lm, fps_target=30.0)
        assert out.n_frames == 12

    def test_upsampling_rejected(self):
        rng = np.random.default_rng(11)
        clip, lm = self._session(rng, 12, 25.0)
        with pytest.raises(ValueError, match="upsample"):
            pk.preprocess_session(clip, lm, fps_target=30.0)

    def test_non_integer_factor_rejected(self):
        rng = np.random.default_rng(12)
        clip, lm = self._session(rng, 12, 45.0)
        with pytest.raises(ValueError, match="integer multiple"):
            pk.preprocess_session(clip, lm, fps_target=30.0)


class TestClipCache:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        clip = random_clip(rng, 7, 5, 6, fps=30.0)
        path = tmp_path / "clip.rppg"
        pk.save_clip(path, clip)
        back = pk.load_clip(path)
        np.testing.assert_array_equal(back.frames, clip.frames)
        assert back.fps == clip.fps
        # 16-byte header with the expected magic
        blob = path.read_bytes()
        assert blob[:4] == b"RPPG"
        assert len(blob) == 16 + 7 * 5 * 6 * 3 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "clip.rppg"
        path.write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(ValueError, match="magic"):
            pk.load_clip(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(14)
        clip = random_clip(rng, 3, 4, 4)
        path = tmp_path / "clip.rppg"
        pk.save_clip(path, clip)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="payload"):
            pk.load_clip(path)
