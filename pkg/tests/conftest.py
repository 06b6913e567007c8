import numpy as np
import pytest

import pulsekit as pk


def sinusoid_wave(freq_hz: float, fs: float, duration_s: float, amp: float = 1.0):
    t = np.arange(int(round(duration_s * fs))) / fs
    return pk.Waveform(amp * np.sin(2 * np.pi * freq_hz * t), fs)


@pytest.fixture
def sinusoid():
    return sinusoid_wave


@pytest.fixture(scope="session")
def session_dir_72(tmp_path_factory):
    """One 30 s constant-72-BPM synthetic session written to disk."""
    out = tmp_path_factory.mktemp("sess72")
    traj = pk.HrTrajectory("constant", duration_s=30.0, base_bpm=72.0)
    spec = pk.SynthSpec(trajectory=traj, fps=30.0, seed=11)
    clip, wave, manifest = pk.synth_session(spec, out)
    return {"dir": out, "clip": clip, "wave": wave, "manifest": manifest}
