import json
from pathlib import Path

import numpy as np
import pytest

VECTORS_PATH = Path(__file__).parent / "vectors.json"


@pytest.fixture(scope="session")
def vectors():
    return json.loads(VECTORS_PATH.read_text())


def materialize_video(case) -> np.ndarray:
    """8-bit-safe video tensor: survives a PNG round trip exactly."""
    rng = np.random.default_rng(case["seed"])
    raw = rng.integers(0, 256, size=(case["t"], case["h"], case["w"], 3), dtype=np.uint8)
    return raw


def materialize_wave(case) -> np.ndarray:
    rng = np.random.default_rng(case["seed"] + 7_000)
    return np.cumsum(rng.normal(size=case["t"]))


def pair_arrays(case):
    rng = np.random.default_rng(case["seed"])
    a = np.cumsum(rng.normal(size=case["n"]))
    b = np.cumsum(rng.normal(size=case["n"]))
    return a, b


def hr_arrays(case):
    rng = np.random.default_rng(case["seed"])
    n = case["n"]
    p = rng.uniform(45.0, 175.0, n)
    g = rng.uniform(45.0, 175.0, n)
    if case["masked"]:
        vp = rng.uniform(size=n) > 0.25
        vg = rng.uniform(size=n) > 0.25
        if not (vp & vg).any():
            vp[:] = True
    else:
        vp = np.ones(n, dtype=bool)
        vg = np.ones(n, dtype=bool)
    return p, g, vp, vg
