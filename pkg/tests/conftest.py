"""Shared fixtures for the test suite.

The "benchmark" fixtures (model, events) pin the configuration used by the
directional experiments: a mildly expansive forecaster and synthetic events
with stationary small-scale texture, so gradient responses to input noise
scale with the noise level instead of being dominated by pooling ties.
"""

import numpy as np
import pytest

from wgrad import SynthConfig, ToyForecaster, synth_sequence
from wgrad.attribution import AttributionRequest
from wgrad.fields import RoiBox

BENCH_MODEL_SEED = 7
BENCH_GAIN = 1.6
BENCH_TEXTURE = 1.0
EVENT_SEED_STRIDE = 100_000
ROOT_SEED = 42


def event_config(event: int) -> SynthConfig:
    return SynthConfig(texture=BENCH_TEXTURE, seed=ROOT_SEED * EVENT_SEED_STRIDE + event)


@pytest.fixture(scope="session")
def bench_model():
    return ToyForecaster(3, seed=BENCH_MODEL_SEED, gain=BENCH_GAIN)


@pytest.fixture(scope="session")
def plain_model():
    return ToyForecaster(3, seed=ROOT_SEED)


@pytest.fixture(scope="session")
def bench_events():
    """20 textured synthetic events (initial states only)."""
    return [synth_sequence(event_config(e), 0) for e in range(20)]


@pytest.fixture(scope="session")
def bench_request():
    return AttributionRequest(c_in=0, c_out=2, roi=RoiBox(6, 9, 6, 9), steps=1)


def fd_gradient(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.astype(np.float64).copy()
        xm = x.astype(np.float64).copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b.ravel()), 1e-12)
    return float(np.linalg.norm((a - b).ravel()) / denom)
