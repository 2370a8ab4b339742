import numpy as np
import pytest

from conftest import fd_gradient, rel_err
from wgrad.autodiff import Tape
from wgrad.errors import ShapeError
from wgrad.fields import GridSpec, RoiBox, StateTensor
from wgrad.toymodel import (
    SynthConfig,
    ToyForecaster,
    forward_step,
    rollout,
    rollout_node,
    synth_sequence,
)


def test_zero_input_zero_output():
    model = ToyForecaster(3, seed=0)
    x = StateTensor(GridSpec(8, 8), np.zeros((8, 8, 3), dtype=np.float32))
    out = forward_step(model, x)
    assert np.array_equal(out.values, np.zeros((8, 8, 3), dtype=np.float32))


def test_forward_is_deterministic_in_seed():
    x = synth_sequence(SynthConfig(seed=5), 0)
    a = forward_step(ToyForecaster(3, seed=1), x)
    b = forward_step(ToyForecaster(3, seed=1), x)
    c = forward_step(ToyForecaster(3, seed=2), x)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_rollout_t1_equals_forward_step():
    model = ToyForecaster(3, seed=3)
    x = synth_sequence(SynthConfig(seed=6), 0)
    assert np.array_equal(rollout(model, x, 1).values, forward_step(model, x).values)


def test_forward_rejects_wrong_channels_and_odd_grid():
    model = ToyForecaster(3, seed=0)
    tape = Tape()
    with pytest.raises(ShapeError):
        model.forward_node(tape, tape.constant(np.zeros((8, 8, 2))))
    with pytest.raises(ShapeError):
        model.forward_node(tape, tape.constant(np.zeros((7, 8, 3))))


def test_gain_scales_first_kernel_linearly():
    a = ToyForecaster(3, seed=4, gain=1.0)
    b = ToyForecaster(3, seed=4, gain=2.0)
    assert np.allclose(b.k_in, 2.0 * a.k_in)


@pytest.mark.parametrize("steps", [1, 2])
def test_rollout_gradient_matches_fd(steps):
    model = ToyForecaster(2, seed=1)
    rng = np.random.Generator(np.random.Philox(7))
    x0 = rng.standard_normal((4, 4, 2))
    box = RoiBox(1, 2, 1, 2)

    def f(v):
        tape = Tape()
        out = rollout_node(model, tape, tape.constant(v), steps)
        return float(tape.roi_mean(tape.select_channel(out, 0), box).value)

    tape = Tape()
    x = tape.constant(x0)
    out = rollout_node(model, tape, x, steps)
    y = tape.roi_mean(tape.select_channel(out, 0), box)
    tape.backward(y)
    assert rel_err(x.grad, fd_gradient(f, x0)) < 1e-4


def test_synth_static_when_velocity_zero():
    cfg = SynthConfig(velocity=(0.0, 0.0), seed=9)
    a, b = synth_sequence(cfg, 0), synth_sequence(cfg, 3)
    assert np.array_equal(a.values, b.values)


def test_synth_blob_mass_is_conserved_under_advection():
    cfg = SynthConfig(seed=11)
    masses = [synth_sequence(cfg, t).values[:, :, 0].sum() for t in range(4)]
    assert np.allclose(masses, masses[0], rtol=1e-5)


def test_synth_channel2_is_product_nonlinearity():
    cfg = SynthConfig(seed=12)  # texture = 0: channel 2 sees the raw blobs
    x = synth_sequence(cfg, 0).values
    assert np.allclose(x[:, :, 2], np.tanh(x[:, :, 0] * x[:, :, 1]), atol=1e-6)


def test_texture_is_stationary_and_additive():
    base = SynthConfig(seed=13)
    tex = SynthConfig(texture=0.5, seed=13)
    x0, x1 = synth_sequence(tex, 0), synth_sequence(tex, 2)
    b0, b1 = synth_sequence(base, 0), synth_sequence(base, 2)
    d0 = x0.values[:, :, :2] - b0.values[:, :, :2]
    d1 = x1.values[:, :, :2] - b1.values[:, :, :2]
    assert np.allclose(d0, d1, atol=1e-6)  # detail does not advect
    assert np.abs(d0).max() <= 0.5 + 1e-6
    assert np.abs(d0).max() > 0.1


def test_synth_rejects_bad_config():
    with pytest.raises(ValueError):
        SynthConfig(blob_width=0.0)
    with pytest.raises(ValueError):
        SynthConfig(texture=-0.1)
    with pytest.raises(ValueError):
        synth_sequence(SynthConfig(), -1)
