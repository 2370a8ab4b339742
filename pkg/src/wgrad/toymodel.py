"""Tiny deterministic conv+attention forecaster and a synthetic field generator.

The forecaster is shape-preserving (H, W, C) -> (H, W, C) and built from
exactly the operators the autodiff module supports: 3x3 convolution in,
ReLU, 2x2 max pool, a linear token projection, one attention layer over
the pooled token grid, nearest-neighbor 2x upsample and a 3x3 convolution
out. Weights are random but fixed, drawn from a counter-based generator,
so every experiment is reproducible. There is no training; every claim
tested downstream is about gradient geometry, not forecast skill.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import AttentionWeights, Tape, TensorNode
from .errors import ShapeError
from .fields import GridSpec, StateTensor

HIDDEN = 8  # channels after conv_in, equals token dimension


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    a = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


class ToyForecaster:
    """Desk-scale stand-in for a conv+attention forecaster, ~5k parameters."""

    def __init__(self, channels: int, seed: int = 42, gain: float = 1.0):
        if channels < 1:
            raise ValueError("need at least one channel")
        if gain <= 0:
            raise ValueError("gain must be > 0")
        self.channels = channels
        self.seed = seed
        self.gain = gain
        rng = np.random.Generator(np.random.Philox(seed))
        # gain rescales every weight; > 1 makes the autoregressive rollout
        # expansive so perturbations grow with horizon instead of decaying
        self.k_in = gain * _uniform_fan_in(rng, (3, 3, channels, HIDDEN), 9 * channels)
        self.w_proj = gain * _uniform_fan_in(rng, (HIDDEN, HIDDEN), HIDDEN)
        self.attn = AttentionWeights(
            w_q=gain * _uniform_fan_in(rng, (HIDDEN, HIDDEN), HIDDEN),
            w_k=gain * _uniform_fan_in(rng, (HIDDEN, HIDDEN), HIDDEN),
            w_v=gain * _uniform_fan_in(rng, (HIDDEN, HIDDEN), HIDDEN),
        )
        self.k_out = gain * _uniform_fan_in(rng, (3, 3, HIDDEN, channels), 9 * HIDDEN)

    def forward_node(self, tape: Tape, x: TensorNode) -> TensorNode:
        """One differentiable forward pass; input and output are (H, W, C)."""
        h, w = x.shape[:2]
        if x.value.ndim != 3 or x.shape[2] != self.channels:
            raise ShapeError(f"expected (H, W, {self.channels}), got {x.shape}")
        if h % 2 or w % 2:
            raise ShapeError(f"H and W must be even, got {h}x{w}")
        z = tape.conv2d(x, self.k_in)
        z = tape.relu(z)
        z = tape.maxpool2(z)  # (h/2, w/2, HIDDEN)
        tok = tape.reshape(z, (h // 2 * (w // 2), HIDDEN))
        tok = tape.linear(tok, self.w_proj)
        tok = tape.attention(tok, self.attn)
        z = tape.reshape(tok, (h // 2, w // 2, HIDDEN))
        z = tape.upsample2(z)
        return tape.conv2d(z, self.k_out)


def forward_step(model: ToyForecaster, x: StateTensor) -> StateTensor:
    """Single non-differentiable convenience wrapper around forward_node."""
    tape = Tape()
    node = tape.constant(x.values.astype(np.float64))
    out = model.forward_node(tape, node)
    return StateTensor(x.spec, out.value.astype(np.float32))


def rollout_node(model: ToyForecaster, tape: Tape, x: TensorNode, steps: int) -> TensorNode:
    """Apply the forecaster autoregressively on one tape; gradients flow
    through all compositions."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out = x
    for _ in range(steps):
        out = model.forward_node(tape, out)
    return out


def rollout(model: ToyForecaster, x: StateTensor, steps: int) -> StateTensor:
    tape = Tape()
    node = tape.constant(x.values.astype(np.float64))
    out = rollout_node(model, tape, node, steps)
    return StateTensor(x.spec, out.value.astype(np.float32))


@dataclass(frozen=True)
class SynthConfig:
    """Advected-Gaussian-blob generator settings.

    Channel 0 and 1 carry the blobs ("wind", "moisture" analogues);
    channel 2 ("precip") is a pointwise nonlinear product of the first two
    so cross-channel attribution has something to find.
    """

    height: int = 16
    width: int = 16
    blobs: int = 3
    amplitude: float = 1.0
    blob_width: float = 1.5  # std in cells
    velocity: tuple[float, float] = (0.0, 1.0)  # (rows, cols) per step
    texture: float = 0.0  # stationary per-cell uniform(-texture, texture) detail
    seed: int = 42

    def __post_init__(self):
        if self.blob_width <= 0:
            raise ValueError("blob_width must be > 0")
        if self.texture < 0:
            raise ValueError("texture must be >= 0")
        if not np.all(np.isfinite(self.velocity)):
            raise ValueError("velocity must be finite")

    channels: int = field(default=3, init=False)


def _wrapped_blob(spec: GridSpec, center_r: float, center_c: float, width: float, amp: float) -> np.ndarray:
    """Gaussian blob on the torus, built as a product of 1-D wrapped
    Gaussians summed over +-2 grid periods; mass is conserved under any
    (fractional) translation."""
    rows = np.arange(spec.height, dtype=np.float64)
    cols = np.arange(spec.width, dtype=np.float64)
    pr = np.zeros(spec.height)
    pc = np.zeros(spec.width)
    for k in range(-2, 3):
        pr += np.exp(-0.5 * ((rows - center_r + k * spec.height) / width) ** 2)
        pc += np.exp(-0.5 * ((cols - center_c + k * spec.width) / width) ** 2)
    return amp * np.outer(pr, pc)


def synth_sequence(cfg: SynthConfig, t: int) -> StateTensor:
    """Field state at step t: blobs advected by t * velocity with wrap."""
    if t < 0:
        raise ValueError("t must be >= 0")
    spec = GridSpec(cfg.height, cfg.width)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    out = np.zeros((cfg.height, cfg.width, 3), dtype=np.float64)
    for c in range(2):
        for _ in range(cfg.blobs):
            r0 = rng.uniform(0, cfg.height)
            c0 = rng.uniform(0, cfg.width)
            amp = cfg.amplitude * rng.uniform(0.5, 1.0)
            out[:, :, c] += _wrapped_blob(
                spec,
                r0 + t * cfg.velocity[0],
                c0 + t * cfg.velocity[1],
                cfg.blob_width,
                amp,
            )
    # pointwise nonlinearity: translates with the blobs, so its mass is
    # conserved too
    out[:, :, 2] = np.tanh(out[:, :, 0] * out[:, :, 1])
    if cfg.texture > 0:
        # small-scale heterogeneity that does not advect; it gives the
        # pooling and gating stages well-separated margins so gradient
        # responses to input noise scale with the noise instead of being
        # dominated by tie-breaking
        trng = np.random.Generator(np.random.Philox(key=[cfg.seed, 0x546558]))
        out[:, :, :2] += trng.uniform(-cfg.texture, cfg.texture, (cfg.height, cfg.width, 2))
    return StateTensor(spec, out.astype(np.float32))
