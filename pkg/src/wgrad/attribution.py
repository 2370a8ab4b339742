"""Gradient attribution pipeline and methods.

The scalar target is the ROI mean of one output channel after a T-step
rollout; an attribution map is its gradient with respect to one input
channel. Methods: base gradient, integrated gradients (zero baseline on
the selected channel), SmoothGrad, VarGrad, and the two transport
variants that aggregate perturbed-sample measures with an entropic
barycenter (returned directly, or multiplied onto the base gradient to
restore sign and amplitude contrast).

Sample i of every stochastic method draws its noise from a stream keyed
by (seed, i), so different methods evaluated at the same seed see the
identical perturbations and comparisons isolate the aggregation step.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tape
from .errors import ChannelError, InsufficientSamplesError, ZeroMassError
from .fields import Field2D, RoiBox, SpatialMeasure, StateTensor, normalize_to_measure
from .toymodel import rollout_node
from .transport import BarycenterConfig, conv_barycenter


@dataclass(frozen=True)
class AttributionRequest:
    c_in: int
    c_out: int
    roi: RoiBox
    steps: int = 1  # rollout horizon T
    n_samples: int = 20
    sigma_frac: float = 0.2  # noise std as fraction of channel range
    seed: int = 42
    method: str = "base"
    lam: float = 0.001  # transport variants only
    bary_iters: int = 100  # barycenter budget, transport variants only
    ig_steps: int = 128  # integrated gradients only

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.sigma_frac < 0:
            raise ValueError("sigma_frac must be >= 0")


@dataclass(frozen=True)
class AttributionResult:
    map: Field2D  # signed attribution
    target_value: float
    measure: SpatialMeasure | None = None  # barycenter, transport variants
    sample_maps: list[np.ndarray] | None = None


def channel_sigma(x: StateTensor, c: int, sigma_frac: float) -> float:
    """Noise std as sigma_frac times the channel's (max - min)."""
    sl = x.values[:, :, c]
    return float(sigma_frac * (sl.max() - sl.min()))


def sample_rng(seed: int, i: int) -> np.random.Generator:
    """Stream for perturbed sample i; growing N never reshuffles earlier draws."""
    return np.random.Generator(np.random.Philox(key=[seed, i]))


def perturb_channel(x: StateTensor, c_in: int, sigma: float, rng: np.random.Generator) -> StateTensor:
    """Add i.i.d. N(0, sigma^2) noise to one channel; others stay bit-identical."""
    if not 0 <= c_in < x.channels:
        raise ChannelError(f"channel {c_in} out of range for C={x.channels}")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = np.array(x.values)
    if sigma > 0:
        noise = rng.normal(0.0, sigma, size=out.shape[:2])
        out[:, :, c_in] = (out[:, :, c_in].astype(np.float64) + noise).astype(np.float32)
    return StateTensor(x.spec, out)


def _target_gradient(model, x_values: np.ndarray, req: AttributionRequest):
    """One forward/backward pass; returns (grad wrt input channel, target)."""
    tape = Tape()
    node = tape.constant(x_values.astype(np.float64))
    out = rollout_node(model, tape, node, req.steps)
    y_out = tape.select_channel(out, req.c_out)
    target = tape.roi_mean(y_out, req.roi)
    tape.backward(target)
    return node.grad[:, :, req.c_in].copy(), float(target.value)


def _check_request(x: StateTensor, req: AttributionRequest):
    for name, c in (("c_in", req.c_in), ("c_out", req.c_out)):
        if not 0 <= c < x.channels:
            raise ChannelError(f"{name}={c} out of range for C={x.channels}")
    req.roi.check_within(x.spec)


def base_grad(req: AttributionRequest, x: StateTensor, model) -> AttributionResult:
    """Plain gradient of the ROI target with respect to the input channel."""
    _check_request(x, req)
    g, y = _target_gradient(model, x.values, req)
    return AttributionResult(Field2D(x.spec, g), y)


def integrated_grad(req: AttributionRequest, x: StateTensor, model) -> AttributionResult:
    """Riemann-sum integrated gradients with a zero baseline.

    Only the selected channel walks the straight path from 0 to its input
    slice; the other channels stay at x throughout, consistent with the
    channel-wise perturbation scheme of the rest of the pipeline.
    """
    _check_request(x, req)
    if req.ig_steps < 2:
        raise ValueError("ig_steps must be >= 2")
    x_in = x.values[:, :, req.c_in].astype(np.float64)
    acc = np.zeros_like(x_in)
    y_end = 0.0
    for i in range(1, req.ig_steps + 1):
        values = np.array(x.values, dtype=np.float64)
        values[:, :, req.c_in] = x_in * (i / req.ig_steps)
        g, y = _target_gradient(model, values, req)
        acc += g
        if i == req.ig_steps:
            y_end = y
    return AttributionResult(Field2D(x.spec, x_in * acc / req.ig_steps), y_end)


def _perturbed_gradients(req: AttributionRequest, x: StateTensor, model):
    """The N per-sample gradients shared by the stochastic methods."""
    sigma = channel_sigma(x, req.c_in, req.sigma_frac)
    grads = []
    targets = []
    for i in range(req.n_samples):
        xp = perturb_channel(x, req.c_in, sigma, sample_rng(req.seed, i))
        g, y = _target_gradient(model, xp.values, req)
        grads.append(g)
        targets.append(y)
    return grads, targets


def smooth_grad(req: AttributionRequest, x: StateTensor, model, keep_samples: bool = False) -> AttributionResult:
    """Pointwise mean of the N perturbed gradients."""
    _check_request(x, req)
    grads, targets = _perturbed_gradients(req, x, model)
    mean = np.mean(grads, axis=0)
    return AttributionResult(
        Field2D(x.spec, mean),
        float(np.mean(targets)),
        sample_maps=grads if keep_samples else None,
    )


def var_grad(req: AttributionRequest, x: StateTensor, model) -> AttributionResult:
    """Pointwise population variance (divide by N) of the perturbed gradients."""
    _check_request(x, req)
    if req.n_samples < 2:
        raise InsufficientSamplesError("var_grad needs at least 2 samples")
    grads, targets = _perturbed_gradients(req, x, model)
    var = np.var(grads, axis=0)  # ddof=0
    return AttributionResult(Field2D(x.spec, var), float(np.mean(targets)))


def wasserstein_grad(
    req: AttributionRequest,
    x: StateTensor,
    model,
    variant: str = "bary",
) -> AttributionResult:
    """Barycentric aggregation of the perturbed-sample measures.

    variant="bary" returns the barycenter itself as the attribution map;
    variant="baryxgrad" multiplies it pointwise onto the clean base
    gradient, restoring sign and amplitude contrast. The product is not
    re-normalized, so it keeps gradient units.
    """
    _check_request(x, req)
    if variant not in ("bary", "baryxgrad"):
        raise ValueError(f"unknown variant {variant!r}")
    if req.lam <= 0:
        raise ValueError("lam must be > 0")
    grads, targets = _perturbed_gradients(req, x, model)
    measures = []
    for g in grads:
        total = np.abs(g).sum()
        if total <= 0:
            raise ZeroMassError("a perturbed gradient map has zero mass")
        measures.append(SpatialMeasure(x.spec, np.abs(g) / total))
    bary = conv_barycenter(measures, BarycenterConfig(lam=req.lam, max_iter=req.bary_iters))
    if variant == "bary":
        map_ = Field2D(x.spec, bary.density)
        y = float(np.mean(targets))
    else:
        base = base_grad(replace(req, sigma_frac=0.0), x, model)
        map_ = Field2D(x.spec, bary.density * base.map.values.astype(np.float64))
        y = base.target_value
    return AttributionResult(map_, y, measure=bary)


METHODS = {
    "base": lambda req, x, model: base_grad(req, x, model),
    "ig": lambda req, x, model: integrated_grad(req, x, model),
    "smooth": lambda req, x, model: smooth_grad(req, x, model),
    "var": lambda req, x, model: var_grad(req, x, model),
    "wg-bary": lambda req, x, model: wasserstein_grad(req, x, model, "bary"),
    "wg-baryxgrad": lambda req, x, model: wasserstein_grad(req, x, model, "baryxgrad"),
}


def run_method(method: str, req: AttributionRequest, x: StateTensor, model) -> AttributionResult:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}")
    return METHODS[method](req, x, model)
