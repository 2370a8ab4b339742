"""Minimal reverse-mode automatic differentiation over 2D tensors.

A Tape records TensorNodes in forward execution order; backward() seeds a
scalar target with gradient 1 and sweeps the tape in reverse. Only the
operators needed by the toy forecaster exist: convolution, ReLU, 2x2 max
pooling, softmax attention (built from matmul/softmax primitives), affine
maps, reshapes and the ROI mean readout.

Values are float64 internally; callers convert to/from float32 storage at
the boundary. No broadcasting, no higher-order derivatives, no training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import norm

from .errors import NotScalarError, ShapeError
from .fields import RoiBox


class TensorNode:
    """One value in the computation graph, with a same-shape grad buffer."""

    __slots__ = ("value", "grad", "op", "_parents", "_backward")

    def __init__(self, value, op="const", parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered node list; construction order is the topological order."""

    def __init__(self):
        self.nodes: list[TensorNode] = []

    def _record(self, node: TensorNode) -> TensorNode:
        self.nodes.append(node)
        return node

    def constant(self, value) -> TensorNode:
        return self._record(TensorNode(value))

    # -- elementwise and structural ops ------------------------------------

    def add(self, a: TensorNode, b: TensorNode) -> TensorNode:
        if a.shape != b.shape:
            raise ShapeError(f"add: {a.shape} vs {b.shape}")
        out = TensorNode(a.value + b.value, "add", (a, b))

        def bwd():
            a.grad += out.grad
            b.grad += out.grad

        out._backward = bwd
        return self._record(out)

    def scale(self, a: TensorNode, c: float) -> TensorNode:
        out = TensorNode(a.value * c, "scale", (a,))

        def bwd():
            a.grad += out.grad * c

        out._backward = bwd
        return self._record(out)

    def reshape(self, a: TensorNode, shape) -> TensorNode:
        out = TensorNode(a.value.reshape(shape), "reshape", (a,))

        def bwd():
            a.grad += out.grad.reshape(a.shape)

        out._backward = bwd
        return self._record(out)

    def select_channel(self, a: TensorNode, c: int) -> TensorNode:
        out = TensorNode(a.value[:, :, c], "select_channel", (a,))

        def bwd():
            a.grad[:, :, c] += out.grad

        out._backward = bwd
        return self._record(out)

    def sum_squares(self, a: TensorNode) -> TensorNode:
        out = TensorNode(0.5 * np.sum(a.value**2), "sum_squares", (a,))

        def bwd():
            a.grad += out.grad * a.value

        out._backward = bwd
        return self._record(out)

    # -- grid operators -----------------------------------------------------

    def conv2d(self, x: TensorNode, kernel: np.ndarray) -> TensorNode:
        """Same-padded 2D correlation, (H, W, Cin) x (kh, kw, Cin, Cout).

        The kernel is a constant (no training). Backward applies the
        spatially-flipped kernel with swapped channel axes.
        """
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 4:
            raise ShapeError(f"kernel must be (kh, kw, Cin, Cout), got {kernel.shape}")
        kh, kw = kernel.shape[:2]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel must be odd-sized, got {kh}x{kw}")
        if x.value.ndim != 3 or x.shape[2] != kernel.shape[2]:
            raise ShapeError(f"input {x.shape} incompatible with kernel {kernel.shape}")

        out = TensorNode(_corr2d(x.value, kernel), "conv2d", (x,))
        flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)

        def bwd():
            x.grad += _corr2d(out.grad, flipped)

        out._backward = bwd
        return self._record(out)

    def relu(self, x: TensorNode) -> TensorNode:
        out = TensorNode(np.maximum(x.value, 0.0), "relu", (x,))
        gate = (x.value > 0.0).astype(np.float64)  # subgradient 0 at the kink

        def bwd():
            x.grad += out.grad * gate

        out._backward = bwd
        return self._record(out)

    def maxpool2(self, x: TensorNode) -> TensorNode:
        """2x2 non-overlapping max pool; ties route to the first cell in
        row-major order, which fixes gradient placement on flat regions."""
        h, w = x.shape[:2]
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even dims, got {h}x{w}")
        c = x.shape[2]
        blocks = x.value.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3)
        flat = blocks.reshape(h // 2, w // 2, c, 4)
        arg = np.argmax(flat, axis=-1)  # first max wins, row-major within window
        out = TensorNode(np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0], "maxpool2", (x,))

        def bwd():
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, arg[..., None], out.grad[..., None], axis=-1)
            x.grad += gflat.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)

        out._backward = bwd
        return self._record(out)

    def upsample2(self, x: TensorNode) -> TensorNode:
        """Nearest-neighbor 2x upsample of (H, W, C)."""
        out = TensorNode(np.repeat(np.repeat(x.value, 2, axis=0), 2, axis=1), "upsample2", (x,))

        def bwd():
            h, w, c = x.shape
            x.grad += out.grad.reshape(h, 2, w, 2, c).sum(axis=(1, 3))

        out._backward = bwd
        return self._record(out)

    def roi_mean(self, x: TensorNode, box: RoiBox) -> TensorNode:
        if x.value.ndim != 2:
            raise ShapeError("roi_mean expects a 2D node")
        if box.row_max >= x.shape[0] or box.col_max >= x.shape[1]:
            raise ShapeError("box exceeds node grid")
        rs, re = box.row_min, box.row_max + 1
        cs, ce = box.col_min, box.col_max + 1
        n = box.ncells
        out = TensorNode(x.value[rs:re, cs:ce].mean(), "roi_mean", (x,))

        def bwd():
            x.grad[rs:re, cs:ce] += out.grad / n

        out._backward = bwd
        return self._record(out)

    # -- token operators ------------------------------------------------------

    def linear(self, x: TensorNode, w: np.ndarray) -> TensorNode:
        """x @ w with constant weights."""
        w = np.asarray(w, dtype=np.float64)
        out = TensorNode(x.value @ w, "linear", (x,))

        def bwd():
            x.grad += out.grad @ w.T

        out._backward = bwd
        return self._record(out)

    def matmul(self, a: TensorNode, b: TensorNode) -> TensorNode:
        out = TensorNode(a.value @ b.value, "matmul", (a, b))

        def bwd():
            a.grad += out.grad @ b.value.T
            b.grad += a.value.T @ out.grad

        out._backward = bwd
        return self._record(out)

    def transpose(self, a: TensorNode) -> TensorNode:
        out = TensorNode(a.value.T, "transpose", (a,))

        def bwd():
            a.grad += out.grad.T

        out._backward = bwd
        return self._record(out)

    def softmax_rows(self, s: TensorNode) -> TensorNode:
        """Row-wise softmax with row-max subtraction for stability."""
        z = s.value - s.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        a = e / e.sum(axis=1, keepdims=True)
        out = TensorNode(a, "softmax_rows", (s,))

        def bwd():
            g = out.grad
            s.grad += a * (g - (g * a).sum(axis=1, keepdims=True))

        out._backward = bwd
        return self._record(out)

    def attention(self, x: TensorNode, w: "AttentionWeights") -> TensorNode:
        """Scaled dot-product attention over n tokens, built from primitives."""
        q = self.linear(x, w.w_q)
        k = self.linear(x, w.w_k)
        v = self.linear(x, w.w_v)
        s = self.scale(self.matmul(q, self.transpose(k)), 1.0 / np.sqrt(w.d_k))
        a = self.softmax_rows(s)
        return self.matmul(a, v)

    # -- backward sweep -------------------------------------------------------

    def backward(self, target: TensorNode) -> None:
        if target.value.shape != ():
            raise NotScalarError(f"backward target has shape {target.value.shape}")
        for node in self.nodes:
            node.grad = np.zeros_like(node.value)
        target.grad = np.ones_like(target.value)
        seen_target = False
        for node in reversed(self.nodes):
            if node is target:
                seen_target = True
            if seen_target and node._backward is not None:
                node._backward()


@dataclass(frozen=True)
class AttentionWeights:
    """Query/key/value projections for one attention layer."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        for name in ("w_q", "w_k", "w_v"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.w_q.shape != self.w_k.shape:
            raise ShapeError("w_q and w_k must share shape")
        if self.d_k < 1:
            raise ShapeError("d_k must be >= 1")

    @property
    def d_k(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_v(self) -> int:
        return self.w_v.shape[1]


def _corr2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded same correlation: out[h,w,o] = sum K[m,n,c,o] x[h+m-p, w+n-q, c]."""
    kh, kw = kernel.shape[:2]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    windows = sliding_window_view(xp, (kh, kw), axis=(0, 1))  # (H, W, Cin, kh, kw)
    return np.einsum("hwcmn,mnco->hwo", windows, kernel, optimize=True)


def attention_backward_closed_form(x: np.ndarray, w: AttentionWeights, delta_o: np.ndarray) -> np.ndarray:
    """Input gradient of scaled dot-product attention in one boxed expression.

    Independent of the tape: used to cross-check the composed autodiff
    backward of Tape.attention.
    """
    x = np.asarray(x, dtype=np.float64)
    delta_o = np.asarray(delta_o, dtype=np.float64)
    n = x.shape[0]
    if delta_o.shape != (n, w.d_v):
        raise ShapeError(f"upstream gradient must be ({n}, {w.d_v}), got {delta_o.shape}")
    q = x @ w.w_q
    k = x @ w.w_k
    v = x @ w.w_v
    s = q @ k.T / np.sqrt(w.d_k)
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    a = e / e.sum(axis=1, keepdims=True)

    delta_a = delta_o @ v.T
    delta_s = a * (delta_a - (delta_a * a).sum(axis=1, keepdims=True))
    return (
        a.T @ delta_o @ w.w_v.T
        + (delta_s @ k @ w.w_q.T) / np.sqrt(w.d_k)
        + (delta_s.T @ q @ w.w_k.T) / np.sqrt(w.d_k)
    )


def relu_noise_expectation(z: float, sigma_tilde: float) -> float:
    """E[max(0, z + eta)] for eta ~ N(0, sigma_tilde^2).

    Strictly positive for every finite z: negative pre-activations still
    yield positive expected output under noise.
    """
    if sigma_tilde <= 0:
        raise ValueError("sigma_tilde must be > 0")
    u = z / sigma_tilde
    return float(z * norm.cdf(u) + sigma_tilde * norm.pdf(u))


def kernel_noise_variance(kernel: np.ndarray, sigma: float) -> float:
    """Variance of i.i.d. N(0, sigma^2) input noise after one correlation:
    sigma^2 times the squared l2 norm of the kernel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    k = np.asarray(kernel, dtype=np.float64)
    return float(sigma**2 * np.sum(k**2))
