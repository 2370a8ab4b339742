"""Grid data types, measure normalization, ROI aggregation and raster I/O.

Coordinates are normalized to the unit square: cell (i, j) on an H x W grid
sits at ((i + 0.5) / H, (j + 0.5) / W). All transport costs downstream use
these normalized coordinates, so regularization strengths are independent
of the grid resolution.

Storage is float32; every reduction accumulates in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateStatError,
    FormatError,
    OutOfBoundsError,
    ZeroMassError,
)

_MAGIC = b"WGRD"
_VERSION = 1

# Default cell edge in km when converting displacements for reporting.
DEFAULT_CELL_KM = 2.5


@dataclass(frozen=True)
class GridSpec:
    """An H x W grid with cell centers mapped into the open unit square."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("grid must be at least 2x2")

    @property
    def ncells(self) -> int:
        return self.height * self.width

    def row_coords(self) -> np.ndarray:
        return (np.arange(self.height, dtype=np.float64) + 0.5) / self.height

    def col_coords(self) -> np.ndarray:
        return (np.arange(self.width, dtype=np.float64) + 0.5) / self.width

    def cell_coords(self) -> np.ndarray:
        """(H*W, 2) array of normalized (row, col) centers, row-major."""
        r = self.row_coords()
        c = self.col_coords()
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class Field2D:
    """A single scalar field on a grid. Values stored float32, immutable."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != (self.spec.height, self.spec.width):
            raise ValueError(f"expected {self.spec.height}x{self.spec.width}, got {v.shape}")
        _check_finite(v, "Field2D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class StateTensor:
    """Multi-channel field, shape (H, W, C), float32, immutable."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[:2] != (self.spec.height, self.spec.width):
            raise ValueError(f"expected (H, W, C) = ({self.spec.height}, {self.spec.width}, *), got {v.shape}")
        if v.shape[2] < 1:
            raise ValueError("need at least one channel")
        _check_finite(v, "StateTensor")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def channel(self, c: int) -> Field2D:
        return Field2D(self.spec, self.values[:, :, c])


@dataclass(frozen=True)
class SpatialMeasure:
    """Non-negative density on the grid summing to one."""

    spec: GridSpec
    density: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.density, dtype=np.float64)
        if d.shape != (self.spec.height, self.spec.width):
            raise ValueError(f"expected {self.spec.height}x{self.spec.width}, got {d.shape}")
        _check_finite(d, "SpatialMeasure")
        if np.any(d < 0):
            raise ValueError("density has negative entries")
        total = float(d.sum(dtype=np.float64))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"density sums to {total}, not 1")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)


@dataclass(frozen=True)
class RoiBox:
    """Inclusive index box [row_min, row_max] x [col_min, col_max]."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if self.row_min < 0 or self.col_min < 0:
            raise ValueError("negative box indices")
        if self.row_max < self.row_min or self.col_max < self.col_min:
            raise ValueError("empty box")

    def check_within(self, spec: GridSpec):
        if self.row_max >= spec.height or self.col_max >= spec.width:
            raise OutOfBoundsError(
                f"box ({self.row_min}:{self.row_max}, {self.col_min}:{self.col_max}) "
                f"exceeds {spec.height}x{spec.width} grid"
            )

    @property
    def ncells(self) -> int:
        return (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)


def normalize_to_measure(g: Field2D) -> SpatialMeasure:
    """Map a signed map to a probability density: |g| / sum|g|.

    Raises ZeroMassError when the map is identically zero; callers must not
    substitute a uniform density, that would fabricate an explanation.
    """
    a = np.abs(g.values.astype(np.float64))
    total = a.sum(dtype=np.float64)
    if total <= 0.0:
        raise ZeroMassError("attribution map has zero total mass")
    return SpatialMeasure(g.spec, a / total)


def roi_mean(f: Field2D, box: RoiBox) -> float:
    """Arithmetic mean of the field over the box (float64 accumulation)."""
    box.check_within(f.spec)
    sub = f.values[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1]
    return float(sub.mean(dtype=np.float64))


def zscore(x: StateTensor, mean, std) -> StateTensor:
    """Per-channel standardization (x[c] - mean[c]) / std[c]."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    std = np.asarray(std, dtype=np.float64).reshape(-1)
    if mean.shape[0] != x.channels or std.shape[0] != x.channels:
        raise ValueError("mean/std length must match channel count")
    if np.any(std <= 0):
        raise DegenerateStatError("std must be strictly positive per channel")
    out = (x.values.astype(np.float64) - mean[None, None, :]) / std[None, None, :]
    return StateTensor(x.spec, out.astype(np.float32))


def write_raster(t: StateTensor, path) -> None:
    """Write 'WGRD v1': magic, version, reserved, H/W/C u32 LE, float32 LE payload.

    Payload is channel-major then row-major.
    """
    h, w, c = t.spec.height, t.spec.width, t.channels
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(bytes([_VERSION, 0, 0, 0]))
        fh.write(struct.pack("<III", h, w, c))
        # channel-major: all of channel 0, then channel 1, ...
        payload = np.ascontiguousarray(np.moveaxis(t.values, 2, 0), dtype="<f4")
        fh.write(payload.tobytes())


def read_raster(path) -> StateTensor:
    """Inverse of write_raster; bit-exact round trip."""
    with open(path, "rb") as fh:
        header = fh.read(20)
        if len(header) < 20 or header[:4] != _MAGIC:
            raise FormatError("bad magic or truncated header")
        if header[4] != _VERSION:
            raise FormatError(f"unsupported version {header[4]}")
        h, w, c = struct.unpack("<III", header[8:20])
        if h < 2 or w < 2 or c < 1:
            raise FormatError(f"invalid dimensions {h}x{w}x{c}")
        expected = h * w * c * 4
        payload = fh.read(expected + 1)
        if len(payload) != expected:
            raise FormatError(f"payload size {len(payload)} != expected {expected}")
    values = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite payload")
    return StateTensor(GridSpec(h, w), np.moveaxis(values, 0, 2))
