import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgrad.errors import (
    DegenerateStatError,
    FormatError,
    OutOfBoundsError,
    ZeroMassError,
)
from wgrad.fields import (
    Field2D,
    GridSpec,
    RoiBox,
    SpatialMeasure,
    StateTensor,
    normalize_to_measure,
    read_raster,
    roi_mean,
    write_raster,
    zscore,
)

SPEC = GridSpec(4, 4)


# --------------------------------------------------------------------------
# grid geometry


def test_cell_coords_are_cell_centers_in_unit_square():
    spec = GridSpec(2, 4)
    rows, cols = spec.row_coords(), spec.col_coords()
    assert np.allclose(rows, [0.25, 0.75])
    assert np.allclose(cols, [0.125, 0.375, 0.625, 0.875])


def test_grid_requires_two_cells_per_axis():
    with pytest.raises(ValueError):
        GridSpec(1, 4)
    with pytest.raises(ValueError):
        GridSpec(4, 0)


def test_field_rejects_non_finite():
    v = np.zeros((4, 4), dtype=np.float32)
    v[0, 0] = np.nan
    with pytest.raises(ValueError):
        Field2D(SPEC, v)


def test_field_values_are_immutable():
    f = Field2D(SPEC, np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


# --------------------------------------------------------------------------
# normalization


def test_one_hot_normalizes_to_dirac():
    v = np.zeros((4, 4), dtype=np.float32)
    v[2, 1] = -3.0  # sign must not matter
    mu = normalize_to_measure(Field2D(SPEC, v))
    expected = np.zeros((4, 4))
    expected[2, 1] = 1.0
    assert np.array_equal(mu.density, expected)


def test_zero_map_raises_zero_mass():
    with pytest.raises(ZeroMassError):
        normalize_to_measure(Field2D(SPEC, np.zeros((4, 4), dtype=np.float32)))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_normalized_measure_sums_to_one(seed):
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal((5, 7)).astype(np.float32)
    if np.abs(v).sum() == 0:
        return
    mu = normalize_to_measure(Field2D(GridSpec(5, 7), v))
    assert abs(mu.density.sum() - 1.0) < 1e-9
    assert np.all(mu.density >= 0)


# --------------------------------------------------------------------------
# ROI reduction


def test_roi_mean_constant_field():
    f = Field2D(SPEC, np.full((4, 4), 5.0, dtype=np.float32))
    assert roi_mean(f, RoiBox(0, 3, 0, 3)) == 5.0


def test_roi_mean_full_grid_2x2():
    f = Field2D(GridSpec(2, 2), np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert roi_mean(f, RoiBox(0, 1, 0, 1)) == 2.5


def test_roi_mean_single_cell():
    f = Field2D(GridSpec(2, 2), np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert roi_mean(f, RoiBox(0, 0, 1, 1)) == 2.0


def test_roi_out_of_bounds():
    box = RoiBox(0, 4, 0, 3)  # row_max == height
    with pytest.raises(OutOfBoundsError):
        box.check_within(SPEC)


def test_roi_inverted_bounds_rejected():
    with pytest.raises(ValueError):
        RoiBox(3, 1, 0, 2)


# --------------------------------------------------------------------------
# z-score


def test_zscore_identity_when_standardized():
    rng = np.random.Generator(np.random.Philox(0))
    v = rng.standard_normal((4, 4, 2)).astype(np.float32)
    x = StateTensor(SPEC, v)
    out = zscore(x, np.zeros(2), np.ones(2))
    assert np.array_equal(out.values, x.values)


def test_zscore_constant_channel_goes_to_zero():
    v = np.zeros((4, 4, 2), dtype=np.float32)
    v[:, :, 0] = 3.5
    v[:, :, 1] = -1.0
    out = zscore(StateTensor(SPEC, v), np.array([3.5, 0.0]), np.array([2.0, 1.0]))
    assert np.all(out.values[:, :, 0] == 0.0)
    assert np.all(out.values[:, :, 1] == -1.0)


def test_zscore_rejects_zero_std():
    x = StateTensor(SPEC, np.zeros((4, 4, 1), dtype=np.float32))
    with pytest.raises(DegenerateStatError):
        zscore(x, np.zeros(1), np.zeros(1))


# --------------------------------------------------------------------------
# raster format


@pytest.mark.parametrize("seed", range(20))
def test_raster_round_trip_bit_exact(seed, tmp_path):
    rng = np.random.Generator(np.random.Philox(seed))
    t = StateTensor(GridSpec(3, 5), rng.standard_normal((3, 5, 2)).astype(np.float32))
    path = tmp_path / "t.wgrd"
    write_raster(t, path)
    back = read_raster(path)
    assert back.values.tobytes() == t.values.tobytes()
    assert (back.spec.height, back.spec.width) == (3, 5)


def test_raster_wrong_magic(tmp_path):
    path = tmp_path / "bad.wgrd"
    t = StateTensor(SPEC, np.zeros((4, 4, 1), dtype=np.float32))
    write_raster(t, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_raster(path)


def test_raster_truncated_payload(tmp_path):
    path = tmp_path / "trunc.wgrd"
    t = StateTensor(SPEC, np.zeros((4, 4, 2), dtype=np.float32))
    write_raster(t, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_raster(path)


def test_raster_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "extra.wgrd"
    t = StateTensor(SPEC, np.zeros((4, 4, 1), dtype=np.float32))
    write_raster(t, path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_raster(path)


def test_raster_bad_version(tmp_path):
    path = tmp_path / "ver.wgrd"
    t = StateTensor(SPEC, np.zeros((4, 4, 1), dtype=np.float32))
    write_raster(t, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_raster(path)


def test_raster_payload_is_channel_major(tmp_path):
    v = np.zeros((2, 2, 2), dtype=np.float32)
    v[:, :, 0] = [[1, 2], [3, 4]]
    v[:, :, 1] = [[5, 6], [7, 8]]
    path = tmp_path / "order.wgrd"
    write_raster(StateTensor(GridSpec(2, 2), v), path)
    payload = np.frombuffer(path.read_bytes()[20:], dtype="<f4")
    assert np.array_equal(payload, [1, 2, 3, 4, 5, 6, 7, 8])
