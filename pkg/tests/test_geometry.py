import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from displift.errors import DataError, DegenerateRange, EmptyMask, InvalidFov
from displift.geometry import (
    DisparityMap,
    PointCloud,
    ProjectionParams,
    Tag,
    ViewConfig,
    camera_to_pixels,
    focal_length,
    focal_length_dfov,
    min_filter,
    normalize_disparity,
    pixel_to_image_coords,
    zbuffer,
)


def _map(values, mask=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return DisparityMap(values, np.ones(values.shape, bool) if mask is None else mask)


def test_normalize_affine_rescale():
    out = normalize_disparity(_map([[2.0, 3.0, 4.0]]))
    np.testing.assert_array_equal(out.values, [[0.0, 0.5, 1.0]])


def test_normalize_idempotent_on_normalized():
    out = normalize_disparity(_map([[0.0, 0.25, 1.0]]))
    np.testing.assert_array_equal(out.values, [[0.0, 0.25, 1.0]])


def test_normalize_constant_map_is_degenerate():
    with pytest.raises(DegenerateRange):
        normalize_disparity(_map([[7.0, 7.0, 7.0]]))


def test_normalize_ignores_and_zeroes_background():
    values = np.array([[100.0, 1.0], [3.0, -50.0]])
    mask = np.array([[False, True], [True, False]])
    out = normalize_disparity(DisparityMap(values, mask))
    np.testing.assert_array_equal(out.values, [[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(out.mask, mask)


def test_normalize_empty_mask():
    with pytest.raises(EmptyMask):
        normalize_disparity(DisparityMap(np.ones((2, 2)), np.zeros((2, 2), bool)))


@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)))
def test_normalize_idempotent_and_order_preserving(raw):
    if np.ptp(raw) < 1e-6:
        return
    once = normalize_disparity(_map(raw))
    twice = normalize_disparity(once)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)
    v = once.values[0]
    assert v.min() == 0.0 and v.max() == 1.0
    order = np.argsort(raw, kind="stable")
    assert np.all(np.diff(v[order]) >= 0)


def test_focal_length_unit_diagonal():
    assert focal_length(math.pi / 2, math.sqrt(2), math.sqrt(2)) == pytest.approx(1.0, rel=1e-15)


def test_focal_length_three_four():
    assert focal_length(math.pi / 2, 3, 4) == pytest.approx(2.5, rel=1e-15)


def test_focal_length_sixty_degrees():
    # frozen from an independent 30-digit evaluation
    assert focal_length(math.pi / 3, 100, 100) == pytest.approx(122.474487139158904909864, rel=1e-14)


@pytest.mark.parametrize("fov", [0.0, math.pi, -0.1, 4.0])
def test_focal_length_rejects_fov(fov):
    with pytest.raises(InvalidFov):
        focal_length(fov, 10, 10)


@given(st.floats(0.01, math.pi - 0.01), st.floats(0.001, 0.5))
def test_focal_length_decreasing(fov, gap):
    hi = min(fov + gap, math.pi - 1e-3)
    if hi <= fov:
        return
    assert focal_length(hi, 64, 48) < focal_length(fov, 64, 48)


def test_focal_length_derivative():
    fov, h = 0.9, 1e-6
    numeric = (focal_length(fov + h, 30, 40) - focal_length(fov - h, 30, 40)) / (2 * h)
    assert focal_length_dfov(fov, 30, 40) == pytest.approx(numeric, rel=1e-7)


@pytest.mark.parametrize(
    "i, j, w, h, expected",
    [(0, 0, 2, 2, (-0.5, 0.5)), (1, 1, 3, 3, (0.0, 0.0)), (3, 0, 4, 4, (1.5, 1.5))],
)
def test_pixel_to_image_coords(i, j, w, h, expected):
    assert pixel_to_image_coords(i, j, w, h) == expected


@given(st.integers(1, 50), st.integers(1, 50))
def test_image_coords_sum_to_zero(w, h):
    j, i = np.mgrid[0:h, 0:w]
    u, v = pixel_to_image_coords(i.ravel(), j.ravel(), w, h)
    assert u.sum() == 0.0 and v.sum() == 0.0


def test_projection_params_validation():
    with pytest.raises(InvalidFov):
        ProjectionParams(1, 0, math.pi, 0)
    with pytest.raises(DataError):
        ProjectionParams(float("nan"), 0, 1, 0)
    p = ProjectionParams(1, 2, 0.5, -1)
    assert ProjectionParams.from_json(p.to_json()) == p
    assert set(p.to_json()) == {"s", "t", "fov_rad", "z_t"}
    with pytest.raises(DataError):
        ProjectionParams.from_json({"s": 1, "t": 0, "fov": 1, "z_t": 0})


def test_disparity_map_is_immutable():
    m = _map([[1.0, 2.0]])
    with pytest.raises(ValueError):
        m.values[0, 0] = 5
    with pytest.raises(DataError):
        DisparityMap(np.ones((2, 2)), np.ones((3, 3), bool))
    with pytest.raises(DataError):
        DisparityMap(np.array([[np.inf]]), np.ones((1, 1), bool))


def test_point_cloud_tags():
    cloud = PointCloud.tagged(np.zeros((3, 3)), Tag.PROJECTED)
    assert list(cloud.tags) == [2, 2, 2]
    with pytest.raises(DataError):
        PointCloud(np.zeros((3, 3)), [0, 1])
    merged = PointCloud.concatenate([cloud, PointCloud.tagged(np.ones((1, 3)), Tag.INITIAL_OCCLUDED)])
    assert list(merged.tags) == [2, 2, 2, 1]
    assert PointCloud.concatenate([cloud, PointCloud(np.ones((1, 3)))]).tags is None


def test_view_config_validation():
    view = ViewConfig()
    assert view.render_width == 256 and view.vis_fov == pytest.approx(math.radians(50))
    assert ViewConfig.from_json(view.to_json()) == view
    with pytest.raises(DataError):
        ViewConfig(render_width=4)
    with pytest.raises(DataError):
        ViewConfig(epsilon_vis=0)


def test_camera_to_pixels_centre_and_edges():
    pts = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [100.0, 0.0, 1.0]])
    i, j, inside = camera_to_pixels(pts, 10.0, 3, 3)
    assert inside.tolist() == [True, False, False]
    assert (i[0], j[0]) == (1, 1)


def test_zbuffer_keeps_nearest_then_smallest_index():
    pixel = np.array([0, 0, 0, 2])
    depth = np.array([2.0, 1.0, 1.0, 5.0])
    buffer, winner = zbuffer(pixel, depth, 4)
    np.testing.assert_array_equal(buffer, [1.0, np.inf, 5.0, np.inf])
    np.testing.assert_array_equal(winner, [1, -1, 3, -1])


def test_min_filter_window():
    buf = np.full((5, 5), np.inf)
    buf[2, 2] = 1.0
    out = min_filter(buf, 1)
    assert np.isfinite(out).sum() == 9
    assert np.isinf(out[0, 0])
