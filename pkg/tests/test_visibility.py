import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from displift.errors import EmptyCloud
from displift.geometry import PointCloud, ProjectionParams, Tag, ViewConfig
from displift.visibility import clean_occluded, occluded_by, split_visibility

VIEW = ViewConfig(render_width=32, render_height=32, dilation_radius=1)
PARAMS = ProjectionParams(1.0, 0.1, math.radians(50), -2.0)


def random_cloud(seed, n):
    return PointCloud(np.random.default_rng(seed).uniform(-0.5, 0.5, size=(n, 3)))


def test_single_point_is_visible():
    vis, occ = split_visibility(PointCloud([[0.0, 0.0, 0.0]]), VIEW)
    assert len(vis) == 1 and len(occ) == 0
    assert vis.tags.tolist() == [Tag.INITIAL_VISIBLE]


def test_farther_point_on_ray_is_occluded():
    vis, occ = split_visibility(PointCloud([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]), VIEW)
    np.testing.assert_array_equal(vis.points, [[0.0, 0.0, -1.0]])
    np.testing.assert_array_equal(occ.points, [[0.0, 0.0, 1.0]])
    assert occ.tags.tolist() == [Tag.INITIAL_OCCLUDED]


def test_behind_camera_is_occluded():
    vis, occ = split_visibility(PointCloud([[0.0, 0.0, -5.0], [0.0, 0.0, 0.0]]), VIEW)
    assert len(vis) == 1 and occ.points[0, 2] == -5.0


def test_empty_cloud():
    with pytest.raises(EmptyCloud):
        split_visibility(PointCloud(np.zeros((0, 3))), VIEW)


@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def test_partition(seed, n):
    cloud = random_cloud(seed, n)
    vis, occ = split_visibility(cloud, VIEW)
    assert len(vis) + len(occ) == n
    merged = np.concatenate([vis.points, occ.points])
    assert sorted(map(tuple, merged)) == sorted(map(tuple, cloud.points))


@given(st.integers(0, 2**32 - 1), st.floats(0.001, 0.1), st.floats(0.0, 0.5))
def test_epsilon_vis_monotone(seed, eps, extra):
    cloud = random_cloud(seed, 200)
    small = split_visibility(cloud, replace(VIEW, epsilon_vis=eps))[0]
    large = split_visibility(cloud, replace(VIEW, epsilon_vis=eps + extra))[0]
    assert set(map(tuple, small.points)) <= set(map(tuple, large.points))


def _psi_plane(z=0.0):
    g = np.linspace(-0.3, 0.3, 25)
    x, y = np.meshgrid(g, g)
    return PointCloud.tagged(np.stack([x.ravel(), y.ravel(), np.full(x.size, z)], 1), Tag.PROJECTED)


def test_clean_examples():
    psi = _psi_plane()
    behind = [0.0, 0.0, 2 * VIEW.epsilon_occ]
    in_front = [0.0, 0.0, -0.5]
    outside = [5.0, 5.0, 1.0]
    occ = PointCloud.tagged([behind, in_front, outside], Tag.INITIAL_OCCLUDED)
    kept = clean_occluded(occ, psi, PARAMS, VIEW)
    np.testing.assert_array_equal(kept.points, [behind])
    assert kept.tags.tolist() == [Tag.INITIAL_OCCLUDED]


def test_clean_requires_psi():
    with pytest.raises(EmptyCloud):
        clean_occluded(random_cloud(0, 5), PointCloud(np.zeros((0, 3))), PARAMS, VIEW)


@given(st.integers(0, 2**32 - 1), st.floats(-0.3, 0.3))
def test_clean_idempotent_and_sound(seed, plane_z):
    psi = _psi_plane(plane_z)
    occ = random_cloud(seed, 150).with_tag(Tag.INITIAL_OCCLUDED)
    once = clean_occluded(occ, psi, PARAMS, VIEW)
    twice = clean_occluded(once, psi, PARAMS, VIEW)
    np.testing.assert_array_equal(once.points, twice.points)
    assert occluded_by(once.points, psi, PARAMS, VIEW).all()
    assert len(once) <= len(occ)
