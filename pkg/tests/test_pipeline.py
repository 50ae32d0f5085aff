import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from displift.errors import DegenerateVisible, EmptyCloud, EmptyMask
from displift.fitter import FitConfig
from displift.geometry import DisparityMap, PointCloud, Tag
from displift.metrics import chamfer, fscore
from displift.pipeline import refine
from displift.projection import project_disparity
from displift.synth import SceneSpec, make_synthetic_scene
from displift.visibility import split_visibility

TINY = FitConfig(restarts=2, steps=30, batch_projected=128, batch_prior=128)


def test_fully_visible_prior_gives_psi(sphere_scene):
    # a disc facing the camera has no occluded part
    g = np.linspace(-0.3, 0.3, 30)
    x, y = np.meshgrid(g, g)
    keep = x**2 + y**2 < 0.09
    prior = PointCloud(np.stack([x[keep], y[keep], np.zeros(keep.sum())], 1))
    refined, report = refine(prior, sphere_scene.disparity, view=sphere_scene.view, params=sphere_scene.true_params)
    assert report.n_occluded == 0
    psi = project_disparity(sphere_scene.disparity, sphere_scene.true_params)
    np.testing.assert_array_equal(refined.points, psi.points)
    np.testing.assert_array_equal(refined.tags, psi.tags)


@pytest.mark.parametrize("shape", ["sphere", "box", "stool", "plane-grid"])
def test_exact_inputs_stay_within_sampling_floor(shape):
    scene = make_synthetic_scene(SceneSpec(shape, samples=4000, seed=3))
    refined, report = refine(scene.gt_cloud, scene.disparity, view=scene.view, params=scene.true_params, ground_truth=scene.gt_cloud)
    # pixel sampling floor: ray hits versus the ground-truth samples they replace
    visible = split_visibility(scene.gt_cloud, scene.view)[0]
    floor = chamfer(scene.visible_points, visible)
    assert report.metrics["refined"]["chamfer"] <= floor * (1 + 1e-9)
    assert report.metrics["prior"]["chamfer"] == 0.0


def test_report_counts_and_tags(stool_scene):
    refined, report = refine(stool_scene.gt_cloud, stool_scene.disparity, TINY, stool_scene.view)
    assert set(refined.tags.tolist()) <= {Tag.INITIAL_OCCLUDED, Tag.PROJECTED}
    assert report.n_visible + report.n_occluded == len(stool_scene.gt_cloud)
    assert len(refined) == report.n_projected + report.n_occluded - report.n_removed
    assert 0 <= report.n_removed <= report.n_occluded
    assert report.fit.config == TINY
    out = report.to_json()
    assert out["config"]["fit"] == TINY.to_json() and out["config"]["view"] == stool_scene.view.to_json()


def test_refine_is_deterministic(stool_scene):
    a = refine(stool_scene.gt_cloud, stool_scene.disparity, TINY, stool_scene.view)
    b = refine(stool_scene.gt_cloud, stool_scene.disparity, TINY, stool_scene.view)
    np.testing.assert_array_equal(a[0].points, b[0].points)
    assert a[1].to_json() == b[1].to_json()


def test_refine_errors(sphere_scene):
    with pytest.raises(EmptyCloud):
        refine(PointCloud(np.zeros((0, 3))), sphere_scene.disparity)
    with pytest.raises(EmptyMask):
        refine(sphere_scene.gt_cloud, DisparityMap(np.ones((4, 4)), np.zeros((4, 4), bool)))
    with pytest.raises(DegenerateVisible):
        refine(PointCloud(np.zeros((5, 3))), sphere_scene.disparity, TINY)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9))
def test_tag_partition_for_any_prior(sphere_scene, seed, keep):
    rng = np.random.default_rng(seed)
    gt = sphere_scene.gt_cloud.points
    prior = PointCloud(gt[rng.random(len(gt)) < keep] + rng.normal(scale=0.01, size=(1, 3)))
    refined, report = refine(prior, sphere_scene.disparity, view=sphere_scene.view, params=sphere_scene.true_params)
    assert Tag.INITIAL_VISIBLE not in refined.tags
    assert np.sum(refined.tags == Tag.PROJECTED) == report.n_projected
    assert np.sum(refined.tags == Tag.INITIAL_OCCLUDED) == report.n_occluded - report.n_removed


def test_oracle_camera_improves_degraded_prior(stool_scene):
    rng = np.random.default_rng(0)
    gt = stool_scene.gt_cloud.points
    prior = PointCloud(gt[rng.random(len(gt)) < 0.25])
    prior = PointCloud(prior.points + rng.normal(scale=0.02, size=prior.points.shape))
    refined, _ = refine(prior, stool_scene.disparity, view=stool_scene.view, params=stool_scene.true_params)
    assert fscore(refined, stool_scene.gt_cloud, 0.01)[2] >= fscore(prior, stool_scene.gt_cloud, 0.01)[2]
