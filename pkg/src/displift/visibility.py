"""Z-buffer visibility split and post-merge occlusion cleaning."""

from __future__ import annotations

import numpy as np

from .errors import EmptyCloud
from .geometry import (
    PointCloud,
    ProjectionParams,
    Tag,
    ViewConfig,
    camera_to_pixels,
    focal_length,
    min_filter,
    zbuffer,
)


def _window_minimum(points_cam: np.ndarray, f: float, width: int, height: int, radius: int):
    """Z-buffer ``points_cam`` and take the minimum over each pixel's window.

    Returns the flat windowed buffer plus each point's flat pixel and
    in-frame flag.
    """
    i, j, inside = camera_to_pixels(points_cam, f, width, height)
    flat = j * width + i
    buffer, _ = zbuffer(flat[inside], points_cam[inside, 2], width * height)
    window = min_filter(buffer.reshape(height, width), radius).reshape(-1)
    return window, flat, inside


def visibility_mask(points: np.ndarray, view: ViewConfig) -> np.ndarray:
    """Boolean visibility of object-frame ``points`` from the view camera."""
    cam = np.array(points, dtype=np.float64).reshape(-1, 3)
    cam[:, 2] += view.camera_offset
    f = focal_length(view.vis_fov, view.render_width, view.render_height)
    window, flat, inside = _window_minimum(cam, f, view.render_width, view.render_height, view.dilation_radius)
    visible = np.zeros(len(cam), dtype=bool)
    visible[inside] = cam[inside, 2] <= window[flat[inside]] + view.epsilon_vis
    return visible


def split_visibility(cloud: PointCloud, view: ViewConfig | None = None) -> tuple[PointCloud, PointCloud]:
    """Partition a prior cloud into the parts seen and hidden from the view camera.

    A point is visible when its depth is within ``epsilon_vis`` of the
    smallest z-buffer depth in a ``dilation_radius`` window around its
    pixel. Points behind the camera or outside the frame count as occluded.
    Input order is preserved within each part.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot split an empty cloud")
    view = view or ViewConfig()
    visible = visibility_mask(cloud.points, view)
    vis = PointCloud.tagged(cloud.points[visible], Tag.INITIAL_VISIBLE)
    occ = PointCloud.tagged(cloud.points[~visible], Tag.INITIAL_OCCLUDED)
    return vis, occ


def occluded_by(points: np.ndarray, psi: PointCloud, params: ProjectionParams, view: ViewConfig) -> np.ndarray:
    """Which ``points`` sit behind the projected cloud under the fitted camera.

    The fitted camera has the fitted field of view and the view's raster
    size; camera depth is ``Z' - z_t``.
    """
    width, height = view.render_width, view.render_height
    f = focal_length(params.fov, width, height)
    psi_cam = np.array(psi.points)
    psi_cam[:, 2] -= params.z_t
    window, _, _ = _window_minimum(psi_cam, f, width, height, view.dilation_radius)

    cam = np.array(points, dtype=np.float64).reshape(-1, 3)
    cam[:, 2] -= params.z_t
    i, j, inside = camera_to_pixels(cam, f, width, height)
    nearest = np.where(inside, window[j * width + i], np.inf)
    return np.isfinite(nearest) & (cam[:, 2] >= nearest + view.epsilon_occ)


def clean_occluded(occ: PointCloud, psi: PointCloud, params: ProjectionParams, view: ViewConfig | None = None) -> PointCloud:
    """Drop prior occluded points that the projected cloud no longer hides.

    A point survives only if the z-buffer of ``psi`` has an entry within
    ``dilation_radius`` of its pixel and the point lies at least
    ``epsilon_occ`` behind that entry. Survivors are tagged
    ``INITIAL_OCCLUDED``.
    """
    if len(psi) == 0:
        raise EmptyCloud("projected cloud is empty; refusing to delete all occluded structure")
    view = view or ViewConfig()
    if len(occ) == 0:
        return PointCloud.tagged(np.zeros((0, 3)), Tag.INITIAL_OCCLUDED)
    keep = occluded_by(occ.points, psi, params, view)
    return PointCloud.tagged(occ.points[keep], Tag.INITIAL_OCCLUDED)
