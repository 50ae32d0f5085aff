"""Disparity to 3D lifting and its inverse renderer."""

from __future__ import annotations

import logging

import numpy as np

from .errors import EmptyCloud, EmptyMask, NonPositiveDepth, PointBehindCamera
from .geometry import (
    EPS_Z,
    DisparityMap,
    PointCloud,
    ProjectionParams,
    Tag,
    camera_to_pixels,
    focal_length,
    zbuffer,
)

log = logging.getLogger(__name__)


def disparity_to_inverse_depth(d, s: float, t: float, eps_z: float = EPS_Z):
    """Inverse depth ``s * d + t``.

    Raises ``NonPositiveDepth`` if any value is at or below ``eps_z``.
    """
    w = s * np.asarray(d, dtype=np.float64) + t
    bad = int(np.count_nonzero(w <= eps_z))
    if bad:
        raise NonPositiveDepth(f"{bad} disparities give inverse depth <= {eps_z:g}", count=bad)
    return float(w) if w.ndim == 0 else w


def lift(d: np.ndarray, u: np.ndarray, v: np.ndarray, s: float, t: float, f: float, z_t: float) -> np.ndarray:
    """Lift disparities at image coordinates ``(u, v)`` to object-frame points.

    No feasibility check; callers make sure ``s*d + t`` is positive.
    """
    Z = 1.0 / (s * d + t)
    return np.stack([u / f * Z, v / f * Z, Z + z_t], axis=-1)


def project_disparity(disparity: DisparityMap, params: ProjectionParams, strict: bool = True) -> PointCloud:
    """Lift every masked pixel to 3D, one ``PROJECTED`` point per pixel.

    Points come out in row-major pixel order. With ``strict=False`` pixels
    whose inverse depth is not positive are dropped instead of raising.
    """
    if disparity.n_masked == 0:
        raise EmptyMask("disparity map has no masked pixels")
    d = disparity.masked_values()
    u, v = disparity.masked_image_coords()
    w = params.s * d + params.t
    ok = w > EPS_Z
    if not ok.all():
        bad = int((~ok).sum())
        if strict:
            raise NonPositiveDepth(f"{bad} of {len(d)} pixels have inverse depth <= {EPS_Z:g}", count=bad)
        log.warning("dropping %d pixels with non-positive inverse depth", bad)
        d, u, v = d[ok], u[ok], v[ok]
    f = focal_length(params.fov, disparity.width, disparity.height)
    points = lift(d, u, v, params.s, params.t, f, params.z_t)
    return PointCloud.tagged(points, Tag.PROJECTED)


def render_disparity(cloud: PointCloud, params: ProjectionParams, width: int, height: int) -> DisparityMap:
    """Splat a cloud into a disparity raster under the camera implied by ``params``.

    Each point goes to its nearest pixel centre; the nearest point per pixel
    wins. Emitted disparity is ``(1/Z - t) / s``, so this inverts
    :func:`project_disparity` on the surviving points. Points outside the
    frame are ignored.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot render an empty cloud")
    cam = np.array(cloud.points)
    cam[:, 2] -= params.z_t
    behind = int(np.count_nonzero(cam[:, 2] < EPS_Z))
    if behind:
        raise PointBehindCamera(f"{behind} points are behind the camera (depth < {EPS_Z:g})")
    f = focal_length(params.fov, width, height)
    i, j, inside = camera_to_pixels(cam, f, width, height)
    idx = np.flatnonzero(inside)
    flat = j[idx] * width + i[idx]
    buffer, _ = zbuffer(flat, cam[idx, 2], width * height)
    hit = np.isfinite(buffer)
    values = np.zeros(width * height)
    values[hit] = (1.0 / buffer[hit] - params.t) / params.s
    return DisparityMap(values.reshape(height, width), hit.reshape(height, width))
