"""Core value types and pinhole-camera conventions.

Conventions used throughout the package:

* pixel ``(i, j)`` is column ``i`` and row ``j``, row 0 at the top;
* image coordinates ``(u, v)`` are measured from the image centre in
  pixels, ``u`` to the right and ``v`` upward, at pixel centres;
* a camera looks along ``+Z``; object-frame depth is ``Z' = Z + z_t``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter

from .errors import DataError, DegenerateRange, EmptyMask, InvalidFov

#: Inverse-depth floor. ``s*d + t`` must exceed this for a pixel to be lifted.
EPS_Z = 1e-6


class Tag(enum.IntEnum):
    """Per-point provenance, stored as a ``uchar`` in PLY files."""

    INITIAL_VISIBLE = 0
    INITIAL_OCCLUDED = 1
    PROJECTED = 2


@dataclass(frozen=True)
class DisparityMap:
    """A normalized (or raw) disparity raster with a foreground mask.

    ``values`` and ``mask`` are ``(height, width)`` arrays. Only masked pixels
    carry information.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise DataError(f"disparity values must be a non-empty 2D array, got shape {values.shape}")
        if mask.shape != values.shape:
            raise DataError(f"mask shape {mask.shape} does not match values shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("disparity values must be finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    def masked_values(self) -> np.ndarray:
        """Masked disparities in row-major pixel order."""
        return self.values[self.mask]

    def masked_pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Column and row indices ``(i, j)`` of masked pixels, row-major order."""
        j, i = np.nonzero(self.mask)
        return i, j

    def masked_image_coords(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.masked_pixels()
        return pixel_to_image_coords(i, j, self.width, self.height)


@dataclass(frozen=True)
class ProjectionParams:
    """Camera/affine parameters that lift a normalized disparity map to 3D.

    Attributes
    ----------
    s, t : float
        Inverse depth is ``s * d + t``.
    fov : float
        Diagonal field of view in radians.
    z_t : float
        Translation along the viewing axis from camera to object frame.
    """

    s: float
    t: float
    fov: float
    z_t: float

    def __post_init__(self):
        for name in ("s", "t", "fov", "z_t"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DataError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not 0.0 < self.fov < math.pi:
            raise InvalidFov(f"fov must lie in (0, pi), got {self.fov}")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.t, self.fov, self.z_t], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "ProjectionParams":
        s, t, fov, z_t = (float(v) for v in values)
        return cls(s, t, fov, z_t)

    def to_json(self) -> dict:
        return {"s": self.s, "t": self.t, "fov_rad": self.fov, "z_t": self.z_t}

    @classmethod
    def from_json(cls, data: dict) -> "ProjectionParams":
        missing = [k for k in ("s", "t", "fov_rad", "z_t") if k not in data]
        if missing:
            raise DataError(f"parameter JSON is missing {missing}")
        return cls(data["s"], data["t"], data["fov_rad"], data["z_t"])


@dataclass(frozen=True)
class PointCloud:
    """An ``(N, 3)`` point set in the object frame with optional provenance tags."""

    points: np.ndarray
    tags: np.ndarray | None = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise DataError("point coordinates must be finite")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        if self.tags is not None:
            tags = np.array(self.tags, dtype=np.uint8).reshape(-1)
            if len(tags) != len(points):
                raise DataError(f"{len(tags)} tags for {len(points)} points")
            if len(tags) and tags.max() > max(Tag):
                raise DataError(f"unknown tag value {tags.max()}")
            tags.setflags(write=False)
            object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def tagged(cls, points, tag: Tag) -> "PointCloud":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(points, np.full(len(points), int(tag), dtype=np.uint8))

    def subset(self, index) -> "PointCloud":
        tags = None if self.tags is None else self.tags[index]
        return PointCloud(self.points[index], tags)

    def with_tag(self, tag: Tag) -> "PointCloud":
        return PointCloud.tagged(self.points, tag)

    @staticmethod
    def concatenate(clouds) -> "PointCloud":
        clouds = list(clouds)
        points = np.concatenate([c.points for c in clouds]) if clouds else np.zeros((0, 3))
        if clouds and all(c.tags is not None for c in clouds):
            tags = np.concatenate([c.tags for c in clouds])
        else:
            tags = None
        return PointCloud(points, tags)


@dataclass(frozen=True)
class ViewConfig:
    """Camera and tolerances for visibility splitting and occlusion tests.

    The visibility camera sits ``camera_offset`` units along ``-Z`` from the
    object-frame origin and looks along ``+Z``.
    """

    render_width: int = 256
    render_height: int = 256
    vis_fov: float = field(default_factory=lambda: math.radians(50.0))
    camera_offset: float = 2.0
    epsilon_vis: float = 0.01
    dilation_radius: int = 1
    epsilon_occ: float = 0.01

    def __post_init__(self):
        if self.render_width < 8 or self.render_height < 8:
            raise DataError("render dimensions must be at least 8")
        if not 0.0 < self.vis_fov < math.pi:
            raise InvalidFov(f"vis_fov must lie in (0, pi), got {self.vis_fov}")
        for name in ("camera_offset", "epsilon_vis", "epsilon_occ", "dilation_radius"):
            if not getattr(self, name) > 0:
                raise DataError(f"{name} must be positive")
        object.__setattr__(self, "render_width", int(self.render_width))
        object.__setattr__(self, "render_height", int(self.render_height))
        object.__setattr__(self, "dilation_radius", int(self.dilation_radius))

    def to_json(self) -> dict:
        return {
            "render_width": self.render_width,
            "render_height": self.render_height,
            "vis_fov_rad": self.vis_fov,
            "camera_offset": self.camera_offset,
            "epsilon_vis": self.epsilon_vis,
            "dilation_radius": self.dilation_radius,
            "epsilon_occ": self.epsilon_occ,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ViewConfig":
        data = dict(data)
        if "vis_fov_rad" in data:
            data["vis_fov"] = data.pop("vis_fov_rad")
        return cls(**data)


def normalize_disparity(raw: DisparityMap) -> DisparityMap:
    """Min-max rescale masked values to ``[0, 1]``; unmasked pixels become 0.

    Raises
    ------
    EmptyMask
        If no pixel is masked.
    DegenerateRange
        If the masked values are (numerically) constant.
    """
    if raw.n_masked == 0:
        raise EmptyMask("disparity map has no masked pixels")
    masked = raw.masked_values()
    lo, hi = masked.min(), masked.max()
    if hi - lo < 1e-12:
        raise DegenerateRange(f"masked disparity range {hi - lo:.3g} is below 1e-12")
    values = np.where(raw.mask, (raw.values - lo) / (hi - lo), 0.0)
    return DisparityMap(np.clip(values, 0.0, 1.0), raw.mask)


def normalization_constants(raw: DisparityMap) -> tuple[float, float]:
    """Return ``(lo, hi)`` such that ``normalized = (raw - lo) / (hi - lo)``."""
    masked = raw.masked_values()
    return float(masked.min()), float(masked.max())


def focal_length(fov: float, width: float, height: float) -> float:
    """Focal length in pixels from a diagonal field of view."""
    if not 0.0 < fov < math.pi:
        raise InvalidFov(f"fov must lie in (0, pi), got {fov}")
    if width <= 0 or height <= 0:
        raise DataError("width and height must be positive")
    return math.hypot(width, height) / (2.0 * math.tan(fov / 2.0))


def focal_length_dfov(fov: float, width: float, height: float) -> float:
    """Derivative of :func:`focal_length` with respect to ``fov``."""
    return -math.hypot(width, height) / (4.0 * math.sin(fov / 2.0) ** 2)


def pixel_to_image_coords(i, j, width: int, height: int):
    """Centre-origin image coordinates of pixel centres, ``v`` pointing up."""
    u = (np.asarray(i, dtype=np.float64) + 0.5) - width / 2.0
    v = height / 2.0 - (np.asarray(j, dtype=np.float64) + 0.5)
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def camera_to_pixels(points_cam: np.ndarray, f: float, width: int, height: int):
    """Project camera-frame points to nearest pixel centres.

    Returns ``(i, j, inside)``; ``i`` and ``j`` are only meaningful where
    ``inside`` is true. Points with non-positive depth are never inside.
    """
    X, Y, Z = points_cam[:, 0], points_cam[:, 1], points_cam[:, 2]
    front = Z > 0
    Zs = np.where(front, Z, 1.0)
    u = f * X / Zs
    v = f * Y / Zs
    i = np.floor(u + width / 2.0)
    j = np.floor(height / 2.0 - v)
    inside = front & (i >= 0) & (i < width) & (j >= 0) & (j < height)
    i = np.where(inside, i, 0).astype(np.int64)
    j = np.where(inside, j, 0).astype(np.int64)
    return i, j, inside


def zbuffer(pixel: np.ndarray, depth: np.ndarray, n_pixels: int):
    """Per-pixel minimum depth over splatted points.

    ``pixel`` holds flat pixel indices. Returns ``(buffer, winner)`` where
    ``buffer`` is ``+inf`` at empty pixels and ``winner`` holds the index of
    the surviving point (``-1`` where empty). Depth ties keep the smallest
    point index.
    """
    buffer = np.full(n_pixels, np.inf)
    winner = np.full(n_pixels, -1, dtype=np.int64)
    if len(pixel) == 0:
        return buffer, winner
    order = np.lexsort((np.arange(len(pixel)), depth, pixel))
    sorted_pixels = pixel[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_pixels[1:] != sorted_pixels[:-1]
    keep = order[first]
    buffer[pixel[keep]] = depth[keep]
    winner[pixel[keep]] = keep
    return buffer, winner


def min_filter(buffer: np.ndarray, radius: int) -> np.ndarray:
    """Minimum over a ``(2r+1)^2`` square window; ``+inf`` pads the border."""
    if radius <= 0:
        return buffer.copy()
    return minimum_filter(buffer, size=2 * radius + 1, mode="constant", cval=np.inf)
