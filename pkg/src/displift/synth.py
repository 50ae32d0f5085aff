"""Synthetic scenes with exact disparity, and the two sensitivity sweeps.

Shapes are ray-cast analytically through pixel centres, so the rendered
disparity lifts back onto the true surface exactly under the recorded
parameters.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import AllRestartsInfeasible, InfeasibleScene, InvalidSceneSpec
from .fitter import FitConfig, fit_params, loss
from .geometry import (
    EPS_Z,
    DisparityMap,
    PointCloud,
    ProjectionParams,
    ViewConfig,
    focal_length,
    normalization_constants,
    normalize_disparity,
    pixel_to_image_coords,
)
from .metrics import chamfer
from .projection import project_disparity, render_disparity
from .visibility import split_visibility

SHAPES = ("plane-grid", "sphere", "box", "stool")

DEFAULT_DIMS = {
    "plane-grid": {"size": (1.0, 1.0), "tilt_deg": 40.0, "yaw_deg": 15.0},
    "sphere": {},
    "box": {"size": (1.0, 0.6, 0.8), "yaw_deg": 30.0, "pitch_deg": 20.0},
    "stool": {
        "seat": (1.0, 0.12, 1.0),
        "leg_width": 0.08,
        "leg_height": 0.9,
        "yaw_deg": 30.0,
        "pitch_deg": 25.0,
    },
}


def _rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Yaw about +Y, then pitch that tips +Y toward a camera on the -Z side."""
    a, b = math.radians(yaw_deg), -math.radians(pitch_deg)
    ry = np.array([[math.cos(a), 0, math.sin(a)], [0, 1, 0], [-math.sin(a), 0, math.cos(a)]])
    rx = np.array([[1, 0, 0], [0, math.cos(b), -math.sin(b)], [0, math.sin(b), math.cos(b)]])
    return rx @ ry


class _Sphere:
    def __init__(self, centre, radius):
        self.centre = np.asarray(centre, dtype=np.float64)
        self.radius = float(radius)

    def bounds(self):
        return self.centre - self.radius, self.centre + self.radius

    def transformed(self, scale, shift):
        return _Sphere(self.centre * scale + shift, self.radius * scale)

    def area(self):
        return 4 * math.pi * self.radius**2

    def sample(self, n, rng):
        g = rng.normal(size=(n, 3))
        return self.centre + g / np.linalg.norm(g, axis=1, keepdims=True) * self.radius

    def intersect(self, origin, dirs):
        oc = origin - self.centre
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2 * dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - 4 * a * c
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = (-b - root) / (2 * a)
        return np.where(hit & (near > 0), near, np.inf)


class _Box:
    """Oriented box: ``rotation`` maps local axes to the object frame."""

    def __init__(self, centre, half, rotation):
        self.centre = np.asarray(centre, dtype=np.float64)
        self.half = np.asarray(half, dtype=np.float64)
        self.rotation = np.asarray(rotation, dtype=np.float64)

    def corners(self):
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)])
        return self.centre + (signs * self.half) @ self.rotation.T

    def bounds(self):
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)

    def transformed(self, scale, shift):
        return _Box(self.centre * scale + shift, self.half * scale, self.rotation)

    def _faces(self):
        h = self.half
        # (axis, sign, face area)
        return [(ax, sg, 4 * h[(ax + 1) % 3] * h[(ax + 2) % 3]) for ax in range(3) for sg in (-1, 1)]

    def area(self):
        return sum(a for _, _, a in self._faces())

    def sample(self, n, rng):
        faces = self._faces()
        areas = np.array([a for _, _, a in faces])
        counts = rng.multinomial(n, areas / areas.sum())
        local = []
        for (ax, sg, _), k in zip(faces, counts):
            pts = rng.uniform(-1, 1, size=(k, 3)) * self.half
            pts[:, ax] = sg * self.half[ax]
            local.append(pts)
        return self.centre + np.concatenate(local) @ self.rotation.T

    def intersect(self, origin, dirs):
        o = (origin - self.centre) @ self.rotation
        d = dirs @ self.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-self.half - o) * inv
            t2 = (self.half - o) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        near = np.minimum(t1, t2).max(axis=1)
        far = np.maximum(t1, t2).min(axis=1)
        hit = (near <= far) & (near > 0)
        return np.where(hit, near, np.inf)


class _Quad:
    """Planar rectangle ``centre + a*e1 + b*e2`` with ``a, b`` in ``[-1, 1]``."""

    def __init__(self, centre, e1, e2):
        self.centre = np.asarray(centre, dtype=np.float64)
        self.e1 = np.asarray(e1, dtype=np.float64)
        self.e2 = np.asarray(e2, dtype=np.float64)

    def corners(self):
        return np.array([self.centre + a * self.e1 + b * self.e2 for a in (-1, 1) for b in (-1, 1)])

    def bounds(self):
        c = self.corners()
        return c.min(axis=0), c.max(axis=0)

    def transformed(self, scale, shift):
        return _Quad(self.centre * scale + shift, self.e1 * scale, self.e2 * scale)

    def area(self):
        return 4 * float(np.linalg.norm(np.cross(self.e1, self.e2)))

    def sample(self, n, rng):
        k = max(2, int(round(math.sqrt(n))))
        a, b = np.meshgrid(np.linspace(-1, 1, k), np.linspace(-1, 1, k))
        return self.centre + a.reshape(-1, 1) * self.e1 + b.reshape(-1, 1) * self.e2

    def intersect(self, origin, dirs):
        normal = np.cross(self.e1, self.e2)
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((self.centre - origin) @ normal) / denom
        lam = np.where(np.isfinite(lam), lam, np.inf)
        rel = origin + lam[:, None] * dirs - self.centre
        a = rel @ self.e1 / (self.e1 @ self.e1)
        b = rel @ self.e2 / (self.e2 @ self.e2)
        hit = (lam > 0) & (np.abs(a) <= 1) & (np.abs(b) <= 1)
        return np.where(hit, lam, np.inf)


def _build_shape(kind: str, dims: dict):
    if kind == "sphere":
        return [_Sphere((0, 0, 0), 1.0)]
    if kind == "box":
        rot = _rotation(dims["yaw_deg"], dims["pitch_deg"])
        return [_Box((0, 0, 0), np.asarray(dims["size"]) / 2, rot)]
    if kind == "plane-grid":
        tilt = dims["tilt_deg"]
        if abs(tilt) < 1.0:
            raise InvalidSceneSpec("a fronto-parallel plane renders constant disparity; tilt it by at least 1 degree")
        rot = _rotation(dims.get("yaw_deg", 0.0), tilt)
        w, h = dims["size"]
        return [_Quad((0, 0, 0), rot @ np.array([w / 2, 0, 0]), rot @ np.array([0, h / 2, 0]))]
    if kind == "stool":
        rot = _rotation(dims["yaw_deg"], dims["pitch_deg"])
        sw, st, sd = dims["seat"]
        lw, lh = dims["leg_width"], dims["leg_height"]
        parts = [_Box(rot @ np.array([0.0, lh + st / 2, 0.0]), (sw / 2, st / 2, sd / 2), rot)]
        for x in (-1, 1):
            for z in (-1, 1):
                centre = np.array([x * (sw / 2 - lw / 2), lh / 2, z * (sd / 2 - lw / 2)])
                parts.append(_Box(rot @ centre, (lw / 2, lh / 2, lw / 2), rot))
        return parts
    raise InvalidSceneSpec(f"unknown shape kind {kind!r}; expected one of {SHAPES}")


def _normalized(parts):
    """Scale and centre primitives so their joint bounding box has unit diagonal."""
    lows, highs = zip(*(p.bounds() for p in parts))
    lo, hi = np.min(lows, axis=0), np.max(highs, axis=0)
    scale = 1.0 / float(np.linalg.norm(hi - lo))
    shift = -(lo + hi) / 2 * scale
    return [p.transformed(scale, shift) for p in parts]


@dataclass(frozen=True)
class SceneSpec:
    """A synthetic scene description.

    ``params`` is the camera plus the raw ``(s, t)`` used to render disparity
    before normalization; the scene records the folded parameters that map
    the normalized map back to the surface.
    """

    shape: str = "sphere"
    samples: int = 12000
    dims: dict = field(default_factory=dict)
    params: ProjectionParams = field(default_factory=lambda: ProjectionParams(1.0, 0.0, math.radians(50.0), -1.6))
    resolution: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidSceneSpec(f"unknown shape kind {self.shape!r}; expected one of {SHAPES}")
        if self.samples < 100:
            raise InvalidSceneSpec("sample count must be at least 100")
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if min(self.resolution) < 8:
            raise InvalidSceneSpec("render resolution must be at least 8 pixels per side")
        if self.params.s <= 0:
            raise InvalidSceneSpec("raw disparity scale s must be positive")
        if self.params.z_t >= 0:
            raise InvalidSceneSpec("z_t must be negative so the camera sits in front of the object")
        if self.shape == "plane-grid":
            _build_shape(self.shape, self.resolved_dims())

    def resolved_dims(self) -> dict:
        dims = dict(DEFAULT_DIMS[self.shape])
        dims.update(self.dims)
        return dims

    def to_json(self) -> dict:
        out = asdict(self)
        out["params"] = self.params.to_json()
        out["dims"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.resolved_dims().items()}
        out["resolution"] = list(self.resolution)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        if "params" in data:
            data["params"] = ProjectionParams.from_json(data["params"])
        if "resolution" in data:
            data["resolution"] = tuple(data["resolution"])
        return cls(**data)


@dataclass(frozen=True)
class SyntheticScene:
    """Outputs of :func:`make_synthetic_scene`.

    ``gt_cloud`` samples the whole surface; ``visible_points`` are the exact
    surface hits behind each masked pixel; ``true_params`` lift
    ``disparity`` onto ``visible_points``; ``view`` is the matching camera
    for visibility tests.
    """

    spec: SceneSpec
    gt_cloud: PointCloud
    visible_points: PointCloud
    disparity: DisparityMap
    true_params: ProjectionParams
    view: ViewConfig
    surface_area: float

    @property
    def mask(self) -> np.ndarray:
        return self.disparity.mask

    def view_for(self, n_points: int) -> ViewConfig:
        """Scene camera with a raster matched to a cloud of ``n_points`` surface samples."""
        res = _view_resolution(self.surface_area, n_points, self.spec.params)
        return replace(self.view, render_width=res, render_height=res)

    def visible_samples(self) -> PointCloud:
        """Surface samples classified visible from the scene camera."""
        return split_visibility(self.gt_cloud, self.view)[0]


VIEW_EPSILON = 0.03


def _view_resolution(area: float, n_points: int, params: ProjectionParams) -> int:
    """Square raster whose pixel footprint at the object centre equals the sample spacing.

    Coarser rasters hide slanted front faces behind their neighbours, finer
    ones let back faces leak through gaps between samples.
    """
    spacing = math.sqrt(area / max(n_points, 1))
    f = -params.z_t / spacing
    res = f * 2 * math.tan(params.fov / 2) / math.sqrt(2)
    return int(min(max(round(res), 8), 2048))


def _ray_cast(parts, params: ProjectionParams, u, v, width: int, height: int, with_hits: bool = False):
    """First surface hit along the camera ray through image point ``(u, v)``."""
    f = focal_length(params.fov, width, height)
    dirs = np.stack([u / f, v / f, np.ones_like(u)], axis=-1)
    origin = np.array([0.0, 0.0, params.z_t])
    depth = np.min([p.intersect(origin, dirs) for p in parts], axis=0)
    hit = np.isfinite(depth)
    points = origin + depth[hit, None] * dirs[hit]
    return (points, hit) if with_hits else points


def make_synthetic_scene(spec: SceneSpec) -> SyntheticScene:
    """Sample, ray-cast and render a scene; deterministic given ``spec.seed``."""
    parts = _normalized(_build_shape(spec.shape, spec.resolved_dims()))
    rng = np.random.default_rng(spec.seed)
    areas = np.array([p.area() for p in parts])
    counts = rng.multinomial(spec.samples, areas / areas.sum())
    gt = np.concatenate([p.sample(int(k), rng) for p, k in zip(parts, counts) if k > 0])

    params = spec.params
    if np.any(gt[:, 2] - params.z_t <= EPS_Z):
        raise InfeasibleScene("part of the object lies at or behind the camera")

    width, height = spec.resolution
    j, i = np.mgrid[0:height, 0:width]
    u, v = pixel_to_image_coords(i.reshape(-1), j.reshape(-1), width, height)
    visible, hit = _ray_cast(parts, params, u, v, width, height, with_hits=True)
    if not hit.any():
        raise InfeasibleScene("the object does not cover any pixel")

    raw = render_disparity(PointCloud(visible), params, width, height)
    if not np.array_equal(raw.mask.reshape(-1), hit):
        raise InfeasibleScene("rendered mask disagrees with ray casting")
    lo, hi = normalization_constants(raw)
    disparity = normalize_disparity(raw)
    true_params = ProjectionParams(params.s * (hi - lo), params.s * lo + params.t, params.fov, params.z_t)
    area = float(areas.sum())
    res = _view_resolution(area, len(gt), params)
    view = ViewConfig(res, res, params.fov, -params.z_t, VIEW_EPSILON, 1, VIEW_EPSILON)
    return SyntheticScene(spec, PointCloud(gt), PointCloud(visible), disparity, true_params, view, area)


def random_scene_spec(rng: np.random.Generator, config: FitConfig | None = None, shape: str | None = None, **kwargs) -> SceneSpec:
    """Draw a scene whose folded parameters fall inside ``config.init_ranges``."""
    config = config or FitConfig()
    ranges = np.asarray(config.init_ranges)
    for _ in range(100):
        kind = shape or SHAPES[int(rng.integers(len(SHAPES)))]
        fov = rng.uniform(max(ranges[2, 0], math.radians(45)), min(ranges[2, 1], math.radians(80)))
        z_t = rng.uniform(max(ranges[3, 0], -2.0), min(ranges[3, 1], -1.2))
        dims = dict(DEFAULT_DIMS[kind])
        if "yaw_deg" in dims:
            dims["yaw_deg"] = float(rng.uniform(10, 70))
        if "pitch_deg" in dims:
            dims["pitch_deg"] = float(rng.uniform(10, 35))
        spec = SceneSpec(kind, dims=dims, params=ProjectionParams(1.0, 0.0, fov, z_t), seed=int(rng.integers(2**31)), **kwargs)
        try:
            scene = make_synthetic_scene(spec)
        except InfeasibleScene:
            continue
        p = scene.true_params.as_array()
        if np.all((p >= ranges[:, 0]) & (p <= ranges[:, 1])):
            return spec
    raise InfeasibleScene("could not draw a scene inside the initialization ranges")


def add_uniform_noise(disparity: DisparityMap, amplitude: float, seed) -> DisparityMap:
    """Perturb masked values by independent ``U(-a, a)`` draws, clamped to ``[0, 1]``."""
    if amplitude < 0:
        raise ValueError("noise amplitude must be non-negative")
    if amplitude == 0:
        return disparity
    rng = np.random.default_rng(seed)
    values = np.array(disparity.values)
    noise = rng.uniform(-amplitude, amplitude, size=disparity.n_masked)
    values[disparity.mask] = np.clip(values[disparity.mask] + noise, 0.0, 1.0)
    return DisparityMap(values, disparity.mask)


def _cell_seed(seed: int, value: float) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(round(value * 1e9)) & 0xFFFFFFFF])


def _finite(x):
    """JSON has no infinities; write them as null."""
    return None if isinstance(x, float) and not math.isfinite(x) else x


@dataclass
class SweepReport:
    variable: str
    metric: str
    values: list
    seeds: list
    records: list
    config: dict
    floors: dict = field(default_factory=dict)

    @property
    def medians(self) -> dict:
        return {v: statistics.median(r[self.metric] for r in self.records if r["value"] == v) for v in self.values}

    def to_json(self) -> dict:
        return {
            "variable": self.variable,
            "metric": self.metric,
            "values": self.values,
            "seeds": self.seeds,
            "medians": [{"value": v, "median": _finite(m)} for v, m in self.medians.items()],
            "floors": [{"seed": s, "floor": f} for s, f in self.floors.items()],
            "records": [{k: _finite(x) for k, x in r.items()} for r in self.records],
            "config": self.config,
        }

    def to_csv(self) -> str:
        columns = [k for k in self.records[0] if not isinstance(self.records[0][k], dict)] if self.records else []
        out = io.StringIO()
        writer = csv.DictWriter(out, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.records)
        return out.getvalue()


def _scene_for_seed(spec: SceneSpec, seed: int) -> SyntheticScene:
    return make_synthetic_scene(replace(spec, seed=int(seed)))


def noise_cell(scene: SyntheticScene, level: float, seed: int, fit_config: FitConfig, visible: PointCloud | None = None) -> dict:
    """One noise-sweep record: fit on noisy disparity, score the clean lift."""
    visible = visible if visible is not None else scene.visible_samples()
    # the same uniform draws at every level: only the amplitude changes
    noisy = add_uniform_noise(scene.disparity, level, np.random.SeedSequence(int(seed)))
    result = fit_params(noisy, visible, replace(fit_config, seed=int(seed)))
    psi = project_disparity(scene.disparity, result.params, strict=False)
    return {
        "value": level,
        "seed": int(seed),
        "chamfer": chamfer(psi, scene.visible_points),
        "chamfer_full": chamfer(psi, scene.gt_cloud),
        "fit_loss": result.loss,
        "params": result.params.to_json(),
    }


def sweep_noise(levels, spec: SceneSpec, fit_config: FitConfig, seeds) -> SweepReport:
    """Noise sensitivity of the fitted parameters.

    For each level and seed, the ground-truth disparity is perturbed, the
    parameters are fitted against the visible ground-truth samples, and the
    clean disparity is lifted with them. ``chamfer`` compares that lift with
    the exact visible surface points behind the masked pixels,
    ``chamfer_full`` with the whole ground-truth cloud. Each seed draws one
    uniform noise pattern and scales it to every level. ``floors`` holds
    the fitting loss at the true parameters per seed.
    """
    levels = sorted(float(x) for x in levels)
    if 0.0 not in levels:
        raise ValueError("noise levels must include 0")
    seeds = [int(s) for s in seeds]
    scenes = {s: _scene_for_seed(spec, s) for s in seeds}
    visible = {s: scenes[s].visible_samples() for s in seeds}
    records = [noise_cell(scenes[s], level, s, fit_config, visible[s]) for level in levels for s in seeds]
    floors = {s: loss(scenes[s].true_params, scenes[s].disparity, visible[s]) for s in seeds}
    config = {"spec": spec.to_json(), "fit": fit_config.to_json(), "levels": levels, "seeds": seeds}
    return SweepReport("noise", "chamfer", levels, seeds, records, config, floors)


def init_directions(seed: int, distance: float, count: int) -> np.ndarray:
    """Unit directions in ``(s, t, fov, z_t)`` space for one sweep cell."""
    rng = np.random.default_rng(_cell_seed(seed, distance))
    g = rng.normal(size=(count, 4))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def init_cell(scene: SyntheticScene, distance: float, seed: int, fit_config: FitConfig, visible: PointCloud | None = None) -> dict:
    """One init-sweep record: every restart starts ``distance`` away from the truth."""
    visible = visible if visible is not None else scene.visible_samples()
    starts = scene.true_params.as_array() + distance * init_directions(seed, distance, fit_config.restarts)
    try:
        result = fit_params(scene.disparity, visible, replace(fit_config, seed=int(seed)), initial=starts)
    except AllRestartsInfeasible:
        # a start that never reaches positive depth counts as an infinite loss
        return {"value": distance, "seed": int(seed), "loss": math.inf, "feasible": False, "params": None}
    return {
        "value": distance,
        "seed": int(seed),
        "loss": result.loss,
        "feasible": True,
        "params": result.params.to_json(),
    }


def sweep_init(distances, spec: SceneSpec, fit_config: FitConfig, seeds) -> SweepReport:
    """Initialization sensitivity.

    Each record starts every restart at Euclidean distance ``distance`` from
    the true parameters (fov in radians) in a seeded random direction and
    records the final fitting loss against the visible samples. ``floors``
    holds the loss at the true parameters per seed. A cell whose restarts
    all end infeasible records an infinite loss.
    """
    distances = [float(x) for x in distances]
    if distances != sorted(distances):
        raise ValueError("distances must be sorted ascending")
    seeds = [int(s) for s in seeds]
    scenes = {s: _scene_for_seed(spec, s) for s in seeds}
    visible = {s: scenes[s].visible_samples() for s in seeds}
    records = [init_cell(scenes[s], dist, s, fit_config, visible[s]) for dist in distances for s in seeds]
    floors = {s: loss(scenes[s].true_params, scenes[s].disparity, visible[s]) for s in seeds}
    config = {"spec": spec.to_json(), "fit": fit_config.to_json(), "distances": distances, "seeds": seeds}
    return SweepReport("init_distance", "loss", distances, seeds, records, config, floors)
