"""Multi-restart fitting of the lifting parameters against a prior cloud.

The objective is the Chamfer distance between the lifted disparity map and
the visible part of the prior, plus a soft barrier on non-positive inverse
depth. Each descent step freezes nearest-neighbour correspondences on a
minibatch (ICP style), differentiates the resulting quadratic objective
analytically, and takes an Adam-scaled step guarded by step halving.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import AllRestartsInfeasible, EmptyCloud, EmptyMask, NonFiniteGradient
from .geometry import EPS_Z, DisparityMap, PointCloud, ProjectionParams, focal_length, focal_length_dfov
from .metrics import NNIndex, as_points

FOV_LIMITS = (1e-3, math.pi - 1e-3)


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of :func:`fit_params`.

    ``step_sizes`` and ``init_ranges`` are ordered ``(s, t, fov, z_t)``;
    ``fov`` is in radians. Step sizes follow a cosine decay down to
    ``final_step_fraction`` of their initial value.

    With ``chart="object"`` descent runs in coordinates tied to the object's
    mean depth (see :class:`ObjectChart`) and uses ``chart_step_sizes``;
    ``chart="raw"`` descends on ``(s, t, fov, z_t)`` directly with
    ``step_sizes``. After descent each restart gets up to ``polish_rounds``
    full-batch ICP rounds (0 disables them).
    """

    restarts: int = 20
    steps: int = 500
    step_sizes: tuple = (0.05, 0.02, 0.01, 0.05)
    batch_projected: int = 512
    batch_prior: int = 512
    init_ranges: tuple = ((0.1, 5.0), (0.01, 2.0), (math.radians(20.0), math.radians(90.0)), (-3.0, 3.0))
    seed: int = 0
    penalty: float = 1e3
    final_step_fraction: float = 0.01
    momentum: tuple = (0.9, 0.999)
    max_halvings: int = 6
    polish_rounds: int = 10
    chart: str = "object"
    chart_step_sizes: tuple = (0.02, 0.02, 0.02, 0.05)

    def __post_init__(self):
        object.__setattr__(self, "step_sizes", tuple(float(x) for x in self.step_sizes))
        object.__setattr__(self, "init_ranges", tuple(tuple(float(v) for v in r) for r in self.init_ranges))
        object.__setattr__(self, "momentum", tuple(float(x) for x in self.momentum))
        object.__setattr__(self, "chart_step_sizes", tuple(float(x) for x in self.chart_step_sizes))
        if self.chart not in ("raw", "object"):
            raise ValueError(f"chart must be 'raw' or 'object', not {self.chart!r}")
        if self.restarts < 1 or self.steps < 1:
            raise ValueError("restarts and steps must be at least 1")
        for name in ("step_sizes", "chart_step_sizes"):
            steps = getattr(self, name)
            if len(steps) != 4 or min(steps) <= 0:
                raise ValueError(f"{name} must be four positive numbers")
        if len(self.init_ranges) != 4 or any(lo > hi for lo, hi in self.init_ranges):
            raise ValueError("init_ranges must be four (low, high) intervals")
        lo, hi = self.init_ranges[2]
        if not (0 < lo and hi < math.pi):
            raise ValueError("fov init range must lie inside (0, pi)")
        if self.polish_rounds < 0:
            raise ValueError("polish_rounds must be non-negative")
        if self.batch_projected < 1 or self.batch_prior < 1:
            raise ValueError("batch sizes must be positive")

    def to_json(self) -> dict:
        out = asdict(self)
        out["step_sizes"] = list(self.step_sizes)
        out["init_ranges"] = [list(r) for r in self.init_ranges]
        out["momentum"] = list(self.momentum)
        out["chart_step_sizes"] = list(self.chart_step_sizes)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FitConfig":
        return cls(**data)


@dataclass
class FitResult:
    params: ProjectionParams
    loss: float
    restart_losses: list
    restart_feasible: list
    restart_params: list
    trace: list
    seed: int
    best_restart: int
    config: FitConfig = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "loss": self.loss,
            "restart_losses": self.restart_losses,
            "restart_feasible": self.restart_feasible,
            "restart_params": [p.to_json() if p is not None else None for p in self.restart_params],
            "trace": self.trace,
            "seed": self.seed,
            "best_restart": self.best_restart,
            "config": None if self.config is None else self.config.to_json(),
        }


@dataclass(frozen=True)
class Correspondences:
    """Frozen nearest-neighbour matches between lifted pixels and prior points.

    ``pixels`` index masked pixels (row-major order) and ``proj_match`` gives
    the matched prior point for each. ``prior`` indexes prior points and
    ``prior_match`` gives the matched masked pixel for each.
    """

    pixels: np.ndarray
    proj_match: np.ndarray
    prior: np.ndarray
    prior_match: np.ndarray

    def duplicated(self) -> "Correspondences":
        return Correspondences(
            np.tile(self.pixels, 2), np.tile(self.proj_match, 2), np.tile(self.prior, 2), np.tile(self.prior_match, 2)
        )


class _Problem:
    """Masked-pixel arrays and prior points, precomputed once per fit."""

    def __init__(self, disparity: DisparityMap, prior):
        if disparity.n_masked == 0:
            raise EmptyMask("disparity map has no masked pixels")
        self.prior = as_points(prior)
        if len(self.prior) == 0:
            raise EmptyCloud("prior visible cloud is empty")
        self.d = disparity.masked_values()
        self.u, self.v = disparity.masked_image_coords()
        self.width, self.height = disparity.width, disparity.height
        self.prior_index = NNIndex(self.prior)

    def lift(self, p: np.ndarray, pixels=None) -> np.ndarray:
        s, t, fov, z_t = p
        f = focal_length(fov, self.width, self.height)
        sel = slice(None) if pixels is None else pixels
        Z = 1.0 / (s * self.d[sel] + t)
        return np.stack([self.u[sel] / f * Z, self.v[sel] / f * Z, Z + z_t], axis=-1)

    def feasible(self, p: np.ndarray, pixels=None) -> np.ndarray:
        sel = slice(None) if pixels is None else pixels
        return p[0] * self.d[sel] + p[1] > EPS_Z

    def penalty(self, p: np.ndarray, weight: float) -> float:
        gap = np.maximum(0.0, EPS_Z - (p[0] * self.d + p[1]))
        return float(weight * np.dot(gap, gap))

    def penalty_gradient(self, p: np.ndarray, weight: float) -> np.ndarray:
        gap = np.maximum(0.0, EPS_Z - (p[0] * self.d + p[1]))
        return -2.0 * weight * np.array([np.dot(gap, self.d), gap.sum(), 0.0, 0.0])

    def chamfer_loss(self, p: np.ndarray) -> float:
        ok = np.flatnonzero(self.feasible(p))
        if len(ok) == 0:
            return math.inf
        X = self.lift(p, ok)
        to_prior, _ = self.prior_index.query(X)
        to_proj, _ = NNIndex(X).query(self.prior)
        return float(to_prior.mean() + to_proj.mean())

    def correspond(self, p: np.ndarray, pixels: np.ndarray, prior: np.ndarray, prior_index: NNIndex | None = None) -> Correspondences:
        pixels = pixels[self.feasible(p, pixels)]
        if len(pixels) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return Correspondences(empty, empty, empty, empty)
        X = self.lift(p, pixels)
        if prior_index is None:
            prior_index = NNIndex(self.prior[prior])
        _, m = prior_index.query(X)
        _, n = NNIndex(X).query(self.prior[prior])
        return Correspondences(pixels, prior[m], prior, pixels[n])

    def _terms(self, p: np.ndarray, corr: Correspondences):
        """Pack ``corr`` as (pixels, targets, rows of the second term)."""
        n1 = len(corr.pixels)
        pixels = np.concatenate([corr.pixels, corr.prior_match])
        targets = np.concatenate([self.prior[corr.proj_match], self.prior[corr.prior]])
        return pixels, targets, n1

    def frozen(self, p: np.ndarray, corr: Correspondences, weight: float, reduction: str = "mean") -> float:
        if len(corr.pixels) == 0:
            return self.penalty(p, weight)
        pixels, targets, n1 = self._terms(p, corr)
        return self.value_and_gradient(p, pixels, targets, n1, weight, reduction, want_grad=False)[0]

    def gradient(self, p: np.ndarray, corr: Correspondences, weight: float, reduction: str = "mean") -> np.ndarray:
        if len(corr.pixels) == 0:
            grad = self.penalty_gradient(p, weight)
        else:
            pixels, targets, n1 = self._terms(p, corr)
            grad = self.value_and_gradient(p, pixels, targets, n1, weight, reduction)[1]
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"gradient is not finite at params {p.tolist()}")
        return grad

    def value_and_gradient(self, p, pixels, targets, n1, weight, reduction="mean", want_grad=True):
        """Frozen objective over residual rows ``lift(pixels) - targets``.

        Rows before ``n1`` form the lifted-to-prior term, the rest the
        prior-to-lifted term; each term is averaged separately.
        """
        s, t, fov, z_t = p
        f = focal_length(fov, self.width, self.height)
        d, u, v = self.d[pixels], self.u[pixels], self.v[pixels]
        Z = 1.0 / (s * d + t)
        r = np.stack([u / f * Z, v / f * Z, Z + z_t], axis=-1) - targets
        sq = np.einsum("ij,ij->i", r, r)
        n2 = len(r) - n1
        w1, w2 = (1.0 / n1, 1.0 / n2) if reduction == "mean" else (1.0, 1.0)
        value = self.penalty(p, weight) + w1 * sq[:n1].sum() + w2 * sq[n1:].sum()
        if not want_grad:
            return float(value), None
        r[:n1] *= w1
        r[n1:] *= w2
        # d(point)/dZ = (u/f, v/f, 1); dZ/ds = -d Z^2, dZ/dt = -Z^2
        along_z = r[:, 0] * u / f + r[:, 1] * v / f + r[:, 2]
        z2 = Z * Z
        df = focal_length_dfov(fov, self.width, self.height)
        grad = np.array([
            -2.0 * np.dot(along_z, d * z2),
            -2.0 * np.dot(along_z, z2),
            -2.0 * df / (f * f) * np.dot(r[:, 0] * u + r[:, 1] * v, Z),
            2.0 * r[:, 2].sum(),
        ])
        return float(value), grad + self.penalty_gradient(p, weight)


    def residuals(self, p, pixels, targets, weights):
        """Residual vector ``sqrt(w) * (lift(pixels) - targets)`` and its Jacobian."""
        s, t, fov, z_t = p
        f = focal_length(fov, self.width, self.height)
        d, u, v = self.d[pixels], self.u[pixels], self.v[pixels]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            Z = 1.0 / (s * d + t)
        w = np.sqrt(weights)[:, None]
        r = (np.stack([u / f * Z, v / f * Z, Z + z_t], axis=-1) - targets) * w
        dpoint = np.stack([u / f, v / f, np.ones_like(u)], axis=-1) * w
        z2 = Z * Z
        df = focal_length_dfov(fov, self.width, self.height)
        jac = np.zeros((len(r), 3, 4))
        jac[:, :, 0] = dpoint * (-d * z2)[:, None]
        jac[:, :, 1] = dpoint * (-z2)[:, None]
        jac[:, 0, 2] = -u * Z * df / (f * f) * w[:, 0]
        jac[:, 1, 2] = -v * Z * df / (f * f) * w[:, 0]
        jac[:, 2, 3] = w[:, 0]
        return r.reshape(-1), jac.reshape(-1, 4)


def _polish(problem: _Problem, p: np.ndarray, current: float, rounds: int, weight: float):
    """Full-batch ICP: freeze all correspondences, solve the least-squares
    problem they define, and repeat while the exact loss keeps dropping.

    Prior points matched to the same pixel are merged into their centroid
    with a matching weight, which leaves the frozen objective unchanged up
    to a constant.
    """
    everything = np.arange(len(problem.d))
    for _ in range(rounds):
        if not problem.feasible(p).all():
            break
        X = problem.lift(p)
        _, near = problem.prior_index.query(X, exact_ties=False)
        _, back = NNIndex(X).query(problem.prior, exact_ties=False)
        counts = np.bincount(back, minlength=len(X))
        hit = np.flatnonzero(counts)
        centroids = np.stack([np.bincount(back, problem.prior[:, k], len(X))[hit] for k in range(3)], axis=-1)
        centroids /= counts[hit, None]
        rows = np.concatenate([everything, hit])
        targets = np.concatenate([problem.prior[near], centroids])
        weights = np.concatenate([np.full(len(X), 1.0 / len(X)), counts[hit] / len(problem.prior)])

        def fun(x):
            if not FOV_LIMITS[0] <= x[2] <= FOV_LIMITS[1]:
                return np.full(3 * len(rows), 1e6)
            r = problem.residuals(x, rows, targets, weights)[0]
            return np.where(np.isfinite(r), r, 1e6)

        def jac(x):
            J = problem.residuals(x, rows, targets, weights)[1]
            return np.where(np.isfinite(J), J, 0.0)

        trial = least_squares(fun, p, jac=jac, method="lm", x_scale="jac", max_nfev=50).x
        if not (FOV_LIMITS[0] <= trial[2] <= FOV_LIMITS[1]) or not problem.feasible(trial).all():
            break
        value = problem.chamfer_loss(trial) + problem.penalty(trial, weight)
        if not value < current:
            break
        p, current = trial, value
    return p, current


def _as_vector(params) -> np.ndarray:
    if isinstance(params, ProjectionParams):
        return params.as_array()
    return np.asarray(params, dtype=np.float64)


def loss(params, disparity: DisparityMap, visible, penalty: float = FitConfig.penalty) -> float:
    """Chamfer distance from the lifted map to ``visible`` plus the positivity barrier.

    Pixels with non-positive inverse depth are left out of the Chamfer term
    and charged through the barrier. Returns ``inf`` if no pixel is feasible.
    """
    problem = _Problem(disparity, visible)
    p = _as_vector(params)
    return problem.chamfer_loss(p) + problem.penalty(p, penalty)


def correspondences(params, disparity: DisparityMap, visible) -> Correspondences:
    """Full-batch nearest-neighbour matches at ``params``."""
    problem = _Problem(disparity, visible)
    return problem.correspond(_as_vector(params), np.arange(len(problem.d)), np.arange(len(problem.prior)))


def frozen_loss(params, disparity: DisparityMap, visible, corr: Correspondences, penalty: float = FitConfig.penalty, reduction: str = "mean") -> float:
    """The quadratic objective obtained by holding ``corr`` fixed."""
    return _Problem(disparity, visible).frozen(_as_vector(params), corr, penalty, reduction)


def loss_gradient(params, disparity: DisparityMap, visible, corr: Correspondences, penalty: float = FitConfig.penalty, reduction: str = "mean") -> np.ndarray:
    """Exact gradient of :func:`frozen_loss` with respect to ``(s, t, fov, z_t)``.

    ``reduction="sum"`` drops the ``1/|set|`` normalisation of both Chamfer
    terms.
    """
    return _Problem(disparity, visible).gradient(_as_vector(params), corr, penalty, reduction)


class ObjectChart:
    """Coordinates in which the objective's valley is close to axis aligned.

    With ``d_ref`` the mean masked disparity and ``Z = 1 / (s d_ref + t)``
    the depth it lifts to, the chart is
    ``q = (log(Z / f), Z + z_t, s Z^2, log Z)``: apparent scale, object
    depth, depth relief and camera distance. Every ``q`` maps back to a
    positive ``Z`` and a fov in ``(0, pi)``.
    """

    def __init__(self, problem: _Problem):
        self.dref = float(problem.d.mean())
        self.diag = math.hypot(problem.width, problem.height)

    def covers(self, p: np.ndarray) -> bool:
        return p[0] * self.dref + p[1] > 0

    def to_chart(self, p: np.ndarray) -> np.ndarray:
        s, t, fov, z_t = p
        Z = 1.0 / (s * self.dref + t)
        f = self.diag / (2 * math.tan(fov / 2))
        return np.array([math.log(Z / f), Z + z_t, s * Z * Z, math.log(Z)])

    def to_params(self, q: np.ndarray) -> np.ndarray:
        Z = math.exp(q[3])
        f = Z / math.exp(q[0])
        s = q[2] / (Z * Z)
        return np.array([s, 1.0 / Z - s * self.dref, 2 * math.atan(self.diag / (2 * f)), q[1] - Z])

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        """d(s, t, fov, z_t) / dq."""
        Z = math.exp(q[3])
        s = q[2] / (Z * Z)
        r = self.diag * math.exp(q[0]) / (2 * Z)
        dfov = 2 / (1 + r * r)
        return np.array([
            [0.0, 0.0, 1 / Z**2, -2 * s],
            [0.0, 0.0, -self.dref / Z**2, -1 / Z + 2 * s * self.dref],
            [dfov * r, 0.0, 0.0, -dfov * r],
            [0.0, 1.0, 0.0, -Z],
        ])


def _sample(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    if n <= size:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def _descend(problem: _Problem, p0: np.ndarray, config: FitConfig, rng: np.random.Generator):
    """One restart. Returns the final parameters and the per-step batch loss."""
    p = p0.copy()
    chart = ObjectChart(problem) if config.chart == "object" else None
    if chart is not None and not chart.covers(p):
        chart = None
    if chart is None:
        base = np.asarray(config.step_sizes)
        q = p
    else:
        base = np.asarray(config.chart_step_sizes)
        q = chart.to_chart(p)
    b1, b2 = config.momentum
    m = np.zeros(4)
    v = np.zeros(4)
    n_pix, n_prior = len(problem.d), len(problem.prior)
    full_prior = n_prior <= config.batch_prior
    trace = []
    for k in range(1, config.steps + 1):
        pixels = _sample(rng, n_pix, config.batch_projected)
        prior = _sample(rng, n_prior, config.batch_prior)
        pixels = pixels[problem.feasible(p, pixels)]
        if len(pixels) == 0:
            # only the barrier is left to descend on
            rows, targets, n1 = pixels, np.zeros((0, 3)), 0
            current, g = problem.penalty(p, config.penalty), problem.penalty_gradient(p, config.penalty)
        else:
            # hot loop: ties between equidistant neighbours need not be canonical here
            Y = problem.prior[prior]
            X = problem.lift(p, pixels)
            index = problem.prior_index if full_prior else NNIndex(Y)
            _, near = index.query(X, exact_ties=False)
            _, back = NNIndex(X).query(Y, exact_ties=False)
            rows = np.concatenate([pixels, pixels[back]])
            targets = np.concatenate([index.points[near], Y])
            n1 = len(pixels)
            current, g = problem.value_and_gradient(p, rows, targets, n1, config.penalty)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient is not finite at params {p.tolist()}")
        trace.append(current)
        if chart is not None:
            g = chart.jacobian(q).T @ g
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        direction = (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + 1e-12)
        frac = config.final_step_fraction
        scale = frac + (1 - frac) * 0.5 * (1 + math.cos(math.pi * (k - 1) / config.steps))
        step = scale * base * direction
        for _ in range(config.max_halvings + 1):
            if chart is None:
                trial_q = trial = p - step
                trial[2] = min(max(trial[2], FOV_LIMITS[0]), FOV_LIMITS[1])
            else:
                trial_q = q - step
                trial = chart.to_params(trial_q)
            if FOV_LIMITS[0] <= trial[2] <= FOV_LIMITS[1] and problem.feasible(trial, pixels).all():
                if n1 == 0:
                    value = problem.penalty(trial, config.penalty)
                else:
                    value = problem.value_and_gradient(trial, rows, targets, n1, config.penalty, want_grad=False)[0]
                if value <= current:
                    p, q = trial, trial_q
                    break
            step = step / 2
    return p, trace


def fit_params(disparity: DisparityMap, visible, config: FitConfig | None = None, initial=None) -> FitResult:
    """Fit ``(s, t, fov, z_t)`` by multi-restart descent and keep the best restart.

    Each restart draws its start uniformly from ``config.init_ranges`` (or
    takes the next row of ``initial``) and runs ``config.steps`` guarded
    descent steps. Restarts are ranked by their final full-batch loss,
    feasible restarts first. Deterministic for a given ``config.seed``.

    Raises
    ------
    AllRestartsInfeasible
        If every restart ends with some pixel at non-positive inverse depth.
    """
    config = config or FitConfig()
    problem = _Problem(disparity, visible)
    restarts = config.restarts if initial is None else len(initial)
    streams = np.random.SeedSequence(config.seed).spawn(restarts)
    ranges = np.asarray(config.init_ranges)

    finals, feasible, found, traces = [], [], [], []
    for k, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        start = rng.uniform(ranges[:, 0], ranges[:, 1])
        if initial is not None:
            start = np.array(initial[k], dtype=np.float64)
            start[2] = min(max(start[2], FOV_LIMITS[0]), FOV_LIMITS[1])
        p, trace = _descend(problem, start, config, rng)
        ok = bool(problem.feasible(p).all())
        final = problem.chamfer_loss(p) + problem.penalty(p, config.penalty)
        if ok and config.polish_rounds:
            p, final = _polish(problem, p, final, config.polish_rounds, config.penalty)
        finals.append(final)
        feasible.append(ok)
        found.append(ProjectionParams.from_array(p) if np.all(np.isfinite(p)) else None)
        traces.append(trace)

    candidates = [k for k in range(restarts) if feasible[k]]
    if not candidates:
        raise AllRestartsInfeasible(f"all {restarts} restarts ended with non-positive inverse depth")
    best = min(candidates, key=lambda k: (finals[k], k))
    return FitResult(
        params=found[best],
        loss=finals[best],
        restart_losses=finals,
        restart_feasible=feasible,
        restart_params=found,
        trace=traces[best],
        seed=config.seed,
        best_restart=best,
        config=config,
    )
