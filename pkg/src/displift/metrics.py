"""Nearest-neighbour index, Chamfer distance and f-score."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, InvalidThreshold
from .geometry import PointCloud


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


class NNIndex:
    """Exact nearest-neighbour queries over a fixed point set.

    Backed by a k-d tree. Equidistant candidates resolve to the smallest
    point index, and returned squared distances are recomputed from the
    coordinates so they match a direct evaluation bit for bit.
    """

    def __init__(self, points):
        points = as_points(points)
        if len(points) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, exact_ties: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(squared_distance, index)`` of the nearest point per query.

        With ``exact_ties=False`` equidistant candidates resolve however the
        tree does (still deterministic), which is noticeably cheaper.
        """
        queries = as_points(queries)
        if len(queries) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        k = min(2, len(self.points)) if exact_ties else 1
        dist, idx = self._tree.query(queries, k=k)
        if k == 1:
            idx = idx.astype(np.int64)
        else:
            tied = np.flatnonzero(dist[:, 0] == dist[:, 1])
            idx = idx[:, 0].astype(np.int64)
            if len(tied):
                idx[tied] = self._smallest_tied(queries[tied], dist[tied, 0])
        diff = queries - self.points[idx]
        return np.einsum("ij,ij->i", diff, diff), idx

    def _smallest_tied(self, queries: np.ndarray, radius: np.ndarray) -> np.ndarray:
        """Smallest index among the exactly nearest points, for tied queries."""
        balls = self._tree.query_ball_point(queries, radius * (1 + 1e-9) + 1e-300)
        out = np.empty(len(queries), dtype=np.int64)
        for q, cand in enumerate(balls):
            cand = np.asarray(cand, dtype=np.int64)
            diff = self.points[cand] - queries[q]
            sq = np.einsum("ij,ij->i", diff, diff)
            out[q] = cand[sq == sq.min()].min()
        return out


def build_nn_index(cloud) -> NNIndex:
    return NNIndex(cloud)


def chamfer(a, b, index_a: NNIndex | None = None, index_b: NNIndex | None = None) -> float:
    """Symmetric Chamfer distance with squared Euclidean distances.

    ``mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2``. Prebuilt indices may be
    passed to avoid rebuilding them.
    """
    a, b = as_points(a), as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    index_a = index_a or NNIndex(a)
    index_b = index_b or NNIndex(b)
    ab, _ = index_b.query(a)
    ba, _ = index_a.query(b)
    return float(ab.mean() + ba.mean())


def fscore(pred, gt, tau: float) -> tuple[float, float, float]:
    """Precision, recall and their harmonic mean at distance threshold ``tau``.

    A predicted point is correct if some ground-truth point lies within
    ``tau`` of it, and symmetrically for recall.
    """
    if not tau > 0:
        raise InvalidThreshold(f"threshold must be positive, got {tau}")
    pred, gt = as_points(pred), as_points(gt)
    if len(pred) == 0 or len(gt) == 0:
        raise EmptyCloud("f-score needs two non-empty clouds")
    d_pred, _ = NNIndex(gt).query(pred)
    d_gt, _ = NNIndex(pred).query(gt)
    precision = float(np.mean(d_pred <= tau * tau))
    recall = float(np.mean(d_gt <= tau * tau))
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def unit_diagonal_scale(cloud) -> float:
    """Factor that scales ``cloud`` to a unit bounding-box diagonal."""
    pts = as_points(cloud)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag == 0:
        raise ValueError("cloud has a zero-size bounding box")
    return 1.0 / diag


def normalize_pair(pred, gt):
    """Scale and centre both clouds by the ground truth's bounding box."""
    pred, gt = as_points(pred), as_points(gt)
    centre = (gt.max(axis=0) + gt.min(axis=0)) / 2
    k = unit_diagonal_scale(gt)
    return (pred - centre) * k, (gt - centre) * k
