"""Reconstruction metrics on point samples and SDF grids."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ._reduce import tree_mean
from ._threads import workers
from .errors import ValidationError
from .grid import MaskGrid, VoxelGrid
from .mesh import TriangleMesh, area_weighted_samples

__all__ = [
    "ChamferReport",
    "sample_surface_points",
    "nearest_distances",
    "chamfer",
    "f_score",
    "sdf_mae",
    "emd",
    "EMD_MAX_POINTS",
]

EMD_MAX_POINTS = 4096


@dataclass(frozen=True)
class ChamferReport:
    cd: float
    d_gt2p: float
    d_p2gt: float

    def to_dict(self) -> dict:
        return asdict(self)


def _points(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValidationError(f"{name} point set is empty")
    return p


def sample_surface_points(mesh: TriangleMesh, count: int, seed: int = 0) -> np.ndarray:
    """Area-uniform points on the mesh surface, reproducible under ``seed``."""
    pts, _ = area_weighted_samples(mesh, count, np.random.default_rng(seed))
    return pts


def nearest_distances(query, reference) -> np.ndarray:
    """Exact Euclidean distance from each query point to its nearest reference."""
    d, _ = cKDTree(reference).query(query, k=1, workers=workers())
    return d


def chamfer(gt_points, pred_points) -> ChamferReport:
    """Means of the two directed nearest-neighbour distances, and their average."""
    gt = _points(gt_points, "gt")
    pred = _points(pred_points, "pred")
    d_gt2p, _ = tree_mean(nearest_distances(gt, pred))
    d_p2gt, _ = tree_mean(nearest_distances(pred, gt))
    return ChamferReport(0.5 * (d_gt2p + d_p2gt), d_gt2p, d_p2gt)


def f_score(gt_points, pred_points, tau: float) -> float:
    """Harmonic mean of precision and recall at distance threshold ``tau``.

    A point counts as matched when its nearest neighbour in the other set lies
    within ``tau`` (inclusive).
    """
    if not tau > 0:
        raise ValidationError("tau must be > 0")
    gt = _points(gt_points, "gt")
    pred = _points(pred_points, "pred")
    precision = float(np.mean(nearest_distances(pred, gt) <= tau))
    recall = float(np.mean(nearest_distances(gt, pred) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def sdf_mae(pred: VoxelGrid, gt: VoxelGrid, mv: MaskGrid) -> float:
    """Mean absolute SDF error over valid voxels; 0 when none are valid."""
    pred.spec.check_same(gt.spec)
    pred.spec.check_same(mv.spec, "validity mask")
    return tree_mean(np.abs(pred.values - gt.values)[mv.bits])[0]


def emd(gt_points, pred_points) -> float:
    """Exact earth mover's distance between equal-size point sets.

    Solves the optimal one-to-one assignment under Euclidean cost and returns
    the mean matched distance.
    """
    gt = _points(gt_points, "gt")
    pred = _points(pred_points, "pred")
    if len(gt) != len(pred):
        raise ValidationError(f"emd needs equal cardinality, got {len(gt)} and {len(pred)}")
    if len(gt) > EMD_MAX_POINTS:
        raise ValidationError(f"emd is limited to {EMD_MAX_POINTS} points, got {len(gt)}")
    cost = cdist(gt, pred)
    rows, cols = linear_sum_assignment(cost)
    return tree_mean(cost[rows, cols])[0]
