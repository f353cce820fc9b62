"""Masked SDF supervision terms.

All grid terms are evaluated on the validity mask only. Inside the Eikonal
mask the SDF term compares signed values; outside it falls back to comparing
magnitudes and the gradient term contributes zero. Means use a fixed pairwise
reduction so repeated runs agree to the last bit.

The camera term of the full training objective has no counterpart here;
``LossReport.total`` is the weighted sum of the four geometric terms.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ._reduce import tree_mean
from .errors import ValidationError
from .grid import MaskGrid, VoxelGrid, finite_diff_gradient, nearest_voxel
from .meshsdf import SurfaceSamples

__all__ = ["LossWeights", "LossReport", "loss_sdf", "loss_grad", "loss_eikonal", "total_loss"]


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 1.0
    lambda_c: float = 1.0
    lambda_g: float = 1.0
    lambda_e: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{k} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    l_sdf_surface: float
    l_sdf_grid: float
    l_grad: float
    l_eik: float
    total: float
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _sdf_terms(pred, gt, in_me):
    return np.where(in_me, np.abs(pred - gt), np.abs(np.abs(pred) - np.abs(gt)))


def loss_sdf(pred, gt, in_me) -> float:
    """Mean L1 error, signed where ``in_me`` and on magnitudes elsewhere.

    The caller restricts all three arrays to valid samples beforehand.
    """
    return _loss_sdf(pred, gt, in_me)[0]


def _loss_sdf(pred, gt, in_me):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    in_me = np.asarray(in_me, dtype=bool)
    if in_me.ndim == 0:
        in_me = np.full(gt.shape, bool(in_me))
    in_me = in_me.ravel()
    if not (len(pred) == len(gt) == len(in_me)):
        raise ValidationError(f"length mismatch: pred {len(pred)}, gt {len(gt)}, mask {len(in_me)}")
    return tree_mean(_sdf_terms(pred, gt, in_me))


def _check(*grids):
    ref = grids[0].spec
    for g in grids[1:]:
        ref.check_same(g.spec)


def loss_grad(pred: VoxelGrid, gt: VoxelGrid, mv: MaskGrid, me: MaskGrid) -> float:
    return _loss_grad(pred, gt, mv, me)[0]


def _loss_grad(pred, gt, mv, me):
    _check(pred, gt, mv, me)
    diff = finite_diff_gradient(pred).vectors - finite_diff_gradient(gt).vectors
    err = np.where(me.bits, np.linalg.norm(diff, axis=-1), 0.0)
    return tree_mean(err[mv.bits])


def loss_eikonal(pred: VoxelGrid, mv: MaskGrid) -> float:
    """Mean of ``(||grad pred|| - 1)^2`` over valid voxels."""
    return _loss_eikonal(pred, mv)[0]


def _loss_eikonal(pred, mv):
    _check(pred, mv)
    r = finite_diff_gradient(pred).norm() - 1.0
    return tree_mean((r * r)[mv.bits])


def total_loss(
    pred: VoxelGrid,
    gt: VoxelGrid,
    mv: MaskGrid,
    me: MaskGrid,
    surface: SurfaceSamples | None = None,
    pred_at_surface=None,
    weights: LossWeights = LossWeights(),
) -> LossReport:
    """Weighted sum of the surface-sample, grid, gradient and Eikonal terms.

    Surface samples take their Eikonal-mask bit from the nearest voxel when
    ``surface.signed`` is set; unsigned sample sets behave as if the mask were
    empty.
    """
    _check(pred, gt, mv, me)
    if surface is not None and len(surface.points):
        if pred_at_surface is None:
            raise ValidationError("pred_at_surface is required with surface samples")
        if surface.signed:
            idx = nearest_voxel(gt.spec, surface.points)
            in_me = me.bits[idx[:, 0], idx[:, 1], idx[:, 2]]
        else:
            in_me = np.zeros(len(surface.points), dtype=bool)
        l_s, n_s = _loss_sdf(pred_at_surface, surface.gt_sdf, in_me)
    else:
        l_s, n_s = 0.0, 0
    valid = mv.bits
    l_c, n_c = _loss_sdf(pred.values[valid], gt.values[valid], me.bits[valid])
    l_g, n_g = _loss_grad(pred, gt, mv, me)
    l_e, n_e = _loss_eikonal(pred, mv)
    w = weights
    total = w.lambda_s * l_s + w.lambda_c * l_c + w.lambda_g * l_g + w.lambda_e * l_e
    counts = {"surface": n_s, "grid": n_c, "grad": n_g, "eik": n_e, "eikonal_mask": int((me.bits & valid).sum())}
    return LossReport(l_s, l_c, l_g, l_e, total, counts)
