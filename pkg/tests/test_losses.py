import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fus3dkit._reduce import tree_mean, tree_sum
from fus3dkit.errors import SpecMismatchError, ValidationError
from fus3dkit.grid import GridSpec, MaskGrid, VoxelGrid, build_eikonal_mask
from fus3dkit.losses import LossWeights, loss_eikonal, loss_grad, loss_sdf, total_loss
from fus3dkit.meshsdf import SurfaceSamples

from conftest import sphere_field

finite = st.floats(-10, 10, allow_nan=False)


def test_sdf_identity_and_fallback():
    gt = np.array([0.3, -0.2, 1.0, -4.0])
    assert loss_sdf(gt, gt, True) == 0.0
    assert loss_sdf(-gt, gt, np.zeros(4, bool)) == 0.0
    assert loss_sdf([-1.0], [1.0], [True]) == 2.0


def test_sdf_mixed_by_hand():
    pred = np.array([0.5, -0.5, 2.0])
    gt = np.array([-0.5, 1.0, 1.0])
    me = np.array([True, False, True])
    # |1.0| + ||0.5| - 1| + |1.0| over three samples
    assert loss_sdf(pred, gt, me) == pytest.approx((1.0 + 0.5 + 1.0) / 3, abs=1e-15)


def test_sdf_empty_and_mismatch():
    assert loss_sdf([], [], []) == 0.0
    with pytest.raises(ValidationError):
        loss_sdf([1, 2], [1], [True, True])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite), arrays(bool, n))))
def test_sdf_symmetric_and_scaled(case):
    a, b, m = case
    assert loss_sdf(a, b, m) == loss_sdf(b, a, m)
    s = 2.5
    assert loss_sdf(s * a, s * b, m) == pytest.approx(s * loss_sdf(a, b, m), rel=1e-12, abs=1e-12)
    perm = np.random.default_rng(len(a)).permutation(len(a))
    assert loss_sdf(a[perm], b[perm], m[perm]) == pytest.approx(loss_sdf(a, b, m), rel=1e-12, abs=1e-12)


def _spec(n=12):
    return GridSpec.from_bounds(-0.5, 0.5, n)


def test_grad_identities():
    spec = _spec()
    gt = sphere_field(spec)
    full = MaskGrid.full(spec)
    none = MaskGrid.full(spec, False)
    assert loss_grad(gt, gt, full, full) == 0.0
    noisy = gt.with_values(gt.values + np.random.default_rng(0).normal(size=spec.dims))
    assert loss_grad(noisy, gt, full, none) == 0.0


def test_grad_affine_perturbation():
    # adding 0.1 x shifts every finite difference by exactly (0.1, 0, 0)
    spec = _spec()
    gt = sphere_field(spec)
    pred = gt.with_values(gt.values + 0.1 * spec.centers()[:, 0].reshape(spec.dims))
    full = MaskGrid.full(spec)
    assert loss_grad(pred, gt, full, full) == pytest.approx(0.1, abs=1e-12)
    half = np.zeros(spec.dims, bool)
    half[: spec.dims[0] // 2] = True
    # outside M_E contributes zeros that still count in the M_V mean
    assert loss_grad(pred, gt, full, MaskGrid(spec, half)) == pytest.approx(0.05, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), finite)
def test_grad_and_eik_constant_shift(seed, c):
    spec = GridSpec((0, 0, 0), (5, 6, 4), 0.2)
    rng = np.random.default_rng(seed)
    a = VoxelGrid(spec, rng.normal(size=spec.dims))
    b = VoxelGrid(spec, rng.normal(size=spec.dims))
    mv = MaskGrid(spec, rng.random(spec.dims) < 0.7)
    me = MaskGrid(spec, rng.random(spec.dims) < 0.7)
    sa, sb = a.with_values(a.values + c), b.with_values(b.values + c)
    assert loss_grad(sa, sb, mv, me) == pytest.approx(loss_grad(a, b, mv, me), rel=1e-9, abs=1e-9)
    assert loss_eikonal(sa, mv) == pytest.approx(loss_eikonal(a, mv), rel=1e-9, abs=1e-9)


def test_eikonal_linear_and_constant():
    spec = _spec()
    n = np.array([1.0, 2.0, 2.0]) / 3.0
    lin = VoxelGrid.from_function(spec, lambda p: p @ n)
    full = MaskGrid.full(spec)
    assert loss_eikonal(lin, full) == pytest.approx(0.0, abs=1e-24)
    assert loss_eikonal(VoxelGrid(spec, np.full(spec.dims, 0.7)), full) == 1.0


def test_eikonal_sphere_masked(spec32):
    f = sphere_field(spec32)
    c = spec32.centers().reshape(spec32.dims + (3,))
    rho = np.linalg.norm(c, axis=-1)
    keep = rho > 3 * spec32.voxel_size
    keep[[0, -1], :, :] = keep[:, [0, -1], :] = keep[:, :, [0, -1]] = False
    assert loss_eikonal(f, MaskGrid(spec32, keep)) <= 0.01


def test_spec_mismatch():
    a = VoxelGrid(_spec(8), np.zeros((8, 8, 8)))
    b = VoxelGrid(_spec(9), np.zeros((9, 9, 9)))
    with pytest.raises(SpecMismatchError):
        loss_grad(a, b, MaskGrid.full(a.spec), MaskGrid.full(a.spec))
    with pytest.raises(SpecMismatchError):
        loss_eikonal(a, MaskGrid.full(b.spec))


def test_weights_validation():
    with pytest.raises(ValidationError):
        LossWeights(lambda_s=-1)
    with pytest.raises(ValidationError):
        LossWeights(lambda_e=float("nan"))


def _surface(spec, n=40, seed=0, signed=True):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.4, 0.4, (n, 3))
    return SurfaceSamples(pts, np.linalg.norm(pts, axis=1) - 0.25, signed)


def test_total_zero_weights(spec32):
    gt = sphere_field(spec32)
    pred = gt.with_values(-gt.values + 0.3)
    full = MaskGrid.full(spec32)
    s = _surface(spec32)
    r = total_loss(pred, gt, full, full, s, np.zeros(len(s.points)), LossWeights(0, 0, 0, 0))
    assert r.total == 0.0
    assert r.l_sdf_grid > 0 and r.l_grad > 0


def test_total_pred_equals_gt(spec32):
    gt = sphere_field(spec32)
    full = MaskGrid.full(spec32)
    s = _surface(spec32)
    r = total_loss(gt, gt, full, full, s, s.gt_sdf)
    assert r.l_sdf_surface == r.l_sdf_grid == r.l_grad == 0.0
    assert r.total == r.l_eik == loss_eikonal(gt, full)
    assert r.total <= 0.01
    r2 = total_loss(gt, gt, full, full, weights=LossWeights(lambda_e=0.25))
    assert r2.total == 0.25 * r2.l_eik


def test_total_is_weighted_sum(spec32):
    rng = np.random.default_rng(3)
    gt = sphere_field(spec32)
    pred = gt.with_values(gt.values + 0.01 * rng.normal(size=spec32.dims))
    mv = MaskGrid(spec32, rng.random(spec32.dims) < 0.8)
    me = build_eikonal_mask(gt, mv=mv)
    s = _surface(spec32)
    w = LossWeights(0.5, 2.0, 0.25, 3.0)
    r = total_loss(pred, gt, mv, me, s, s.gt_sdf + 0.01, w)
    assert r.total == 0.5 * r.l_sdf_surface + 2.0 * r.l_sdf_grid + 0.25 * r.l_grad + 3.0 * r.l_eik
    assert r.counts["grid"] == mv.count
    assert r.counts["surface"] == len(s.points)


def test_surface_unsigned_flag(spec32):
    gt = sphere_field(spec32)
    full = MaskGrid.full(spec32)
    signed = _surface(spec32)
    flipped = -signed.gt_sdf
    r_signed = total_loss(gt, gt, full, full, signed, flipped)
    r_unsigned = total_loss(gt, gt, full, full, signed.unsigned(), flipped)
    assert r_signed.l_sdf_surface > 0
    assert r_unsigned.l_sdf_surface == 0.0


def test_empty_me_reduces_to_unsigned(spec32):
    gt = sphere_field(spec32)
    full = MaskGrid.full(spec32)
    none = MaskGrid.full(spec32, False)
    flipped = gt.with_values(-gt.values)
    r = total_loss(flipped, gt, full, none)
    unsigned = loss_sdf(flipped.values, gt.values, False)
    assert r.l_sdf_grid == unsigned == 0.0
    assert r.l_grad == 0.0


def test_total_requires_pred_at_surface(spec32):
    gt = sphere_field(spec32)
    full = MaskGrid.full(spec32)
    with pytest.raises(ValidationError):
        total_loss(gt, gt, full, full, _surface(spec32))


def test_bit_identical_runs_and_layouts(spec32):
    rng = np.random.default_rng(9)
    gt = sphere_field(spec32)
    noise = rng.normal(scale=1e-3, size=spec32.dims)
    pred = gt.with_values(gt.values + noise)
    full = MaskGrid.full(spec32)
    me = build_eikonal_mask(gt)
    a = total_loss(pred, gt, full, me).to_dict()
    b = total_loss(pred, gt, full, me).to_dict()
    assert a == b
    # same numbers in Fortran layout reduce to the same bits
    fpred = gt.with_values(np.asfortranarray(gt.values + noise))
    assert total_loss(fpred, gt, full, me).to_dict() == a


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(0, 300), elements=st.floats(-1e6, 1e6)))
def test_tree_sum_accuracy(x):
    s = tree_sum(x)
    bound = 1e-15 * max(1, len(x)) * (np.abs(x).sum() + 1)
    assert abs(s - math.fsum(x)) <= bound
    m, n = tree_mean(x)
    assert n == len(x)
    assert tree_sum(x.copy()) == s
