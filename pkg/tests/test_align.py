import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from fus3dkit.align import SimilarityTransform, camera_centers, icp_refine, umeyama_align
from fus3dkit.errors import DegenerateConfigurationError, ValidationError
from fus3dkit.tsdf import sphere_cameras


def random_similarity(rng, s_range=(0.5, 2.0)):
    return SimilarityTransform(
        rng.uniform(*s_range), Rotation.random(random_state=rng.integers(2**31)).as_matrix(), rng.normal(size=3)
    )


def rms(a, b):
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def test_transform_algebra():
    rng = np.random.default_rng(0)
    a, b = random_similarity(rng), random_similarity(rng)
    p = rng.normal(size=(20, 3))
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-12)
    h = np.c_[p, np.ones(len(p))] @ a.matrix().T
    np.testing.assert_allclose(h[:, :3], a.apply(p), atol=1e-12)
    c = SimilarityTransform.from_dict(a.to_dict())
    assert c.scale == a.scale and np.array_equal(c.rotation, a.rotation)


def test_transform_validation():
    with pytest.raises(ValidationError):
        SimilarityTransform(0.0)
    with pytest.raises(ValidationError):
        SimilarityTransform(1.0, np.diag([1.0, 1.0, -1.0]))


def test_umeyama_identity_and_scale():
    p = np.random.default_rng(1).normal(size=(10, 3))
    tf = umeyama_align(p, p)
    assert abs(tf.scale - 1) <= 1e-12
    np.testing.assert_allclose(tf.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(tf.translation, 0, atol=1e-12)
    tf = umeyama_align(p, 2 * p)
    assert abs(tf.scale - 2) <= 1e-12
    np.testing.assert_allclose(tf.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(tf.translation, 0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_umeyama_recovers_similarity(seed):
    rng = np.random.default_rng(seed)
    tf = random_similarity(rng)
    src = rng.normal(size=(10, 3))
    dst = tf.apply(src)
    est = umeyama_align(src, dst)
    assert rms(est.apply(src), dst) <= 1e-9
    assert abs(est.scale - tf.scale) <= 1e-9


def test_umeyama_from_cameras():
    rng = np.random.default_rng(2)
    cams = sphere_cameras(10)
    src = camera_centers(cams)
    tf = random_similarity(rng)
    est = umeyama_align(src, tf.apply(src))
    assert rms(est.apply(src), tf.apply(src)) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_umeyama_residual_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(12, 3))
    dst = rng.normal(size=(12, 3))
    g = random_similarity(rng, (1.0, 1.0))
    r0 = rms(umeyama_align(src, dst).apply(src), dst)
    r1 = rms(umeyama_align(g.apply(src), g.apply(dst)).apply(g.apply(src)), g.apply(dst))
    assert r1 == pytest.approx(r0, rel=1e-9, abs=1e-12)


def test_umeyama_with_reflection_in_data():
    # mirrored correspondences must still give a proper rotation
    rng = np.random.default_rng(3)
    src = rng.normal(size=(10, 3))
    est = umeyama_align(src, src * [1, 1, -1])
    assert np.linalg.det(est.rotation) == pytest.approx(1.0)


def test_umeyama_degenerate():
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfigurationError):
        umeyama_align(line, line)
    with pytest.raises(DegenerateConfigurationError):
        umeyama_align(np.ones((4, 3)), np.ones((4, 3)))
    with pytest.raises(ValidationError):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        umeyama_align(np.zeros((3, 3)), np.zeros((4, 3)))


def _perturbed(seed, n=1000):
    rng = np.random.default_rng(seed)
    src = rng.uniform(-0.5, 0.5, (n, 3)) * [1.0, 0.6, 0.3]
    ax = rng.normal(size=3)
    ax /= np.linalg.norm(ax)
    R = Rotation.from_rotvec(np.deg2rad(5) * ax).as_matrix()
    return src, src @ R.T + 0.05


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_icp_converges_monotone(seed):
    src, dst = _perturbed(seed)
    res = icp_refine(src, dst, max_iters=50)
    assert res.rms < 1e-6
    assert res.iterations <= 50
    assert np.all(np.diff(res.rms_history) <= 0)
    assert res.transform.scale == 1.0


def test_icp_keeps_init_scale():
    src, dst = _perturbed(4)
    init = SimilarityTransform(2.0)
    res = icp_refine(src, 2.0 * dst, init)
    assert res.transform.scale == 2.0
    assert res.rms < 1e-6


def test_icp_aligned_and_zero_iters():
    p = np.random.default_rng(5).normal(size=(100, 3))
    res = icp_refine(p, p)
    assert res.iterations == 1 and res.rms == 0.0
    init = SimilarityTransform(1.0, np.eye(3), [0.1, 0, 0])
    res = icp_refine(p, p + 1, init, max_iters=0)
    assert res.transform is init and res.iterations == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_icp_rms_non_increasing_random(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(200, 3))
    dst = rng.normal(size=(150, 3)) * 1.2 + 0.1
    res = icp_refine(src, dst, max_iters=30)
    assert np.all(np.diff(res.rms_history) <= 0)


def test_icp_empty():
    with pytest.raises(ValidationError):
        icp_refine(np.zeros((0, 3)), np.zeros((3, 3)))
