"""Similarity alignment between reconstruction and ground-truth frames.

A 7-DoF transform is first estimated in closed form from corresponding camera
centres; rigid ICP on surface points may refine it afterwards with the scale
held fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._threads import workers
from .errors import DegenerateConfigurationError, ValidationError

log = logging.getLogger(__name__)

__all__ = ["SimilarityTransform", "IcpResult", "umeyama_align", "icp_refine", "camera_centers"]


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not self.scale > 0:
            raise ValidationError(f"scale must be > 0, got {self.scale}")
        if abs(np.linalg.det(r) - 1.0) > 1e-6 or not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValidationError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self`` after ``other``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -(rt @ self.translation) / self.scale)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTransform":
        return cls(float(d["scale"]), np.reshape(d["rotation"], (3, 3)), np.asarray(d["translation"]))


@dataclass(frozen=True)
class IcpResult:
    transform: SimilarityTransform
    rms_history: list
    iterations: int
    diverged: bool = False

    @property
    def rms(self) -> float:
        return self.rms_history[-1] if self.rms_history else float("nan")


def camera_centers(cameras) -> np.ndarray:
    return np.stack([c.center for c in cameras])


def _fit(src, dst, with_scale: bool):
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    r = (u * s) @ vt
    var_s = float(np.mean(np.einsum("ij,ij->i", xs, xs)))
    if not with_scale:
        scale = 1.0
    else:
        scale = float(np.dot(d, s) / var_s) if var_s > 0 else 0.0
    t = mu_d - scale * r @ mu_s
    return scale, r, t, d


def umeyama_align(src_centers, dst_centers) -> SimilarityTransform:
    """Least-squares similarity with ``scale * R @ src + t ~ dst``.

    Closed form via the SVD of the cross-covariance, with the reflection
    correction that keeps ``det(R) = +1``.
    """
    src = np.asarray(src_centers, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst_centers, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValidationError("correspondence sets differ in size")
    if len(src) < 3:
        raise ValidationError("need at least 3 correspondences")
    scale, r, t, d = _fit(src, dst, with_scale=True)
    if d[0] <= 0 or d[1] <= 1e-12 * d[0] or not scale > 0:
        raise DegenerateConfigurationError("correspondences are collinear or coincident")
    return SimilarityTransform(scale, r, t)


def icp_refine(
    src_cloud,
    dst_cloud,
    init: SimilarityTransform = SimilarityTransform(),
    max_iters: int = 50,
    tol: float = 1e-12,
    outlier_factor: float = 10.0,
) -> IcpResult:
    """Rigid ICP starting from ``init``; the scale of ``init`` is kept.

    Correspondences farther than ``outlier_factor`` times the median initial
    nearest-neighbour distance are ignored. Iteration stops after ``max_iters``
    updates, when the inlier RMS improves by less than ``tol``, or when an
    update would raise it, in which case the previous transform is kept.
    """
    src = np.asarray(src_cloud, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst_cloud, dtype=np.float64).reshape(-1, 3)
    if not len(src) or not len(dst):
        raise ValidationError("ICP needs non-empty clouds")
    if int(max_iters) <= 0:
        return IcpResult(init, [], 0)
    tree = cKDTree(dst)

    def residual(tf):
        d, j = tree.query(tf.apply(src), workers=workers())
        inl = d <= radius
        if not inl.any():
            return None, d, j, inl
        return float(np.sqrt(np.mean(d[inl] ** 2))), d, j, inl

    d0, _ = tree.query(init.apply(src), workers=workers())
    radius = outlier_factor * float(np.median(d0))
    best = init
    rms, d, j, inl = residual(best)
    if rms is None:
        log.warning("ICP found no inlier correspondences")
        return IcpResult(init, [], 1, diverged=True)
    history = [rms]
    if rms == 0.0:
        return IcpResult(init, history, 1)
    diverged = False
    for _ in range(int(max_iters)):
        cur = best.apply(src[inl])
        _, r, t, _ = _fit(cur, dst[j[inl]], with_scale=False)
        step = SimilarityTransform(1.0, r, t)
        cand = step.compose(best)
        new_rms, nd, nj, ninl = residual(cand)
        if new_rms is None:
            log.warning("ICP lost all correspondences; keeping best transform")
            diverged = True
            break
        if new_rms > history[-1]:
            break
        best, d, j, inl = cand, nd, nj, ninl
        history.append(new_rms)
        if history[-2] - new_rms < tol or new_rms == 0.0:
            break
    return IcpResult(best, history, len(history), diverged)
