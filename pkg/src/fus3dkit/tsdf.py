"""Depth rendering from meshes and projective TSDF fusion.

Cameras follow the pinhole convention with +z forward, +x right, +y down and
pixel centres at integer coordinates. Depth is the camera-frame z of the first
surface hit, 0 where the ray misses.

Fused values are *projective* distances ``depth - z``, not Euclidean ones. They
place the zero crossing correctly but overestimate the distance off the
surface normal, which is the bias the Eikonal diagnostics are meant to expose.
No redistancing pass is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import GridSpec, MaskGrid, VoxelGrid, trilinear_sample
from .mesh import TriangleMesh
from .raycast import classify_hits, moller_trumbore, pinhole_candidates

__all__ = [
    "Camera",
    "DepthMap",
    "TsdfState",
    "look_at",
    "sphere_cameras",
    "render_depth",
    "integrate_views",
    "fuse_tsdf",
]


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise ValidationError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point outside the image")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValidationError("world_to_cam rotation is not a proper rotation")
        if not np.allclose(m[3], [0, 0, 0, 1]):
            raise ValidationError("world_to_cam last row must be (0, 0, 0, 1)")
        m.flags.writeable = False
        object.__setattr__(self, "world_to_cam", m)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_cam[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_cam[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, cam_points) -> np.ndarray:
        """Pixel coordinates ``(u, v)`` of camera-frame points with ``z > 0``."""
        p = np.asarray(cam_points)
        return np.stack([self.fx * p[:, 0] / p[:, 2] + self.cx, self.fy * p[:, 1] / p[:, 2] + self.cy], axis=1)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "world_to_cam": [float(x) for x in self.world_to_cam.ravel()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(
                float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                int(d["width"]), int(d["height"]),
                np.asarray(d["world_to_cam"], dtype=np.float64).reshape(4, 4),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad camera record: {exc}") from exc


@dataclass(frozen=True)
class DepthMap:
    camera: Camera
    depth: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.shape != (self.camera.height, self.camera.width):
            raise ValidationError(f"depth shape {d.shape} does not match camera")
        if not np.all(np.isfinite(d)) or d.min(initial=0.0) < 0:
            raise ValidationError("depth must be finite and >= 0")
        d.flags.writeable = False
        object.__setattr__(self, "depth", d)


@dataclass(frozen=True)
class TsdfState:
    spec: GridSpec
    tsdf: np.ndarray = field(repr=False)
    weight: np.ndarray = field(repr=False)
    truncation: float

    @property
    def observed(self) -> np.ndarray:
        return self.weight > 0


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera matrix for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(z, up)) > 0.999 * np.linalg.norm(up):
        up = np.array([0.0, 1.0, 0.0]) if abs(z[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, :3] = np.stack([x, y, z])
    m[:3, 3] = -m[:3, :3] @ eye
    return m


def sphere_cameras(n: int = 24, radius: float = 2.0, size: int = 128, focal: float | None = None, target=(0.0, 0.0, 0.0)):
    """``n`` inward-looking cameras spread over a sphere (Fibonacci lattice).

    The default focal length of ``size`` pixels gives a field of view whose
    half-angle tangent is 0.5, enough to frame ``[-0.5, 0.5]^3`` from radius 2.
    """
    focal = float(size) if focal is None else float(focal)
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    eyes = radius * np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1) + np.asarray(target)
    c = (size - 1) / 2.0
    return [Camera(focal, focal, c, c, size, size, look_at(e, target)) for e in eyes]


def render_depth(mesh: TriangleMesh, camera: Camera) -> DepthMap:
    """Depth of the first triangle hit along each pixel-centre ray."""
    if mesh.is_empty():
        raise ValidationError("render_depth needs a non-empty mesh")
    h, w = camera.height, camera.width
    vv, uu = np.mgrid[0:h, 0:w]
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float64)
    corners = camera.to_camera(mesh.corners().reshape(-1, 3)).reshape(-1, 3, 3)
    qi, ti = pinhole_candidates(uv, corners, camera.fx, camera.fy, camera.cx, camera.cy)
    # direction z = 1, so the ray parameter t is the camera-frame depth
    dirs = np.stack([(uv[qi, 0] - camera.cx) / camera.fx, (uv[qi, 1] - camera.cy) / camera.fy, np.ones(len(qi))], axis=1)
    t, u, v, det = moller_trumbore(np.zeros_like(dirs), dirs, corners[ti, 0], corners[ti, 1], corners[ti, 2])
    hit, graze = classify_hits(u, v, det)
    ok = (hit | graze) & (t > 0)
    depth = np.full(h * w, np.inf)
    np.minimum.at(depth, qi[ok], t[ok])
    depth[~np.isfinite(depth)] = 0.0
    return DepthMap(camera, depth.reshape(h, w))


def _view_values(dm: DepthMap, points, truncation: float):
    cam = dm.camera
    pc = cam.to_camera(points)
    z = pc[:, 2]
    front = z > 0
    zs = np.where(front, z, 1.0)
    col = np.floor(cam.fx * pc[:, 0] / zs + cam.cx + 0.5)
    row = np.floor(cam.fy * pc[:, 1] / zs + cam.cy + 0.5)
    inside = front & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    d = np.zeros(len(points))
    d[inside] = dm.depth[row[inside].astype(np.int64), col[inside].astype(np.int64)]
    p = d - z
    ok = inside & (d > 0) & (p >= -truncation)
    return np.where(ok, np.minimum(p, truncation), 0.0), ok


def integrate_views(depths, spec: GridSpec, truncation: float, chunk: int = 1 << 16) -> TsdfState:
    """Average projective distances of all views at the voxel centres of ``spec``.

    Each observation has weight 1. Per voxel, contributions are sorted before
    summation so the result does not depend on the order of ``depths``.
    """
    depths = list(depths)
    centers = spec.centers()
    n = len(centers)
    tsdf = np.zeros(n)
    weight = np.zeros(n)
    for s in range(0, n, chunk):
        pts = centers[s : s + chunk]
        vals = np.zeros((len(depths), len(pts)))
        obs = np.zeros((len(depths), len(pts)), dtype=bool)
        for k, dm in enumerate(depths):
            vals[k], obs[k] = _view_values(dm, pts, truncation)
        wsum = obs.sum(axis=0).astype(np.float64)
        total = np.sort(vals, axis=0).sum(axis=0)
        weight[s : s + chunk] = wsum
        tsdf[s : s + chunk] = np.where(wsum > 0, total / np.where(wsum > 0, wsum, 1.0), truncation)
    np.clip(tsdf, -truncation, truncation, out=tsdf)
    return TsdfState(spec, tsdf.reshape(spec.dims), weight.reshape(spec.dims), float(truncation))


def fuse_tsdf(depths, spec: GridSpec, truncation: float | None = None, oversample: int = 2):
    """Fuse depth maps into a TSDF on ``spec`` and its validity mask.

    Integration runs on a lattice refined ``oversample`` times per axis and is
    resampled to ``spec`` by weight-normalised trilinear interpolation, so
    unobserved fine voxels never leak into observed coarse ones. A voxel is
    valid iff its resampled weight is positive; invalid voxels hold
    ``+truncation``. The default truncation is four voxels.
    """
    depths = list(depths)
    eps = spec.voxel_size
    tau = 4.0 * eps if truncation is None else float(truncation)
    if tau < eps * (1 - 1e-12):
        raise ValidationError(f"truncation {tau} is below the voxel size {eps}")
    if int(oversample) < 1:
        raise ValidationError("oversample must be >= 1")
    if not depths:
        return VoxelGrid(spec, np.full(spec.dims, tau)), MaskGrid.full(spec, False)
    fine = spec.refined(int(oversample))
    state = integrate_views(depths, fine, tau)
    if int(oversample) == 1:
        values, weight = state.tsdf, state.weight
    else:
        centers = spec.centers()
        wt = trilinear_sample(VoxelGrid(fine, state.tsdf * state.weight), centers)
        w = trilinear_sample(VoxelGrid(fine, state.weight), centers)
        values = np.where(w > 0, wt / np.where(w > 0, w, 1.0), tau).reshape(spec.dims)
        weight = w.reshape(spec.dims)
    values = np.clip(values, -tau, tau)
    return VoxelGrid(spec, values), MaskGrid(spec, weight > 0)
