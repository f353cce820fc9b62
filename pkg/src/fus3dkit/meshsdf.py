"""Signed distance supervision derived from triangle meshes.

Unsigned distances come from an exact closest-point search pruned with a
kd-tree over triangle bounding spheres. Signs come from ray parity voted over
several directions, which tolerates holes and open boundaries in a way a
single ray cannot. Meshes are never assumed watertight.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from ._threads import workers
from .errors import EmptyResultError, ValidationError
from .grid import GridSpec, MaskGrid, VoxelGrid
from .mesh import TriangleMesh, area_weighted_samples
from .raycast import (
    classify_hits,
    closest_point_sq_dist,
    moller_trumbore,
    parallel_candidates,
    plane_basis,
)

log = logging.getLogger(__name__)

__all__ = [
    "SurfaceSamples",
    "SignResult",
    "unsigned_distance",
    "sign_by_parity",
    "ray_directions",
    "mesh_sdf",
    "mesh_sdf_grid",
    "sample_near_surface",
    "subdivide_longest_edge",
    "carve_visible",
]

DEFAULT_SIGN_RAYS = 9
JITTER_RAD = 1e-4
MAX_RETRIES = 3
_T_MIN = 1e-10


@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray
    gt_sdf: np.ndarray
    signed: bool = True

    def __post_init__(self):
        if len(self.points) != len(self.gt_sdf):
            raise ValidationError("points and gt_sdf differ in length")

    def unsigned(self) -> "SurfaceSamples":
        """Same samples flagged for sign-agnostic supervision."""
        return SurfaceSamples(self.points, self.gt_sdf, signed=False)


@dataclass(frozen=True)
class SignResult:
    sign: np.ndarray
    confidence: np.ndarray
    inside_votes: np.ndarray


def unsigned_distance(mesh: TriangleMesh, points, chunk: int = 8192) -> np.ndarray:
    """Distance from each point to the closest point on any triangle.

    Results equal an exhaustive minimum over triangles: the kd-tree only
    discards triangles whose bounding sphere is farther than a distance already
    achieved.
    """
    if mesh.is_empty():
        raise ValidationError("unsigned_distance needs a non-empty mesh")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    corners = mesh.corners()
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    cent = corners.mean(axis=1)
    rad = np.linalg.norm(corners - cent[:, None], axis=2).max(axis=1)
    rmax = float(rad.max())
    tree = cKDTree(cent)
    k = min(8, mesh.n_triangles)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        n = len(p)
        _, nn = tree.query(p, k=k, workers=workers())
        nn = np.asarray(nn).reshape(n, k)
        pi = np.repeat(np.arange(n), k)
        d2 = closest_point_sq_dist(p[pi], a[nn.ravel()], b[nn.ravel()], c[nn.ravel()])
        best = d2.reshape(n, k).min(axis=1)
        ub = np.sqrt(best)
        slack = 1e-9 * (1.0 + ub)
        lists = tree.query_ball_point(p, ub + rmax + slack, workers=workers())
        lengths = np.fromiter((len(x) for x in lists), dtype=np.int64, count=n)
        ti = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.int64, count=int(lengths.sum()))
        pi = np.repeat(np.arange(n), lengths)
        lb = np.linalg.norm(p[pi] - cent[ti], axis=1) - rad[ti]
        keep = lb <= ub[pi] + slack[pi]
        pi, ti = pi[keep], ti[keep]
        d2 = closest_point_sq_dist(p[pi], a[ti], b[ti], c[ti])
        np.minimum.at(best, pi, d2)
        out[s : s + n] = np.sqrt(best)
    return out


def ray_directions(n_rays: int, seed: int = 0) -> np.ndarray:
    """Fibonacci-sphere directions under a seeded random rotation."""
    n = int(n_rays)
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rot = Rotation.random(random_state=np.random.default_rng(seed)).as_matrix()
    return dirs @ rot.T


def _jitter(direction, rng: np.random.Generator) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    axis = np.cross(d, rng.normal(size=3))
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * JITTER_RAD).apply(d)


def _count_all(points, direction, corners, dedupe: bool):
    """Exhaustive crossing count for a handful of rays; returns (count, grazed)."""
    n, nt = len(points), len(corners)
    pi = np.repeat(np.arange(n), nt)
    ti = np.tile(np.arange(nt), n)
    dirs = np.broadcast_to(direction, (len(pi), 3))
    t, u, v, det = moller_trumbore(points[pi], dirs, corners[ti, 0], corners[ti, 1], corners[ti, 2])
    hit, graze = classify_hits(u, v, det)
    front = t > _T_MIN
    grazed = np.bincount(pi[graze & front], minlength=n) > 0
    if not dedupe:
        return np.bincount(pi[hit & front], minlength=n), grazed
    sel = (hit | graze) & front
    counts = np.zeros(n, dtype=np.int64)
    for q in range(n):
        ts = np.sort(t[sel & (pi == q)])
        if ts.size:
            counts[q] = 1 + int(np.sum(np.diff(ts) > 1e-9 * (1.0 + ts[1:])))
    return counts, grazed


def sign_by_parity(mesh: TriangleMesh, points, n_rays: int = DEFAULT_SIGN_RAYS, seed: int = 0) -> SignResult:
    """Inside/outside vote from crossing-count parity along ``n_rays`` rays.

    A ray that touches a triangle edge or vertex is re-cast with its direction
    jittered by ``JITTER_RAD``; after ``MAX_RETRIES`` failed attempts,
    coincident crossings are merged and counted once.
    """
    n_rays = int(n_rays)
    if n_rays < 1 or n_rays % 2 == 0:
        raise ValidationError(f"n_rays must be odd and >= 1, got {n_rays}")
    if mesh.is_empty():
        raise ValidationError("sign_by_parity needs a non-empty mesh")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    corners = mesh.corners()
    rng = np.random.default_rng([int(seed), 0x5EED])
    inside = np.zeros(len(pts), dtype=np.int64)
    for d in ray_directions(n_rays, seed):
        qi, ti = parallel_candidates(pts, d, corners)
        dirs = np.broadcast_to(d, (len(qi), 3))
        t, u, v, det = moller_trumbore(pts[qi], dirs, corners[ti, 0], corners[ti, 1], corners[ti, 2])
        hit, graze = classify_hits(u, v, det)
        front = t > _T_MIN
        counts = np.bincount(qi[hit & front], minlength=len(pts))
        todo = np.flatnonzero(np.bincount(qi[graze & front], minlength=len(pts)) > 0)
        for attempt in range(MAX_RETRIES):
            if todo.size == 0:
                break
            dj = _jitter(d, rng)
            c, grazed = _count_all(pts[todo], dj, corners, dedupe=False)
            counts[todo[~grazed]] = c[~grazed]
            todo = todo[grazed]
            if todo.size and attempt == MAX_RETRIES - 1:
                counts[todo], _ = _count_all(pts[todo], dj, corners, dedupe=True)
        inside += counts % 2
    outside = n_rays - inside
    sign = np.where(inside > outside, -1, 1).astype(np.int8)
    conf = np.maximum(inside, outside) / n_rays
    return SignResult(sign, conf, inside)


def mesh_sdf(mesh: TriangleMesh, points, n_rays: int = DEFAULT_SIGN_RAYS, seed: int = 0):
    """Signed distances at ``points`` (negative inside) and their sign votes."""
    d = unsigned_distance(mesh, points)
    s = sign_by_parity(mesh, points, n_rays, seed)
    return s.sign * d, s


def mesh_sdf_grid(mesh: TriangleMesh, spec: GridSpec, n_rays: int = DEFAULT_SIGN_RAYS, seed: int = 0):
    """SDF sampled at every voxel centre plus its validity mask.

    Mesh-derived values are defined everywhere, so the mask is all True;
    unreliable signs are left to the Eikonal mask.
    """
    values, _ = mesh_sdf(mesh, spec.centers(), n_rays, seed)
    return VoxelGrid(spec, values.reshape(spec.dims)), MaskGrid.full(spec, True)


def sample_near_surface(mesh: TriangleMesh, count: int, band: float, seed: int = 0) -> SurfaceSamples:
    """Area-weighted surface points pushed off along face normals.

    Offsets are uniform in ``[-band, band]`` and double as ground truth, except
    where another part of the surface is closer than the offset; there the
    magnitude is replaced by the true unsigned distance.
    """
    count = int(count)
    if count < 1:
        raise ValidationError("count must be >= 1")
    if band < 0:
        raise ValidationError("band must be >= 0")
    rng = np.random.default_rng(seed)
    base, tri = area_weighted_samples(mesh, count, rng)
    if band == 0:
        return SurfaceSamples(base, np.zeros(count), signed=True)
    offset = rng.uniform(-band, band, size=count)
    pts = base + offset[:, None] * mesh.face_normals()[tri]
    gt = offset.copy()
    ud = unsigned_distance(mesh, pts)
    closer = ud < np.abs(offset) * (1.0 - 1e-9) - 1e-12
    gt[closer] = np.sign(offset[closer]) * ud[closer]
    return SurfaceSamples(pts, gt, signed=True)


def subdivide_longest_edge(mesh: TriangleMesh, max_edge: float) -> TriangleMesh:
    """Bisect longest edges until no edge exceeds ``max_edge``.

    Midpoints are shared between the triangles that split the same edge;
    winding is preserved.
    """
    if not max_edge > 0:
        raise ValidationError("max_edge must be > 0")
    verts = mesh.vertices
    tris = mesh.triangles
    done = []
    known_keys = np.zeros(0, dtype=np.int64)
    known_ids = np.zeros(0, dtype=np.int64)
    stride = np.int64(1) << 31
    while len(tris):
        c = verts[tris]
        lengths = np.linalg.norm(c[:, [1, 2, 0]] - c, axis=2)
        split = lengths.max(axis=1) > max_edge
        done.append(tris[~split])
        tris, longest = tris[split], lengths[split].argmax(axis=1)
        if not len(tris):
            break
        # rotate so the longest edge is (t0, t1)
        tris = np.take_along_axis(tris, (longest[:, None] + np.arange(3)) % 3, axis=1)
        t0, t1, t2 = tris.T
        keys = np.minimum(t0, t1) * stride + np.maximum(t0, t1)
        uniq, inv = np.unique(keys, return_inverse=True)
        pos = np.minimum(np.searchsorted(known_keys, uniq), max(len(known_keys) - 1, 0))
        if len(known_keys):
            seen = known_keys[pos] == uniq
            ids = np.where(seen, known_ids[pos], 0)
        else:
            seen = np.zeros(len(uniq), dtype=bool)
            ids = np.zeros(len(uniq), dtype=np.int64)
        fresh = np.flatnonzero(~seen)
        ids[fresh] = len(verts) + np.arange(len(fresh))
        a, b = uniq[fresh] // stride, uniq[fresh] % stride
        verts = np.vstack([verts, 0.5 * (verts[a] + verts[b])])
        merged = np.concatenate([known_keys, uniq[fresh]])
        order = np.argsort(merged, kind="stable")
        known_keys = merged[order]
        known_ids = np.concatenate([known_ids, ids[fresh]])[order]
        m = ids[inv]
        tris = np.concatenate([np.stack([t0, m, t2], 1), np.stack([m, t1, t2], 1)])
    out = np.concatenate(done) if done else np.zeros((0, 3), dtype=np.int64)
    return TriangleMesh(verts, out)


def _bounding_sphere(mesh: TriangleMesh):
    lo, hi = mesh.bounds()
    center = 0.5 * (lo + hi)
    radius = float(np.linalg.norm(mesh.vertices[np.unique(mesh.triangles)] - center, axis=1).max())
    return center, radius * 1.01 + 1e-9


def carve_visible(
    mesh: TriangleMesh,
    epsilon: float,
    n_rays: int = 1_000_000,
    seed: int = 0,
    sphere=None,
) -> TriangleMesh:
    """Keep only triangles that some outside ray reaches first.

    Triangles are first subdivided to edges of at most ``4 * epsilon``. Rays
    start on the bounding sphere and head inward in bundles of parallel rays,
    one bundle per seeded direction, each bundle aimed at stratified jittered
    points of the sphere's cross-section disk.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be > 0")
    if mesh.is_empty():
        raise ValidationError("carve_visible needs a non-empty mesh")
    fine = subdivide_longest_edge(mesh, 4.0 * epsilon)
    center, radius = _bounding_sphere(mesh) if sphere is None else sphere
    center = np.asarray(center, dtype=np.float64)
    corners = fine.corners()
    rng = np.random.default_rng(seed)

    n_rays = int(n_rays)
    n_dirs = max(6, int(round(n_rays ** 0.4)))
    side = max(1, int(np.ceil(np.sqrt(n_rays / n_dirs * 4.0 / np.pi))))
    visible = np.zeros(fine.n_triangles, dtype=bool)
    for d in ray_directions(n_dirs, seed):
        d = -d
        basis = plane_basis(d)
        jit = rng.random((2, side, side))
        su = (np.arange(side)[:, None] + jit[0]) / side * 2.0 - 1.0
        sv = (np.arange(side)[None, :] + jit[1]) / side * 2.0 - 1.0
        uv = np.stack([su.ravel(), sv.ravel()], axis=1)
        uv = uv[np.einsum("ij,ij->i", uv, uv) < 1.0] * radius
        h = np.sqrt(np.maximum(radius**2 - np.einsum("ij,ij->i", uv, uv), 0.0))
        origins = center + uv @ basis - h[:, None] * d
        qi, ti = parallel_candidates(origins, d, corners)
        if not len(qi):
            continue
        dirs = np.broadcast_to(d, (len(qi), 3))
        t, u, v, det = moller_trumbore(origins[qi], dirs, corners[ti, 0], corners[ti, 1], corners[ti, 2])
        hit, graze = classify_hits(u, v, det)
        ok = (hit | graze) & (t > _T_MIN)
        qi, ti, t = qi[ok], ti[ok], t[ok]
        if not len(qi):
            continue
        order = np.lexsort((t, qi))
        qi, ti, t = qi[order], ti[order], t[order]
        first = np.r_[True, qi[1:] != qi[:-1]]
        # grazing rays credit every triangle tied at the first depth
        tmin = np.repeat(t[first], np.diff(np.r_[np.flatnonzero(first), len(t)]))
        credit = t <= tmin + 1e-9 * (1.0 + np.abs(tmin))
        visible[ti[credit]] = True

    if not visible.any():
        raise EmptyResultError("no triangle was hit; increase n_rays")
    return TriangleMesh(fine.vertices, fine.triangles[visible]).compact()
