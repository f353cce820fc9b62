"""Indexed triangle meshes and a few analytic test shapes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)

__all__ = [
    "TriangleMesh",
    "icosphere",
    "box_mesh",
    "quad_mesh",
    "boundary_edges",
    "area_weighted_samples",
]


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValidationError("mesh has non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValidationError("triangle index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    @classmethod
    def from_arrays(cls, vertices, triangles, area_tol: float = 0.0) -> "TriangleMesh":
        """Build a mesh, dropping triangles with area ``<= area_tol``."""
        mesh = cls(vertices, triangles)
        keep = mesh.areas() > area_tol
        dropped = int((~keep).sum())
        if dropped:
            log.warning("dropped %d degenerate triangle(s)", dropped)
            mesh = cls(mesh.vertices, mesh.triangles[keep])
        return mesh

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def is_empty(self) -> bool:
        return self.n_triangles == 0

    def corners(self) -> np.ndarray:
        """Triangle corner positions, shape ``(T, 3, 3)``."""
        return self.vertices[self.triangles]

    def _cross(self) -> np.ndarray:
        c = self.corners()
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals from the winding order (counter-clockwise = front)."""
        n = self._cross()
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(length > 0, length, 1.0)

    def signed_volume(self) -> float:
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        used = self.vertices[np.unique(self.triangles)] if self.n_triangles else self.vertices
        return used.min(axis=0), used.max(axis=0)

    def edge_lengths(self) -> np.ndarray:
        c = self.corners()
        return np.linalg.norm(c[:, [1, 2, 0]] - c, axis=2)

    def transformed(self, matrix) -> "TriangleMesh":
        """Apply a 4x4 homogeneous transform to the vertices."""
        m = np.asarray(matrix, dtype=np.float64)
        v = self.vertices @ m[:3, :3].T + m[:3, 3]
        tris = self.triangles if np.linalg.det(m[:3, :3]) > 0 else self.triangles[:, ::-1]
        return TriangleMesh(v, tris)

    def compact(self) -> "TriangleMesh":
        """Drop unreferenced vertices."""
        used, inv = np.unique(self.triangles, return_inverse=True)
        return TriangleMesh(self.vertices[used], inv.reshape(-1, 3))

    def concatenate(self, other: "TriangleMesh") -> "TriangleMesh":
        return TriangleMesh(
            np.vstack([self.vertices, other.vertices]),
            np.vstack([self.triangles, other.triangles + len(self.vertices)]),
        )


def boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """Undirected edges not shared by exactly two triangles."""
    t = mesh.triangles
    e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts != 2]


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` outward-wound triangles.

    All vertices lie exactly on the sphere, so the mesh is inscribed.
    """
    p = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0),
        (0, -1, p), (0, 1, p), (0, -1, -p), (0, 1, -p),
        (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(int(subdivisions)):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.asarray(verts) * float(radius) + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(faces))


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5), drop_faces=()) -> TriangleMesh:
    """Axis-aligned box, 12 outward-wound triangles.

    ``drop_faces`` names faces to omit, e.g. ``("+z",)``, giving an open box.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    v = np.array([[(hi if (i >> a) & 1 else lo)[a] for a in range(3)] for i in range(8)])
    # corner index bits: x=1, y=2, z=4
    quads = {
        "-x": (0, 4, 6, 2), "+x": (1, 3, 7, 5),
        "-y": (0, 1, 5, 4), "+y": (2, 6, 7, 3),
        "-z": (0, 2, 3, 1), "+z": (4, 5, 7, 6),
    }
    tris = []
    for name, (a, b, c, d) in quads.items():
        if name in drop_faces:
            continue
        tris += [(a, b, c), (a, c, d)]
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def quad_mesh(center=(0.0, 0.0, 0.0), size: float = 1.0, normal_axis: int = 2) -> TriangleMesh:
    """Square of side ``size`` orthogonal to ``normal_axis``, facing +axis."""
    h = 0.5 * size
    u, w = [a for a in range(3) if a != normal_axis]
    pts = np.zeros((4, 3))
    for n, (su, sw) in enumerate([(-1, -1), (1, -1), (1, 1), (-1, 1)]):
        pts[n, u], pts[n, w] = su * h, sw * h
    pts += np.asarray(center, dtype=np.float64)
    tris = np.array([(0, 1, 2), (0, 2, 3)])
    mesh = TriangleMesh(pts, tris)
    if mesh.face_normals()[0, normal_axis] < 0:
        mesh = TriangleMesh(pts, tris[:, ::-1])
    return mesh


def area_weighted_samples(mesh: TriangleMesh, count: int, rng: np.random.Generator):
    """Uniform surface samples; returns ``(points, triangle_index)``."""
    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValidationError("cannot sample a zero-area mesh")
    count = int(count)
    if count <= 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    c = mesh.corners()[tri]
    pts = (
        (1.0 - r1)[:, None] * c[:, 0]
        + (r1 * (1.0 - r2))[:, None] * c[:, 1]
        + (r1 * r2)[:, None] * c[:, 2]
    )
    return pts, tri
