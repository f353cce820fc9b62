"""Isosurface extraction by marching cubes."""

from __future__ import annotations

import numpy as np

from ._mc_tables import TRI_TABLE
from .errors import ValidationError
from .grid import MaskGrid, VoxelGrid
from .mesh import TriangleMesh

__all__ = ["marching_cubes"]

# cube corner n sits at this offset from the cell's lowest voxel
_CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
)
_EDGES = np.array(
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)]
)


def _edge_table():
    # each cube edge as (start corner offset, lattice axis)
    start = np.empty((12, 3), dtype=np.int64)
    axis = np.empty(12, dtype=np.int64)
    for e, (a, b) in enumerate(_EDGES):
        pa, pb = _CORNERS[a], _CORNERS[b]
        axis[e] = int(np.flatnonzero(pa != pb)[0])
        start[e] = np.minimum(pa, pb)
    return start, axis


_EDGE_START, _EDGE_AXIS = _edge_table()

_TRI = np.full((256, 15), -1, dtype=np.int64)
for _c, _row in enumerate(TRI_TABLE):
    _TRI[_c, : len(_row)] = _row
_NTRI = np.array([len(r) // 3 for r in TRI_TABLE])


def marching_cubes(grid: VoxelGrid, mask: MaskGrid | None = None, isovalue: float = 0.0) -> TriangleMesh:
    """Triangulate ``{f = isovalue}`` over the grid's cells.

    A corner counts as inside when its value is strictly below ``isovalue``.
    Cells with any masked-out corner are skipped. Vertices are shared between
    neighbouring cells, so closed level sets on fully valid grids come out as
    closed meshes. Triangles are emitted in cell order and wound so that their
    normals point towards increasing values.
    """
    spec = grid.spec
    if min(spec.dims) < 2:
        raise ValidationError("marching cubes needs >= 2 voxels per axis")
    if not np.isfinite(isovalue):
        raise ValidationError("isovalue must be finite")
    if mask is not None:
        spec.check_same(mask.spec, "mask")
    f = grid.values
    nx, ny, nz = spec.dims
    below = f < isovalue
    code = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for n, (dx, dy, dz) in enumerate(_CORNERS):
        code |= below[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz].astype(np.int64) << n
    active = (code != 0) & (code != 255)
    if mask is not None:
        ok = np.ones_like(active)
        for dx, dy, dz in _CORNERS:
            ok &= mask.bits[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz]
        active &= ok
    cells = np.argwhere(active)
    if not len(cells):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    codes = code[active]

    ntri = _NTRI[codes]
    cell_of = np.repeat(np.arange(len(cells)), ntri)
    slot = np.arange(ntri.sum()) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    tri_edges = np.stack([_TRI[codes[cell_of], 3 * slot + k] for k in range(3)], axis=1)

    # global id of a lattice edge: ((i * ny + j) * nz + k) * 3 + axis
    base = cells[cell_of][:, None, :] + _EDGE_START[tri_edges]
    keys = ((base[..., 0] * ny + base[..., 1]) * nz + base[..., 2]) * 3 + _EDGE_AXIS[tri_edges]
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)

    axis = uniq % 3
    lin = uniq // 3
    i0 = np.stack([lin // (ny * nz), (lin // nz) % ny, lin % nz], axis=1)
    step = np.eye(3, dtype=np.int64)[axis]
    i1 = i0 + step
    v0 = f[i0[:, 0], i0[:, 1], i0[:, 2]]
    v1 = f[i1[:, 0], i1[:, 1], i1[:, 2]]
    den = v1 - v0
    t = np.where(den != 0, (isovalue - v0) / np.where(den != 0, den, 1.0), 0.5)
    pos = i0.astype(np.float64) + t[:, None] * step
    verts = spec.origin_array + spec.voxel_size * pos
    tris = inv.reshape(-1, 3)
    return TriangleMesh(verts, tris[:, ::-1])
