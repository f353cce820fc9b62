"""Dense voxel grids, finite differences and mask construction.

A grid samples an axis-aligned volume at voxel centers
``x_ijk = origin + voxel_size * (i, j, k)``. Values are held as an array of
shape ``dims`` in C order, so ``k`` varies fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SpecMismatchError, ValidationError

__all__ = [
    "GridSpec",
    "VoxelGrid",
    "MaskGrid",
    "VectorGrid",
    "finite_diff_gradient",
    "eikonal_residual",
    "build_eikonal_mask",
    "trilinear_sample",
    "nearest_voxel",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    dims: tuple[int, int, int]
    voxel_size: float

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(dims) != 3:
            raise ValidationError("origin and dims need three components")
        if any(d < 1 for d in dims):
            raise ValidationError(f"dims must be positive, got {dims}")
        if not np.all(np.isfinite(origin)):
            raise ValidationError("origin must be finite")
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise ValidationError(f"voxel_size must be > 0, got {self.voxel_size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @classmethod
    def from_bounds(cls, lo, hi, dims) -> "GridSpec":
        """Cubic cell-centred lattice covering ``[lo, hi]^3``.

        The volume is split into ``dims`` cells per axis and values live at the
        cell centres, so the outermost centres sit half a voxel inside.
        """
        if np.isscalar(dims):
            dims = (int(dims),) * 3
        lo, hi = float(lo), float(hi)
        if not hi > lo:
            raise ValidationError(f"empty extent [{lo}, {hi}]")
        sizes = {(hi - lo) / d for d in dims}
        if len(sizes) != 1:
            raise ValidationError("anisotropic voxels are not supported; use equal dims")
        eps = sizes.pop()
        return cls((lo + 0.5 * eps,) * 3, tuple(dims), eps)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        """World position of the last voxel centre."""
        return self.origin_array + self.voxel_size * (np.asarray(self.dims) - 1)

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.voxel_size * np.arange(self.dims[axis])

    def centers(self) -> np.ndarray:
        """All voxel centres as an ``(N, 3)`` array in storage order."""
        xs, ys, zs = (self.axis_coords(a) for a in range(3))
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def world_to_index(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.origin_array) / self.voxel_size

    def refined(self, factor: int) -> "GridSpec":
        """Lattice with ``factor`` sub-voxels per voxel covering the same cells."""
        factor = int(factor)
        if factor < 1:
            raise ValidationError("refinement factor must be >= 1")
        eps = self.voxel_size / factor
        origin = self.origin_array - 0.5 * self.voxel_size + 0.5 * eps
        return GridSpec(tuple(origin), tuple(d * factor for d in self.dims), eps)

    def check_same(self, other: "GridSpec", what: str = "grid") -> None:
        if self.dims != other.dims or not (
            np.allclose(self.origin, other.origin, rtol=0, atol=1e-9 * self.voxel_size)
            and abs(self.voxel_size - other.voxel_size) <= 1e-12 * self.voxel_size
        ):
            raise SpecMismatchError(f"{what} lattice {other} differs from {self}")


@dataclass(frozen=True)
class VoxelGrid:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.spec.n_voxels:
            raise ValidationError(f"{v.size} values for {self.spec.n_voxels} voxels")
        object.__setattr__(self, "values", _frozen(v.reshape(self.spec.dims)))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "VoxelGrid":
        return cls(spec, fn(spec.centers()).reshape(spec.dims))

    def with_values(self, values) -> "VoxelGrid":
        return VoxelGrid(self.spec, values)


@dataclass(frozen=True)
class MaskGrid:
    spec: GridSpec
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.size != self.spec.n_voxels:
            raise ValidationError(f"{b.size} mask bits for {self.spec.n_voxels} voxels")
        object.__setattr__(self, "bits", _frozen(b.reshape(self.spec.dims).astype(bool)))

    @classmethod
    def full(cls, spec: GridSpec, value: bool = True) -> "MaskGrid":
        return cls(spec, np.full(spec.dims, bool(value)))

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __and__(self, other: "MaskGrid") -> "MaskGrid":
        self.spec.check_same(other.spec, "mask")
        return MaskGrid(self.spec, self.bits & other.bits)


@dataclass(frozen=True)
class VectorGrid:
    spec: GridSpec
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.size != 3 * self.spec.n_voxels:
            raise ValidationError("vector count does not match grid")
        object.__setattr__(self, "vectors", _frozen(v.reshape(*self.spec.dims, 3)))

    def norm(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=-1)


def finite_diff_gradient(grid: VoxelGrid) -> VectorGrid:
    """Central differences inside, one-sided differences on the border."""
    if min(grid.spec.dims) < 2:
        raise ValidationError(f"gradient needs >= 2 voxels per axis, got {grid.spec.dims}")
    g = np.gradient(grid.values, grid.spec.voxel_size, edge_order=1)
    return VectorGrid(grid.spec, np.stack(g, axis=-1))


def eikonal_residual(grid: VoxelGrid) -> np.ndarray:
    """Per-voxel gradient norm ``||grad f||``; equals 1 for a Euclidean SDF."""
    return finite_diff_gradient(grid).norm()


def build_eikonal_mask(
    gt: VoxelGrid,
    pool_kernel: int = 5,
    threshold: float = 2.0,
    mv: MaskGrid | None = None,
) -> MaskGrid:
    """Voxels whose neighbourhood has a plausible SDF gradient.

    The gradient norm is max-pooled over a ``pool_kernel`` cube (borders
    replicate) and compared against ``threshold``; a True bit means every voxel
    within Chebyshev radius ``pool_kernel // 2`` satisfies
    ``||grad f|| <= threshold``. Pooling runs on the full grid; the result is
    intersected with ``mv`` afterwards when given.
    """
    pool_kernel = int(pool_kernel)
    if pool_kernel < 1 or pool_kernel % 2 == 0:
        raise ValidationError(f"pool_kernel must be odd and >= 1, got {pool_kernel}")
    if not threshold > 1:
        raise ValidationError(f"threshold must exceed 1, got {threshold}")
    if not np.all(np.isfinite(gt.values)):
        raise ValidationError("eikonal mask needs a finite ground-truth grid")
    if mv is not None:
        gt.spec.check_same(mv.spec, "validity mask")
    e = eikonal_residual(gt)
    pooled = ndimage.maximum_filter(e, size=pool_kernel, mode="nearest")
    bits = pooled <= threshold
    if mv is not None:
        bits &= mv.bits
    return MaskGrid(gt.spec, bits)


def trilinear_sample(grid: VoxelGrid, points, clamp: bool = False) -> np.ndarray:
    """Trilinear interpolation of ``grid`` at world-space ``points``.

    Points must lie in the box spanned by the voxel centres unless ``clamp``
    is set, in which case they are projected onto it.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    spec = grid.spec
    idx = spec.world_to_index(pts)
    hi = np.asarray(spec.dims, dtype=np.float64) - 1
    tol = 1e-9
    if clamp:
        idx = np.clip(idx, 0.0, hi)
    else:
        bad = np.flatnonzero(np.any((idx < -tol) | (idx > hi + tol), axis=1))
        if bad.size:
            i = int(bad[0])
            raise ValidationError(
                f"point {i} at {pts[i].tolist()} lies outside the grid "
                f"({bad.size} out of range)"
            )
        idx = np.clip(idx, 0.0, hi)
    dims = np.asarray(spec.dims)
    i0 = np.minimum(np.floor(idx).astype(np.int64), np.maximum(dims - 2, 0))
    t = idx - i0
    v = grid.values
    out = np.zeros(len(pts))
    for corner in range(8):
        offs = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        ii = np.minimum(i0 + offs, dims - 1)
        w = np.prod(np.where(offs.astype(bool), t, 1.0 - t), axis=1)
        out += w * v[ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


def nearest_voxel(spec: GridSpec, points) -> np.ndarray:
    """Integer index of the closest voxel centre, clamped into the grid."""
    idx = np.rint(spec.world_to_index(points)).astype(np.int64)
    return np.clip(idx, 0, np.asarray(spec.dims) - 1)
