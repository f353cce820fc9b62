"""
Marching cubes and reconstruction metrics
=========================================
"""

import numpy as np

from fus3dkit import GridSpec, MaskGrid, chamfer, f_score, marching_cubes
from fus3dkit.grid import VoxelGrid
from fus3dkit.metrics import emd, sample_surface_points, sdf_mae

spec = GridSpec.from_bounds(-0.5, 0.5, 64)
eps = spec.voxel_size
gt = VoxelGrid.from_function(spec, lambda p: np.linalg.norm(p, axis=1) - 0.25)

mesh = marching_cubes(gt)
print("triangles:", mesh.n_triangles, " volume:", mesh.signed_volume(), " analytic:", 4 / 3 * np.pi * 0.25**3)

# an isovalue offset grows the surface by that much
for iso in (0.0, 0.5 * eps, eps):
    r = np.linalg.norm(sample_surface_points(marching_cubes(gt, isovalue=iso), 20000), axis=1)
    print(f"iso {iso / eps:.1f} eps -> mean radius {r.mean():.5f}")

# compare against a slightly inflated prediction
pred = gt.with_values(gt.values - 0.3 * eps)
a = sample_surface_points(mesh, 10000, seed=0)
b = sample_surface_points(marching_cubes(pred), 10000, seed=1)
print(chamfer(a, b))
for t in (0.5, 1.0):
    print(f"F@{t}eps:", f_score(a, b, t * eps))
print("EMD (2000 points):", emd(a[:2000], b[:2000]))
print("SDF MAE:", sdf_mae(pred, gt, MaskGrid.full(spec)), "vs 0.3 eps =", 0.3 * eps)
