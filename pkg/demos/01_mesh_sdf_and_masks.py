"""
Signed distance grid from a mesh, and the masks that go with it
===============================================================

Builds a 32^3 SDF of an icosphere, then breaks one voxel's sign on purpose
to show what the Eikonal mask throws away.
"""

import numpy as np

from fus3dkit import GridSpec, build_eikonal_mask, icosphere, mesh_sdf_grid
from fus3dkit.grid import eikonal_residual
from fus3dkit.meshsdf import sample_near_surface

mesh = icosphere(0.25, subdivisions=3)
spec = GridSpec.from_bounds(-0.5, 0.5, 32)
grid, mv = mesh_sdf_grid(mesh, spec)

rho = np.linalg.norm(spec.centers(), axis=1).reshape(spec.dims)
print("triangles:", mesh.n_triangles)
print("max |sdf - analytic|:", np.abs(grid.values - (rho - 0.25)).max())

# the gradient norm stays near one away from the centre kink
res = eikonal_residual(grid)
print("median |grad f|:", np.median(res), " max:", res.max())

me = build_eikonal_mask(grid, mv=mv)
print("M_E keeps", me.count, "of", spec.n_voxels)

v = grid.values.copy()
v[5, 16, 16] *= -1
broken = grid.with_values(v)
me2 = build_eikonal_mask(broken, mv=mv)
print("after one sign flip, M_E keeps", me2.count)
print("excluded box:", np.argwhere(me.bits & ~me2.bits).min(0), "to", np.argwhere(me.bits & ~me2.bits).max(0))

samples = sample_near_surface(mesh, 1000, band=2 * spec.voxel_size, seed=0)
print("near-surface samples, |gt| max:", np.abs(samples.gt_sdf).max())
