"""
The masked loss suite on a perturbed sphere
"""

import numpy as np

from fus3dkit import GridSpec, LossWeights, MaskGrid, build_eikonal_mask, total_loss
from fus3dkit.grid import VoxelGrid, trilinear_sample
from fus3dkit.meshsdf import SurfaceSamples

spec = GridSpec.from_bounds(-0.5, 0.5, 32)
gt = VoxelGrid.from_function(spec, lambda p: np.linalg.norm(p, axis=1) - 0.25)
mv = MaskGrid.full(spec)
me = build_eikonal_mask(gt, mv=mv)

rng = np.random.default_rng(0)
pts = rng.normal(size=(500, 3))
pts = 0.25 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
surface = SurfaceSamples(pts, np.zeros(len(pts)), signed=True)

for noise in (0.0, 1e-3, 1e-2):
    pred = gt.with_values(gt.values + noise * rng.normal(size=spec.dims))
    rep = total_loss(pred, gt, mv, me, surface, trilinear_sample(pred, pts))
    print(f"noise {noise:g}:", {k: round(v, 6) for k, v in rep.to_dict().items() if k != "counts"})

# a flipped prediction only costs something where the sign is trusted
flipped = gt.with_values(-gt.values)
print("flipped, M_E from gt:", total_loss(flipped, gt, mv, me).l_sdf_grid)
print("flipped, empty M_E:  ", total_loss(flipped, gt, mv, MaskGrid.full(spec, False)).l_sdf_grid)

w = LossWeights(lambda_s=0.0, lambda_c=1.0, lambda_g=0.5, lambda_e=0.1)
print("custom weights total:", total_loss(flipped, gt, mv, me, weights=w).total)
