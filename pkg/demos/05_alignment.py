"""
Registering cameras, then refining with ICP
"""

import numpy as np
from scipy.spatial.transform import Rotation

from fus3dkit import icosphere, icp_refine, umeyama_align
from fus3dkit.align import SimilarityTransform, camera_centers
from fus3dkit.metrics import sample_surface_points
from fus3dkit.tsdf import sphere_cameras

rng = np.random.default_rng(3)
truth = SimilarityTransform(1.7, Rotation.random(random_state=3).as_matrix(), [0.2, -0.1, 0.4])

gt_centres = camera_centers(sphere_cameras(10))
noisy = truth.apply(gt_centres) + rng.normal(scale=1e-3, size=gt_centres.shape)
tf = umeyama_align(noisy, gt_centres)
print("recovered scale:", 1 / tf.scale, "(true 1.7)")

# a small leftover rigid error between the two reconstructions
mesh = icosphere(0.25, subdivisions=3)
src = sample_surface_points(mesh, 3000, seed=0) * [1.0, 0.8, 0.6]
off = Rotation.from_rotvec(np.deg2rad([3.0, -2.0, 4.0])).as_matrix()
dst = src @ off.T + 0.02
res = icp_refine(src, dst, max_iters=50)
print("ICP iterations:", res.iterations, " final RMS:", res.rms)
print("RMS history:", np.array(res.rms_history[:6]))
