"""
The same pipeline through the command line
==========================================

Each step is one ``fus3dkit`` invocation; every output gets a manifest
with input and output hashes next to it. Run from any directory; files go
to a temporary folder.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

from fus3dkit import icosphere
from fus3dkit.io import write_mesh

work = Path(tempfile.mkdtemp(prefix="fus3dkit-"))
write_mesh(work / "sphere.obj", icosphere(0.25, subdivisions=3))


def fus3dkit(*args):
    cmd = [sys.executable, "-m", "fus3dkit", *map(str, args)]
    print("$ fus3dkit", " ".join(map(str, args)))
    subprocess.run(cmd, check=True, cwd=work)


fus3dkit("mesh-sdf", "sphere.obj", "--dims", 32, "--me-output", "me.vsdf", "--samples", 2000, "-o", "gt.vsdf")
fus3dkit("render-depth", "sphere.obj", "--n-views", 24, "-o", "views")
fus3dkit("tsdf-fuse", "views", "--dims", 32, "-o", "fused.vsdf")
fus3dkit("loss", "fused.vsdf", "gt.vsdf", "--me", "me.vsdf", "--samples", "gt.vsdf.samples.npz", "-o", "loss.json")
fus3dkit("surface", "fused.vsdf", "-o", "fused.ply")
fus3dkit("metrics", "sphere.obj", "fused.ply", "--voxel-size", 1 / 32, "-o", "metrics.json")
fus3dkit("slice", "fused.vsdf", "--axis", "x", "--mode", "eikonal", "-o", "eikonal_x.pgm")

print(json.dumps(json.loads((work / "metrics.json").read_text()), indent=1))
print("manifest keys:", sorted(json.loads((work / "fused.vsdf.manifest.json").read_text())))
print("outputs in", work)
