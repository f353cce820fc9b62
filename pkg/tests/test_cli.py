import json

import numpy as np
import pytest

from fus3dkit import io as fio
from fus3dkit.cli import load_config, run
from fus3dkit.grid import GridSpec, VoxelGrid
from fus3dkit.lift3d import LiftConfig, synthetic_tokens


@pytest.fixture(scope="module")
def work(tmp_path_factory, sphere_mesh, cube):
    d = tmp_path_factory.mktemp("cli")
    fio.write_mesh(d / "sphere.obj", sphere_mesh)
    fio.write_mesh(d / "cube.obj", cube)
    assert run(["mesh-sdf", str(d / "sphere.obj"), "--dims", "24", "-o", str(d / "sphere.vsdf"),
                "--me-output", str(d / "me.vsdf"), "--samples", "200"]) == 0
    return d


def _json(p):
    return json.loads(p.read_text())


def _manifest(p):
    m = json.loads((p.parent / (p.name + ".manifest.json")).read_text())
    m.pop("run")
    return m


@pytest.mark.parametrize("dims,centre", [(33, -0.5), (32, -(0.5 - 0.5 / 32))])
def test_mesh_sdf_cube_centre(work, dims, centre):
    out = work / f"cube{dims}.vsdf"
    assert run(["mesh-sdf", str(work / "cube.obj"), "--dims", str(dims), "--extent", "-0.5", "0.5", "-o", str(out)]) == 0
    grid, mask = fio.read_vsdf(out)
    assert grid.values[(dims // 2,) * 3] == pytest.approx(centre, abs=1e-7)
    assert mask.bits.all()


def test_mesh_sdf_outputs_and_manifest(work):
    out = work / "sphere.vsdf"
    m = json.loads((work / "sphere.vsdf.manifest.json").read_text())
    assert m["command"] == "mesh-sdf"
    assert set(m) == {"tool", "version", "command", "inputs", "parameters", "outputs", "run"}
    assert {o["path"] for o in m["outputs"]} == {str(out), str(work / "me.vsdf"), str(out) + ".samples.npz"}
    assert all(len(o["sha256"]) == 64 for o in m["inputs"] + m["outputs"])
    assert m["parameters"]["dims"] == 24 and m["parameters"]["seed"] == 0
    s = fio.read_samples(str(out) + ".samples.npz")
    assert len(s.points) == 200 and s.signed
    _, me = fio.read_vsdf(work / "me.vsdf")
    assert me is not None


def test_byte_identical_reruns(work):
    outs = []
    for i in range(2):
        out = work / f"rerun{i}.vsdf"
        assert run(["mesh-sdf", str(work / "sphere.obj"), "--dims", "16", "--seed", "3", "-o", str(out)]) == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    a, b = _manifest(outs[0]), _manifest(outs[1])
    assert a["outputs"][0]["sha256"] == b["outputs"][0]["sha256"]
    a.pop("outputs"), b.pop("outputs")
    a["parameters"].pop("output"), b["parameters"].pop("output")
    assert a == b


def test_masks_and_surface(work):
    assert run(["masks", str(work / "sphere.vsdf"), "-o", str(work / "m2.vsdf")]) == 0
    _, me = fio.read_vsdf(work / "m2.vsdf")
    _, me_direct = fio.read_vsdf(work / "me.vsdf")
    assert np.array_equal(me.bits, me_direct.bits)
    assert run(["surface", str(work / "sphere.vsdf"), "-o", str(work / "s.ply")]) == 0
    mesh = fio.read_mesh(work / "s.ply")
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(r.mean() - 0.25) < 1 / 24


def test_loss_json(work):
    assert run(["loss", str(work / "sphere.vsdf"), str(work / "sphere.vsdf"),
                "--samples", str(work / "sphere.vsdf.samples.npz"), "-o", str(work / "loss.json")]) == 0
    rep = _json(work / "loss.json")
    assert rep["l_sdf_grid"] == 0.0 and rep["l_grad"] == 0.0
    assert rep["total"] == pytest.approx(rep["l_sdf_surface"] + rep["l_eik"])
    assert rep["counts"]["surface"] == 200


def test_metrics_keys(work, sphere_mesh):
    fio.write_mesh(work / "sphere2.obj", sphere_mesh.transformed(np.diag([1.01, 1.01, 1.01, 1.0])))
    out = work / "metrics.json"
    assert run(["metrics", str(work / "sphere.obj"), str(work / "sphere2.obj"), "--samples", "2000",
                "--tau-eps", "0.5", "1.0", "-o", str(out)]) == 0
    m = _json(out)
    assert {"cd", "d_gt2p", "d_p2gt", "f@0.5eps", "f@1eps", "emd", "sdf_mae"} <= set(m)
    assert m["f@0.5eps"] <= m["f@1eps"]
    assert m["sdf_mae"] is None
    out = work / "metrics_grid.json"
    assert run(["metrics", str(work / "sphere.vsdf"), str(work / "sphere.vsdf"), "--samples", "500",
                "-o", str(out)]) == 0
    m = _json(out)
    assert m["sdf_mae"] == 0.0 and m["voxel_size"] == pytest.approx(1 / 24)


def test_render_fuse_roundtrip(work):
    views = work / "views"
    assert run(["render-depth", str(work / "sphere.obj"), "--n-views", "6", "--size", "48", "-o", str(views)]) == 0
    assert len(list(views.glob("*.depth"))) == 6
    assert len(fio.read_cameras(views / "cameras.json")) == 6
    out = work / "fused.vsdf"
    assert run(["tsdf-fuse", str(views), "--dims", "24", "-o", str(out)]) == 0
    grid, mv = fio.read_vsdf(out)
    assert mv.bits.any()
    assert np.abs(grid.values).max() <= 4 / 24 + 1e-6


def test_carve_and_align(work, sphere_mesh):
    assert run(["carve", str(work / "sphere.obj"), "--epsilon", "0.05", "--n-rays", "20000",
                "-o", str(work / "carved.obj")]) == 0
    assert fio.read_mesh(work / "carved.obj").n_triangles == sphere_mesh.n_triangles
    views = work / "views_align"
    assert run(["render-depth", str(work / "sphere.obj"), "--n-views", "8", "--size", "8", "-o", str(views)]) == 0
    centres = np.stack([c.center for c in fio.read_cameras(views / "cameras.json")])
    np.save(work / "moved.npy", 1.5 * centres + [0.1, 0.2, 0.3])
    out = work / "align.json"
    assert run(["align", str(views / "cameras.json"), str(work / "moved.npy"), "--apply",
                str(work / "sphere.obj"), "--mesh-output", str(work / "moved.obj"), "-o", str(out)]) == 0
    rec = _json(out)
    assert rec["scale"] == pytest.approx(1.5)
    assert rec["umeyama_rms"] < 1e-9
    moved = fio.read_mesh(work / "moved.obj")
    np.testing.assert_allclose(moved.vertices, 1.5 * sphere_mesh.vertices + [0.1, 0.2, 0.3], atol=1e-9)


def test_lift_demo(work):
    out = work / "lift.vsdf"
    assert run(["lift-demo", "-o", str(out)]) == 0
    grid, _ = fio.read_vsdf(out)
    assert grid.spec.dims == (16, 16, 16)
    dry = work / "trace.json"
    assert run(["lift-demo", "--full-dry-run", "-o", str(dry)]) == 0
    trace = _json(dry)["trace"]
    assert trace[0] == ["embedding", [4096, 2048]] and trace[-1] == ["sdf", [64, 64, 64]]


def test_lift_demo_from_token_file(work):
    fio.write_tokens(work / "t.toks", synthetic_tokens(LiftConfig(latent_dim=16, n_heads=2), 3, 5))
    assert run(["lift-demo", "--tokens", str(work / "t.toks"), "--heads", "2", "-o", str(work / "lt.vsdf")]) == 0


def test_slice_eikonal(work):
    out = work / "slice.pgm"
    assert run(["slice", str(work / "sphere.vsdf"), "--axis", "x", "--mode", "eikonal", "-o", str(out)]) == 0
    raw = out.read_bytes()
    assert raw.startswith(b"P5\n24 24\n255\n")
    assert len(raw) == len(b"P5\n24 24\n255\n") + 24 * 24
    vals = np.loadtxt(work / "slice.csv", delimiter=",")
    side = _json(work / "slice.pgm.json")
    assert side["index"] == 12 and side["mode"] == "eikonal"
    assert side["min"] == pytest.approx(np.nanmin(vals), rel=1e-8)
    # the slice holds gradient norms, which cluster at one
    assert np.nanmedian(vals) == pytest.approx(1.0, abs=0.05)


def test_usage_errors(work, capsys):
    assert run(["bogus"]) == 1
    assert run(["mesh-sdf", str(work / "cube.obj")]) == 1
    assert run(["--version"]) == 0
    capsys.readouterr()


def test_input_error_exit_2(work, capsys):
    assert run(["mesh-sdf", str(work / "missing.obj"), "-o", str(work / "x.vsdf")]) == 2
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["command"] == "mesh-sdf"
    assert run(["slice", str(work / "sphere.vsdf"), "--index", "99", "-o", str(work / "x.pgm")]) == 2


def test_numerical_error_exit_3(work, capsys):
    spec = GridSpec.from_bounds(-0.5, 0.5, 8)
    fio.write_vsdf(work / "flat.vsdf", VoxelGrid(spec, np.ones(spec.dims)))
    assert run(["metrics", str(work / "flat.vsdf"), str(work / "sphere.obj"), "-o", str(work / "e.json")]) == 3
    diag = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert diag["error"] == "EmptyResultError"
    line = np.outer(np.arange(4.0), [1, 1, 1])
    np.save(work / "line.npy", line)
    assert run(["align", str(work / "line.npy"), str(work / "line.npy"), "-o", str(work / "a.json")]) == 3


def test_config_file(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# grid size\n[mesh-sdf]\ndims = 10\nextent = [-1.0, 1.0]\nn-rays = 3\n")
    assert load_config(cfg) == {"dims": 10, "extent": [-1.0, 1.0], "n_rays": 3}
    out = tmp_path / "c.vsdf"
    assert run(["mesh-sdf", str(work / "cube.obj"), "--config", str(cfg), "-o", str(out)]) == 0
    grid, _ = fio.read_vsdf(out)
    assert grid.spec.dims == (10, 10, 10) and grid.spec.voxel_size == pytest.approx(0.2)
    # explicit flags beat the file
    assert run(["mesh-sdf", str(work / "cube.obj"), "--config", str(cfg), "--dims", "6", "-o", str(out)]) == 0
    assert fio.read_vsdf(out)[0].spec.dims == (6, 6, 6)
    m = json.loads((tmp_path / "c.vsdf.manifest.json").read_text())
    assert str(cfg) in {i["path"] for i in m["inputs"]}
    cfg.write_text("nope = 1\n")
    assert run(["mesh-sdf", str(work / "cube.obj"), "--config", str(cfg), "-o", str(out)]) == 1
