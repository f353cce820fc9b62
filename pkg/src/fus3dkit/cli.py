"""``fus3dkit`` command-line front end.

Every subcommand takes ``--seed`` and ``--config FILE`` (``key = value`` lines
supplying defaults for any flag) and writes ``<output>.manifest.json`` next to
its output with input and output hashes. Exit codes: 0 success, 1 usage,
2 invalid input, 3 numerical failure (a JSON diagnostic goes to stderr).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .align import camera_centers, icp_refine, umeyama_align
from .errors import EmptyResultError, NumericalError, ValidationError
from .grid import (
    GridSpec,
    MaskGrid,
    build_eikonal_mask,
    eikonal_residual,
    trilinear_sample,
)
from .lift3d import FULL_CONFIG, LiftConfig, LiftModel, canonical_embedding, synthetic_tokens, trace_shapes
from .losses import LossWeights, total_loss
from .meshsdf import carve_visible, mesh_sdf_grid, sample_near_surface
from .metrics import EMD_MAX_POINTS, chamfer, emd, f_score, sample_surface_points, sdf_mae
from .surface import marching_cubes
from .tsdf import fuse_tsdf, render_depth, sphere_cameras

log = logging.getLogger("fus3dkit")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# config files -------------------------------------------------------------------


def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if len(raw) >= 2 and raw[0] == raw[-1] == "'":
            return raw[1:-1]
        return raw


def load_config(path) -> dict:
    """Read ``key = value`` lines; ``#`` comments and ``[section]`` headers are ignored.

    Values are JSON literals when they parse as such (numbers, lists, quoted
    strings, true/false) and bare strings otherwise. Dashes in keys map to
    underscores.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _parse_value(value)
    return out


# manifests ------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _file_records(paths):
    return [{"path": str(p), "sha256": _sha256(p)} for p in paths]


def write_manifest(target, command: str, inputs, params: dict, outputs) -> Path:
    manifest = {
        "tool": "fus3dkit",
        "version": __version__,
        "command": command,
        "inputs": _file_records(inputs),
        "parameters": {k: _jsonable(v) for k, v in sorted(params.items())},
        "outputs": _file_records(outputs),
        "run": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()},
    }
    path = Path(str(target) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# helpers ----------------------------------------------------------------------------


def _spec(args) -> GridSpec:
    lo, hi = args.extent
    return GridSpec.from_bounds(lo, hi, args.dims)


def _read_grid(path):
    grid, mask = fio.read_vsdf(path)
    return grid, (mask if mask is not None else MaskGrid.full(grid.spec))


def _depth_inputs(paths):
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(q for q in p.glob("*.depth"))
        else:
            files.append(p)
    if not files:
        raise ValidationError("no depth maps given")
    return files


def _point_source(path, samples: int, seed: int):
    path = Path(path)
    if path.suffix.lower() == ".json":
        return camera_centers(fio.read_cameras(path))
    if path.suffix.lower() == ".npy":
        return np.load(path).reshape(-1, 3)
    mesh = fio.read_mesh(path)
    if samples and mesh.n_triangles:
        return sample_surface_points(mesh, samples, seed)
    return mesh.vertices


# subcommands ------------------------------------------------------------------------


def cmd_mesh_sdf(args):
    mesh = fio.read_mesh(args.mesh)
    spec = _spec(args)
    grid, mv = mesh_sdf_grid(mesh, spec, n_rays=args.n_rays, seed=args.seed)
    fio.write_vsdf(args.output, grid, mv)
    outputs = [args.output]
    if args.me_output:
        me = build_eikonal_mask(grid, args.pool_kernel, args.threshold, mv=mv)
        fio.write_vsdf(args.me_output, grid, me)
        outputs.append(args.me_output)
    if args.samples:
        samples = sample_near_surface(mesh, args.samples, args.band * spec.voxel_size, seed=args.seed)
        if args.unsigned_samples:
            samples = samples.unsigned()
        out = args.samples_output or str(args.output) + ".samples.npz"
        fio.write_samples(out, samples)
        outputs.append(out)
    return [args.mesh], outputs


def cmd_carve(args):
    mesh = fio.read_mesh(args.mesh)
    carved = carve_visible(mesh, args.epsilon, n_rays=args.n_rays, seed=args.seed)
    fio.write_mesh(args.output, carved)
    log.info("kept %d triangles", carved.n_triangles)
    return [args.mesh], [args.output]


def cmd_render_depth(args):
    mesh = fio.read_mesh(args.mesh)
    inputs = [args.mesh]
    if args.cameras:
        cams = fio.read_cameras(args.cameras)
        inputs.append(args.cameras)
    else:
        cams = sphere_cameras(args.n_views, args.radius, args.size)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for i, cam in enumerate(cams):
        p = out / f"view_{i:03d}.depth"
        fio.write_depth(p, render_depth(mesh, cam))
        outputs += [p, Path(str(p) + ".json")]
    fio.write_cameras(out / "cameras.json", cams)
    outputs.append(out / "cameras.json")
    return inputs, outputs


def cmd_tsdf_fuse(args):
    files = _depth_inputs(args.depths)
    depths = [fio.read_depth(p) for p in files]
    spec = _spec(args)
    tau = None if args.truncation is None else args.truncation * spec.voxel_size
    grid, mv = fuse_tsdf(depths, spec, truncation=tau, oversample=args.oversample)
    fio.write_vsdf(args.output, grid, mv)
    return files + [Path(str(p) + ".json") for p in files], [args.output]


def cmd_masks(args):
    grid, mv = _read_grid(args.grid)
    me = build_eikonal_mask(grid, args.pool_kernel, args.threshold, mv=mv)
    fio.write_vsdf(args.output, grid, me)
    log.info("M_E keeps %d of %d voxels", me.count, grid.spec.n_voxels)
    return [args.grid], [args.output]


def cmd_loss(args):
    pred, _ = _read_grid(args.pred)
    gt, mv = _read_grid(args.gt)
    inputs = [args.pred, args.gt]
    if args.me:
        me_grid, me = _read_grid(args.me)
        gt.spec.check_same(me_grid.spec, "eikonal mask")
        inputs.append(args.me)
    else:
        me = build_eikonal_mask(gt, mv=mv)
    surface = pred_s = None
    if args.samples:
        surface = fio.read_samples(args.samples)
        if args.unsigned_samples:
            surface = surface.unsigned()
        pred_s = trilinear_sample(pred, surface.points, clamp=True)
        inputs.append(args.samples)
    weights = LossWeights(args.lambda_s, args.lambda_c, args.lambda_g, args.lambda_e)
    report = total_loss(pred, gt, mv, me, surface, pred_s, weights)
    _write_json(args.output, report.to_dict())
    return inputs, [args.output]


def cmd_surface(args):
    grid, mask = _read_grid(args.grid)
    iso = args.isovalue + args.isovalue_eps * grid.spec.voxel_size
    mesh = marching_cubes(grid, None if args.ignore_mask else mask, iso)
    fio.write_mesh(args.output, mesh)
    log.info("extracted %d triangles at isovalue %g", mesh.n_triangles, iso)
    return [args.grid], [args.output]


def _surface_of(path):
    if Path(path).suffix.lower() == ".vsdf":
        grid, mask = _read_grid(path)
        return marching_cubes(grid, mask, 0.0), (grid, mask)
    return fio.read_mesh(path), None


def cmd_metrics(args):
    gt_mesh, gt_grid = _surface_of(args.gt)
    pred_mesh, pred_grid = _surface_of(args.pred)
    for name, m in (("gt", gt_mesh), ("pred", pred_mesh)):
        if m.n_triangles == 0:
            raise EmptyResultError(f"{name} surface is empty")
    eps = args.voxel_size
    if eps is None:
        eps = gt_grid[0].spec.voxel_size if gt_grid else 1.0 / 64
    gt_pts = sample_surface_points(gt_mesh, args.samples, args.seed)
    pred_pts = sample_surface_points(pred_mesh, args.samples, args.seed + 1)
    ch = chamfer(gt_pts, pred_pts)
    out = ch.to_dict()
    for te in args.tau_eps:
        out[f"f@{te:g}eps"] = f_score(gt_pts, pred_pts, te * eps)
    n_emd = min(args.emd_points, args.samples, EMD_MAX_POINTS)
    out["emd"] = emd(gt_pts[:n_emd], pred_pts[:n_emd]) if n_emd > 0 else None
    out["sdf_mae"] = None
    if gt_grid and pred_grid:
        out["sdf_mae"] = sdf_mae(pred_grid[0], gt_grid[0], gt_grid[1] & pred_grid[1])
    out["voxel_size"] = eps
    _write_json(args.output, out)
    return [args.gt, args.pred], [args.output]


def cmd_align(args):
    src = _point_source(args.src, 0, args.seed)
    dst = _point_source(args.dst, 0, args.seed)
    tf = umeyama_align(src, dst)
    out = {"umeyama": tf.to_dict(), "umeyama_rms": float(np.sqrt(np.mean(np.sum((tf.apply(src) - dst) ** 2, 1))))}
    inputs = [args.src, args.dst]
    if args.icp_src or args.icp_dst:
        if not (args.icp_src and args.icp_dst):
            raise UsageError("--icp-src and --icp-dst go together")
        a = _point_source(args.icp_src, args.icp_samples, args.seed)
        b = _point_source(args.icp_dst, args.icp_samples, args.seed + 1)
        res = icp_refine(a, b, tf, max_iters=args.icp_iters, tol=args.icp_tol)
        tf = res.transform
        out["icp"] = {"rms_history": res.rms_history, "iterations": res.iterations, "diverged": res.diverged}
        inputs += [args.icp_src, args.icp_dst]
    out.update(tf.to_dict())
    _write_json(args.output, out)
    outputs = [args.output]
    if args.apply:
        if not args.mesh_output:
            raise UsageError("--apply needs --mesh-output")
        fio.write_mesh(args.mesh_output, fio.read_mesh(args.apply).transformed(tf.matrix()))
        inputs.append(args.apply)
        outputs.append(args.mesh_output)
    return inputs, outputs


def cmd_lift_demo(args):
    if args.full_dry_run:
        trace = trace_shapes(FULL_CONFIG, args.n_views, args.tokens_per_view)
        _write_json(args.output, {"config": FULL_CONFIG.__dict__, "trace": [[n, list(s)] for n, s in trace]})
        return [], [args.output]
    inputs = []
    if args.tokens:
        tokens = fio.read_tokens(args.tokens)
        inputs.append(args.tokens)
        dim, stages = tokens.dim, tokens.n_stages
    else:
        dim, stages = args.dim, args.stages
    cfg = LiftConfig(
        latent_extent=args.extent,
        latent_dim=dim,
        n_stages=stages,
        n_repeats=args.repeats,
        n_heads=args.heads,
        seed=args.seed,
    )
    if not args.tokens:
        tokens = synthetic_tokens(cfg, args.n_views, args.tokens_per_view, seed=args.seed + 1)
    model = LiftModel(cfg)
    latent = model.extract(canonical_embedding(cfg), tokens)
    grid = model.decode(latent)
    fio.write_vsdf(args.output, grid)
    return inputs, [args.output]


_AXES = {"x": 0, "y": 1, "z": 2}


def _pgm(path, img8: np.ndarray) -> None:
    h, w = img8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img8, dtype=np.uint8).tobytes())


def cmd_slice(args):
    grid, mask = _read_grid(args.grid)
    axis = _AXES[args.axis]
    n = grid.spec.dims[axis]
    index = n // 2 if args.index is None else args.index
    if not 0 <= index < n:
        raise ValidationError(f"slice index {index} outside [0, {n})")
    field = eikonal_residual(grid) if args.mode == "eikonal" else grid.values
    sl = np.take(field, index, axis=axis)
    ok = np.take(mask.bits, index, axis=axis)
    vals = np.where(ok, sl, np.nan)
    lo = float(np.nanmin(vals)) if ok.any() else 0.0
    hi = float(np.nanmax(vals)) if ok.any() else 0.0
    if args.vmin is not None:
        lo = args.vmin
    if args.vmax is not None:
        hi = args.vmax
    span = hi - lo
    scaled = np.zeros_like(sl) if span <= 0 else (np.clip(sl, lo, hi) - lo) / span
    img = np.where(ok, np.rint(scaled * 255), 0).astype(np.uint8)
    out = Path(args.output)
    csv = out.with_suffix(".csv")
    side = Path(str(out) + ".json")
    _pgm(out, img)
    np.savetxt(csv, vals, fmt="%.9g", delimiter=",")
    _write_json(side, {"axis": args.axis, "index": index, "mode": args.mode, "min": lo, "max": hi,
                       "shape": list(sl.shape), "invalid": int((~ok).sum())})
    return [args.grid], [out, csv, side]


# parser -------------------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="key = value file with flag defaults")
    p.add_argument("-o", "--output", type=Path, required=True)


def _grid_flags(p, dims=64):
    p.add_argument("--dims", type=int, default=dims)
    p.add_argument("--extent", type=float, nargs=2, default=[-0.5, 0.5], metavar=("LO", "HI"))


def _mask_flags(p):
    p.add_argument("--pool-kernel", type=int, default=5)
    p.add_argument("--threshold", type=float, default=2.0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fus3dkit", description="SDF supervision, losses, surfaces and metrics.")
    ap.add_argument("--version", action="version", version=f"fus3dkit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("mesh-sdf", help="mesh to signed distance grid")
    p.add_argument("mesh", type=Path)
    _grid_flags(p)
    p.add_argument("--n-rays", type=int, default=9)
    p.add_argument("--me-output", type=Path, help="also write the Eikonal mask")
    _mask_flags(p)
    p.add_argument("--samples", type=int, default=0, help="near-surface sample count")
    p.add_argument("--band", type=float, default=2.0, help="sample band in voxels")
    p.add_argument("--samples-output", type=Path)
    p.add_argument("--unsigned-samples", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_mesh_sdf)

    p = sub.add_parser("carve", help="keep externally visible triangles")
    p.add_argument("mesh", type=Path)
    p.add_argument("--epsilon", type=float, default=1.0 / 64)
    p.add_argument("--n-rays", type=int, default=1_000_000)
    _common(p)
    p.set_defaults(func=cmd_carve)

    p = sub.add_parser("render-depth", help="render depth maps into a directory")
    p.add_argument("mesh", type=Path)
    p.add_argument("--cameras", type=Path, help="camera JSON; default is a sphere layout")
    p.add_argument("--n-views", type=int, default=24)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--size", type=int, default=128)
    _common(p)
    p.set_defaults(func=cmd_render_depth)

    p = sub.add_parser("tsdf-fuse", help="fuse depth maps into a TSDF grid")
    p.add_argument("depths", nargs="+", type=Path, help="depth files or directories")
    _grid_flags(p)
    p.add_argument("--truncation", type=float, help="in voxels (default 4)")
    p.add_argument("--oversample", type=int, default=2)
    _common(p)
    p.set_defaults(func=cmd_tsdf_fuse)

    p = sub.add_parser("masks", help="build the Eikonal mask of a grid")
    p.add_argument("grid", type=Path)
    _mask_flags(p)
    _common(p)
    p.set_defaults(func=cmd_masks)

    p = sub.add_parser("loss", help="evaluate the masked loss suite")
    p.add_argument("pred", type=Path)
    p.add_argument("gt", type=Path)
    p.add_argument("--me", type=Path, help="grid whose mask is M_E (default: built from gt)")
    p.add_argument("--samples", type=Path, help="near-surface samples (.npz)")
    p.add_argument("--unsigned-samples", action="store_true")
    for name in ("s", "c", "g", "e"):
        p.add_argument(f"--lambda-{name}", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("surface", help="marching cubes at an isovalue")
    p.add_argument("grid", type=Path)
    p.add_argument("--isovalue", type=float, default=0.0)
    p.add_argument("--isovalue-eps", type=float, default=0.0, help="extra offset in voxels")
    p.add_argument("--ignore-mask", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("metrics", help="Chamfer, F-score, EMD and SDF MAE")
    p.add_argument("gt", type=Path, help="mesh or .vsdf grid")
    p.add_argument("pred", type=Path, help="mesh or .vsdf grid")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--tau-eps", type=float, nargs="+", default=[0.5, 1.0])
    p.add_argument("--voxel-size", type=float, help="default: gt grid voxel or 1/64")
    p.add_argument("--emd-points", type=int, default=EMD_MAX_POINTS)
    _common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("align", help="similarity from camera centres, optional ICP")
    p.add_argument("src", type=Path, help="camera JSON, mesh or .npy points")
    p.add_argument("dst", type=Path)
    p.add_argument("--icp-src", type=Path)
    p.add_argument("--icp-dst", type=Path)
    p.add_argument("--icp-samples", type=int, default=5000)
    p.add_argument("--icp-iters", type=int, default=50)
    p.add_argument("--icp-tol", type=float, default=1e-12)
    p.add_argument("--apply", type=Path, help="mesh to transform")
    p.add_argument("--mesh-output", type=Path)
    _common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("lift-demo", help="run the volumetric lifting forward pass")
    p.add_argument("--tokens", type=Path, help="TOKS1 file; default synthetic")
    p.add_argument("--n-views", type=int, default=2)
    p.add_argument("--tokens-per-view", type=int, default=16)
    p.add_argument("--extent", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--full-dry-run", action="store_true", help="shape trace at full size, no compute")
    _common(p)
    p.set_defaults(func=cmd_lift_demo)

    p = sub.add_parser("slice", help="export an axis-aligned slice as PGM + CSV")
    p.add_argument("grid", type=Path)
    p.add_argument("--axis", choices=sorted(_AXES), default="x")
    p.add_argument("--index", type=int)
    p.add_argument("--mode", choices=["values", "eikonal"], default="values")
    p.add_argument("--vmin", type=float)
    p.add_argument("--vmax", type=float)
    _common(p)
    p.set_defaults(func=cmd_slice)
    return ap


def _parse(argv):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config is None:
        return args
    cfg = load_config(args.config)
    sub = ap._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    bad = sorted(k for k in cfg if k not in known or k in ("config", "output", "func"))
    if bad:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(bad)}")
    sub.set_defaults(**cfg)
    return ap.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    params = {k: v for k, v in vars(args).items() if k not in ("func", "verbose", "command")}
    try:
        inputs, outputs = args.func(args)
        inputs = list(inputs) + ([args.config] if args.config else [])
        write_manifest(args.output, args.command, inputs, params, outputs)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(diag), file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(diag), file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main() -> None:
    sys.exit(run())
