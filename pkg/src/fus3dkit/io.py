"""Readers and writers for every on-disk format the package exchanges.

* ``VSDF1`` grids: magic ``VSDF``, ``u8`` version 1, ``u32 dims[3]``,
  ``f32 origin[3]``, ``f32 voxel_size``, ``u8 has_mask``, then ``f32`` values
  (last axis fastest) and, if ``has_mask``, one byte per voxel.
* ``TOKS1`` token files: magic ``TOKS``, ``u8`` version 1, ``u32`` n_stages,
  n_views, tokens_per_view, dim, then ``f32`` data ordered
  stage, view, token, dim.
* Meshes as ASCII OBJ or binary little-endian PLY. Normals in files are
  ignored.
* Depth maps as a raw ``f32`` raster with a JSON camera sidecar; cameras alone
  use the same JSON record (or a list of them).

All binary data is little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .grid import GridSpec, MaskGrid, VoxelGrid
from .lift3d import TokenSet
from .mesh import TriangleMesh
from .meshsdf import SurfaceSamples
from .tsdf import Camera, DepthMap

__all__ = [
    "write_vsdf",
    "read_vsdf",
    "write_tokens",
    "read_tokens",
    "read_mesh",
    "write_mesh",
    "read_obj",
    "write_obj",
    "read_ply",
    "write_ply",
    "write_depth",
    "read_depth",
    "write_cameras",
    "read_cameras",
    "write_samples",
    "read_samples",
]

_VSDF_HEAD = struct.Struct("<4sB3I3ffB")
_TOKS_HEAD = struct.Struct("<4sB4I")


def write_vsdf(path, grid: VoxelGrid, mask: MaskGrid | None = None) -> None:
    spec = grid.spec
    if mask is not None:
        spec.check_same(mask.spec, "mask")
    head = _VSDF_HEAD.pack(b"VSDF", 1, *spec.dims, *spec.origin, spec.voxel_size, int(mask is not None))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())
        if mask is not None:
            fh.write(np.ascontiguousarray(mask.bits, dtype=np.uint8).tobytes())


def read_vsdf(path) -> tuple[VoxelGrid, MaskGrid | None]:
    data = Path(path).read_bytes()
    if len(data) < _VSDF_HEAD.size:
        raise FormatError(f"{path}: truncated VSDF header")
    magic, version, nx, ny, nz, ox, oy, oz, eps, has_mask = _VSDF_HEAD.unpack_from(data)
    if magic != b"VSDF" or version != 1:
        raise FormatError(f"{path}: not a VSDF1 file")
    spec = GridSpec((ox, oy, oz), (nx, ny, nz), eps)
    n = spec.n_voxels
    expect = _VSDF_HEAD.size + 4 * n + (n if has_mask else 0)
    if len(data) != expect:
        raise FormatError(f"{path}: expected {expect} bytes, found {len(data)}")
    off = _VSDF_HEAD.size
    values = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float64)
    grid = VoxelGrid(spec, values.reshape(spec.dims))
    mask = None
    if has_mask:
        bits = np.frombuffer(data, dtype=np.uint8, count=n, offset=off + 4 * n)
        mask = MaskGrid(spec, bits.reshape(spec.dims) != 0)
    return grid, mask


def write_tokens(path, tokens: TokenSet) -> None:
    shapes = {s.shape for s in tokens.stages}
    if len(shapes) != 1:
        raise FormatError("TOKS1 needs the same (views, tokens, dim) for every stage")
    v, p, d = shapes.pop()
    with open(path, "wb") as fh:
        fh.write(_TOKS_HEAD.pack(b"TOKS", 1, tokens.n_stages, v, p, d))
        fh.write(np.ascontiguousarray(np.stack(tokens.stages), dtype="<f4").tobytes())


def read_tokens(path) -> TokenSet:
    data = Path(path).read_bytes()
    if len(data) < _TOKS_HEAD.size:
        raise FormatError(f"{path}: truncated TOKS header")
    magic, version, s, v, p, d = _TOKS_HEAD.unpack_from(data)
    if magic != b"TOKS" or version != 1:
        raise FormatError(f"{path}: not a TOKS1 file")
    n = s * v * p * d
    if len(data) != _TOKS_HEAD.size + 4 * n:
        raise FormatError(f"{path}: payload size does not match header")
    arr = np.frombuffer(data, dtype="<f4", count=n, offset=_TOKS_HEAD.size).astype(np.float64)
    arr = arr.reshape(s, v, p, d)
    return TokenSet(tuple(arr[i] for i in range(s)))


# meshes ---------------------------------------------------------------------


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise ValueError("vertex needs three coordinates")
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                    faces += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    if not verts:
        raise FormatError(f"{path}: no vertices")
    return TriangleMesh.from_arrays(np.asarray(verts), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write("v %.17g %.17g %.17g\n" % tuple(v))
        for f in mesh.triangles + 1:
            fh.write("f %d %d %d\n" % tuple(f))


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(fh, path):
    if fh.readline().strip() != b"ply":
        raise FormatError(f"{path}: missing ply magic")
    elements = []
    fmt = None
    while True:
        line = fh.readline()
        if not line:
            raise FormatError(f"{path}: unterminated header")
        parts = line.decode("ascii", "replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", parts[2], parts[3])))
            else:
                elements[-1][2].append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
    if fmt != "binary_little_endian":
        raise FormatError(f"{path}: only binary_little_endian PLY is supported, got {fmt}")
    return elements


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        elements = _ply_header(fh, path)
        body = fh.read()
    off = 0
    verts = None
    faces = np.zeros((0, 3), dtype=np.int64)
    for name, count, props in elements:
        if all(not isinstance(t, tuple) for _, t in props):
            dt = np.dtype([(p, "<" + _PLY_TYPES[t]) for p, t in props])
            arr = np.frombuffer(body, dtype=dt, count=count, offset=off)
            off += dt.itemsize * count
            if name == "vertex":
                verts = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
            continue
        # element with list properties: walk records
        tris = []
        for _ in range(count):
            for pname, t in props:
                if isinstance(t, tuple):
                    cdt = np.dtype("<" + _PLY_TYPES[t[1]])
                    idt = np.dtype("<" + _PLY_TYPES[t[2]])
                    n = int(np.frombuffer(body, cdt, 1, off)[0])
                    off += cdt.itemsize
                    vals = np.frombuffer(body, idt, n, off).astype(np.int64)
                    off += idt.itemsize * n
                    if name == "face" and pname in ("vertex_indices", "vertex_index"):
                        tris += [(vals[0], vals[k], vals[k + 1]) for k in range(1, n - 1)]
                else:
                    off += np.dtype(_PLY_TYPES[t]).itemsize
        if name == "face":
            faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if verts is None:
        raise FormatError(f"{path}: no vertex element")
    return TriangleMesh.from_arrays(verts, faces)


def write_ply(path, mesh: TriangleMesh) -> None:
    head = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_dt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.empty(mesh.n_triangles, dtype=face_dt)
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f4").tobytes())
        fh.write(faces.tobytes())


def read_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply(path)
    raise FormatError(f"{path}: unknown mesh format {suffix!r}")


def write_mesh(path, mesh: TriangleMesh) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(path, mesh)
    elif suffix == ".ply":
        write_ply(path, mesh)
    else:
        raise FormatError(f"{path}: unknown mesh format {suffix!r}")


# depth and cameras -------------------------------------------------------------


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_depth(path, depth: DepthMap) -> None:
    Path(path).write_bytes(np.ascontiguousarray(depth.depth, dtype="<f4").tobytes())
    _sidecar(path).write_text(json.dumps(depth.camera.to_dict(), indent=2) + "\n")


def read_depth(path) -> DepthMap:
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing camera sidecar {side.name}")
    cam = Camera.from_dict(json.loads(side.read_text()))
    raw = Path(path).read_bytes()
    if len(raw) != 4 * cam.width * cam.height:
        raise FormatError(f"{path}: raster size does not match {cam.width}x{cam.height}")
    d = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(cam.height, cam.width)
    return DepthMap(cam, d)


def write_cameras(path, cameras) -> None:
    rec = [c.to_dict() for c in cameras] if isinstance(cameras, (list, tuple)) else cameras.to_dict()
    Path(path).write_text(json.dumps(rec, indent=2) + "\n")


def read_cameras(path) -> list[Camera]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise FormatError(f"{path}: expected a camera record or a list of them")
    return [Camera.from_dict(d) for d in data]


def write_samples(path, samples: SurfaceSamples) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, points=samples.points, gt_sdf=samples.gt_sdf, signed=np.array(samples.signed))


def read_samples(path) -> SurfaceSamples:
    with np.load(path) as z:
        try:
            return SurfaceSamples(z["points"], z["gt_sdf"], bool(z["signed"]))
        except KeyError as exc:
            raise FormatError(f"{path}: missing array {exc}") from exc
