"""Ray/triangle and point/triangle kernels with 2D-binned candidate search.

Every batch of rays handled here shares a projection: parallel rays (sign
voting, carving) project along their common direction, pinhole rays project
through the camera. Triangles are binned by their projected bounding boxes, so
each ray only meets the triangles whose footprint covers it.
"""

from __future__ import annotations

import numpy as np

# Barycentric margin under which a hit is treated as touching an edge or vertex.
EDGE_TOL = 1e-9
_DET_TOL = 1e-14


def moller_trumbore(origins, dirs, a, b, c):
    """Pairwise ray/triangle intersection.

    All inputs are ``(N, 3)`` arrays of matching length. Returns ``(t, u, v,
    det)``; a hit requires ``|det| > 0``, ``u, v >= 0``, ``u + v <= 1`` along
    with the caller's ``t`` condition.
    """
    e1 = b - a
    e2 = c - a
    pvec = np.cross(dirs, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    safe = np.where(np.abs(det) > _DET_TOL, det, 1.0)
    inv = 1.0 / safe
    tvec = origins - a
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,ij->i", dirs, qvec) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    return t, u, v, det


def classify_hits(u, v, det, tol: float = EDGE_TOL):
    """Split intersections into clean hits and edge/vertex grazes."""
    w = 1.0 - u - v
    m = np.minimum(np.minimum(u, v), w)
    degenerate = np.abs(det) <= _DET_TOL
    hit = (~degenerate) & (m > tol)
    graze = (~degenerate) & (np.abs(m) <= tol)
    return hit, graze


def plane_basis(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return np.stack([e1, e2])


def bin_candidates(query_uv, tri_lo, tri_hi, cell: float | None = None):
    """Pairs ``(query, triangle)`` whose query lies in the triangle's 2D box.

    ``tri_lo``/``tri_hi`` are per-triangle box corners; boxes may be infinite
    in which case the triangle is paired with every query. Pairs come back
    sorted by query index.
    """
    q = np.asarray(query_uv, dtype=np.float64)
    lo = np.asarray(tri_lo, dtype=np.float64)
    hi = np.asarray(tri_hi, dtype=np.float64)
    nq, nt = len(q), len(lo)
    if nq == 0 or nt == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    wild = ~np.all(np.isfinite(lo) & np.isfinite(hi), axis=1)
    tame = np.flatnonzero(~wild)
    qi_parts, ti_parts = [], []

    if tame.size:
        tlo, thi = lo[tame], hi[tame]
        origin = np.minimum(q.min(axis=0), tlo.min(axis=0))
        span = np.maximum(q.max(axis=0), thi.max(axis=0)) - origin
        if cell is None:
            ext = np.median(np.max(thi - tlo, axis=1))
            cell = max(float(ext), float(span.max()) / 4096.0, 1e-12)
        ncell = np.floor(span / cell).astype(np.int64) + 1
        c0 = np.floor((tlo - origin) / cell).astype(np.int64)
        c1 = np.minimum(np.floor((thi - origin) / cell).astype(np.int64), ncell - 1)
        nx = c1[:, 0] - c0[:, 0] + 1
        ny = c1[:, 1] - c0[:, 1] + 1
        cnt = nx * ny
        owner = np.repeat(np.arange(len(tame)), cnt)
        local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        cx = c0[owner, 0] + local % nx[owner]
        cy = c0[owner, 1] + local // nx[owner]
        cid = cx * ncell[1] + cy
        order = np.argsort(cid, kind="stable")
        cid, owner = cid[order], owner[order]
        keys, starts, counts = np.unique(cid, return_index=True, return_counts=True)

        qc = np.floor((q - origin) / cell).astype(np.int64)
        inside = np.all((qc >= 0) & (qc < ncell), axis=1)
        qkey = qc[:, 0] * ncell[1] + qc[:, 1]
        pos = np.searchsorted(keys, qkey)
        pos_c = np.minimum(pos, len(keys) - 1)
        found = inside & (keys[pos_c] == qkey)
        qn = np.where(found, counts[pos_c], 0)
        qi = np.repeat(np.arange(nq), qn)
        off = np.arange(qn.sum()) - np.repeat(np.cumsum(qn) - qn, qn)
        ti = tame[owner[np.repeat(starts[pos_c], qn) + off]]
        keep = np.all((q[qi] >= lo[ti]) & (q[qi] <= hi[ti]), axis=1)
        qi_parts.append(qi[keep])
        ti_parts.append(ti[keep])

    if wild.any():
        w = np.flatnonzero(wild)
        qi_parts.append(np.repeat(np.arange(nq), len(w)))
        ti_parts.append(np.tile(w, nq))

    qi = np.concatenate(qi_parts)
    ti = np.concatenate(ti_parts)
    order = np.argsort(qi, kind="stable")
    return qi[order], ti[order]


def _boxes(uv_corners, margin: float):
    lo = uv_corners.min(axis=1)
    hi = uv_corners.max(axis=1)
    scale = np.maximum(np.abs(lo), np.abs(hi)).max(axis=1, keepdims=True)
    pad = margin * np.maximum(scale, 1.0) + (hi - lo).max(axis=1, keepdims=True) * margin
    return lo - pad, hi + pad


def parallel_candidates(points, direction, corners, margin: float = 1e-7):
    """Candidates for rays ``points + t * direction`` against ``(T, 3, 3)`` corners."""
    basis = plane_basis(direction)
    quv = np.asarray(points) @ basis.T
    tuv = np.einsum("tkc,dc->tkd", corners, basis)
    lo, hi = _boxes(tuv, margin)
    return bin_candidates(quv, lo, hi)


def pinhole_candidates(pixel_uv, corners_cam, fx, fy, cx, cy, near: float = 1e-9, margin: float = 1e-6):
    """Candidates for pinhole rays through ``pixel_uv`` against camera-frame corners."""
    z = corners_cam[:, :, 2]
    front = np.all(z > near, axis=1)
    behind = np.all(z <= near, axis=1)
    straddle = ~front & ~behind
    zs = np.where(z > near, z, 1.0)
    uv = np.stack(
        [fx * corners_cam[:, :, 0] / zs + cx, fy * corners_cam[:, :, 1] / zs + cy], axis=2
    )
    lo, hi = _boxes(uv, margin)
    lo = np.where(straddle[:, None], -np.inf, lo)
    hi = np.where(straddle[:, None], np.inf, hi)
    keep = np.flatnonzero(~behind)
    qi, ti = bin_candidates(pixel_uv, lo[keep], hi[keep])
    return qi, keep[ti]


def closest_point_sq_dist(p, a, b, c) -> np.ndarray:
    """Squared distance from each ``p`` to triangle ``(a, b, c)``, pairwise.

    Voronoi-region walk of the closest-point query (Ericson, Real-Time
    Collision Detection, 5.1.5), vectorised with region priorities.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def ratio(num, den):
        return num / np.where(den != 0, den, 1.0)

    r_a = (d1 <= 0) & (d2 <= 0)
    r_b = (d3 >= 0) & (d4 <= d3)
    r_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    r_c = (d6 >= 0) & (d5 <= d6)
    r_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    r_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    s_ab = ratio(d1, d1 - d3)[:, None]
    s_ac = ratio(d2, d2 - d6)[:, None]
    s_bc = ratio(d4 - d3, (d4 - d3) + (d5 - d6))[:, None]
    den = va + vb + vc
    v_in = ratio(vb, den)[:, None]
    w_in = ratio(vc, den)[:, None]

    q = a + ab * v_in + ac * w_in
    q = np.where(r_bc[:, None], b + (c - b) * s_bc, q)
    q = np.where(r_ac[:, None], a + ac * s_ac, q)
    q = np.where(r_c[:, None], c, q)
    q = np.where(r_ab[:, None], a + ab * s_ab, q)
    q = np.where(r_b[:, None], b, q)
    q = np.where(r_a[:, None], a, q)
    diff = p - q
    return np.einsum("ij,ij->i", diff, diff)
