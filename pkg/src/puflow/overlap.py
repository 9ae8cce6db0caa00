"""Geometric coupling of a background and an embedded mesh.

The pipeline finds candidate element pairs with a uniform bin grid,
intersects each pair by half-plane clipping (a triangle against a
triangle gives a convex polygon with at most six vertices), fans each
polygon into at most four integration sub-triangles and stores, per
quadrature point, the physical position together with barycentric
coordinates in both parent elements. The resulting tertiary mesh is used
for integration only.
"""

import numpy as np

from .mesh import MeshError
from .quadrature import rule as quad_rule

#: relative area below which an intersection polygon is discarded
EPS_GEO = 1e-10
#: vertex merge tolerance, relative to the local diameter
SNAP_REL = 1e-12

OUTSIDE, CUT, COVERED = 0, 1, 2


class OverlapError(Exception):
    pass


def _cross(o, a, b):
    return ((a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1])
            - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0]))


def polygon_areas(poly, cnt):
    """Shoelace area of padded CCW polygons (n, W, 2) with counts (n,)."""
    n, W, _ = poly.shape
    area = np.zeros(n)
    x = poly[..., 0]
    y = poly[..., 1]
    for i in range(W):
        j_valid = i < cnt
        nxt = np.where(i + 1 < cnt, i + 1, 0)
        rows = np.nonzero(j_valid)[0]
        area[rows] += (x[rows, i] * y[rows, nxt[rows]]
                       - x[rows, nxt[rows]] * y[rows, i])
    return 0.5 * area


def clip_triangles_batch(tris_a, tris_b):
    """Intersect triangle pairs: (n,3,2) x (n,3,2) -> padded polygons.

    Returns ``(poly, cnt)`` where ``poly`` has shape (n, 8, 2) and
    ``cnt[k]`` is 0 (no overlap) or in 3..6. Inputs must be CCW;
    vertices closer than the snap tolerance are merged and slivers of
    relative area below ``EPS_GEO`` are emptied.
    """
    tris_a = np.asarray(tris_a, dtype=float)
    tris_b = np.asarray(tris_b, dtype=float)
    n = len(tris_a)
    W = 8
    poly = np.zeros((n, W, 2))
    poly[:, :3] = tris_a
    cnt = np.full(n, 3, dtype=np.int64)

    diam_a = tris_a.max(axis=1) - tris_a.min(axis=1)
    diam_b = tris_b.max(axis=1) - tris_b.min(axis=1)
    diam = np.maximum(np.linalg.norm(diam_a, axis=1),
                      np.linalg.norm(diam_b, axis=1))
    eps = 1e-14 * diam * diam   # absolute tolerance on cross products

    for e in range(3):
        p1 = tris_b[:, e]
        p2 = tris_b[:, (e + 1) % 3]
        poly, cnt = _clip_half_plane(poly, cnt, p1, p2, eps)
    poly, cnt = _merge_close_vertices(poly, cnt, SNAP_REL * diam)

    area = polygon_areas(poly, cnt)
    ea = np.abs(_cross(tris_a[:, 0], tris_a[:, 1], tris_a[:, 2])) * 0.5
    eb = np.abs(_cross(tris_b[:, 0], tris_b[:, 1], tris_b[:, 2])) * 0.5
    tiny = area < EPS_GEO * np.maximum(ea, eb)
    cnt = np.where(tiny | (cnt < 3), 0, cnt)
    return poly, cnt


def _clip_half_plane(poly, cnt, p1, p2, eps):
    n, W, _ = poly.shape
    d = ((p2[:, 0] - p1[:, 0])[:, None]
         * (poly[..., 1] - p1[:, 1][:, None])
         - (p2[:, 1] - p1[:, 1])[:, None]
         * (poly[..., 0] - p1[:, 0][:, None]))
    inside = d >= -eps[:, None]
    out = np.zeros((n, W, 2))
    ocnt = np.zeros(n, dtype=np.int64)
    for i in range(W):
        active = i < cnt
        if not active.any():
            break
        rows = np.nonzero(active)[0]
        prev = np.where(i > 0, i - 1, cnt - 1)[rows]
        cur_in = inside[rows, i]
        prev_in = inside[rows, prev]
        dc = d[rows, i]
        dp = d[rows, prev]
        vc = poly[rows, i]
        vp = poly[rows, prev]
        crossing = cur_in != prev_in
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(crossing, dp / (dp - dc), 0.0)
        ipt = vp + t[:, None] * (vc - vp)
        # entering or leaving: emit the intersection point first
        emit1 = crossing
        r1 = rows[emit1]
        out[r1, ocnt[r1]] = ipt[emit1]
        ocnt[r1] += 1
        # inside: emit the current vertex
        r2 = rows[cur_in]
        out[r2, ocnt[r2]] = vc[cur_in]
        ocnt[r2] += 1
    return out, ocnt


def _merge_close_vertices(poly, cnt, tol):
    n, W, _ = poly.shape
    out = np.zeros_like(poly)
    ocnt = np.zeros(n, dtype=np.int64)
    for i in range(W):
        rows = np.nonzero(i < cnt)[0]
        if not len(rows):
            break
        v = poly[rows, i]
        first = ocnt[rows] == 0
        prev = out[rows, np.maximum(ocnt[rows] - 1, 0)]
        keep = first | (np.linalg.norm(v - prev, axis=1) > tol[rows])
        r = rows[keep]
        out[r, ocnt[r]] = v[keep]
        ocnt[r] += 1
    # last vertex may coincide with the first
    rows = np.nonzero(ocnt >= 2)[0]
    v_last = out[rows, ocnt[rows] - 1]
    close = np.linalg.norm(v_last - out[rows, 0], axis=1) <= tol[rows]
    ocnt[rows[close]] -= 1
    return out, ocnt


def clip_triangles(tri_a, tri_b):
    """Intersection of two CCW triangles as a CCW polygon (m, 2).

    Returns an empty (0, 2) array for disjoint triangles. Degenerate
    input triangles raise a ValueError.
    """
    tri_a = np.asarray(tri_a, dtype=float)
    tri_b = np.asarray(tri_b, dtype=float)
    for t in (tri_a, tri_b):
        if abs(_cross(t[0], t[1], t[2])) < 1e-300:
            raise ValueError("degenerate input triangle")
        if _cross(t[0], t[1], t[2]) < 0:
            raise ValueError("input triangle is not counter-clockwise")
    poly, cnt = clip_triangles_batch(tri_a[None], tri_b[None])
    return poly[0, :cnt[0]].copy()


def triangulate_polygon(poly):
    """Fan triangulation of a convex CCW polygon: (m, 2) -> (m-2, 3, 2)."""
    poly = np.asarray(poly, dtype=float)
    m = len(poly)
    if m < 3:
        return np.zeros((0, 3, 2))
    tris = np.empty((m - 2, 3, 2))
    tris[:, 0] = poly[0]
    tris[:, 1] = poly[1:m - 1]
    tris[:, 2] = poly[2:m]
    return tris


def find_candidates(background, embedded, bin_scale=1.0):
    """Candidate element pairs via a uniform bin grid.

    Returns a sorted (m, 2) array of (background, embedded) triangle
    indices whose bounding boxes overlap; a superset of the truly
    intersecting pairs.
    """
    if embedded.n_triangles == 0 or background.n_triangles == 0:
        return np.zeros((0, 2), dtype=np.int64)
    ev = embedded.vertices[embedded.triangles]
    elo, ehi = ev.min(axis=1), ev.max(axis=1)
    cell = float(np.mean(np.linalg.norm(ehi - elo, axis=1))) * bin_scale
    origin = elo.min(axis=0)
    ilo = np.floor((elo - origin) / cell).astype(np.int64)
    ihi = np.floor((ehi - origin) / cell).astype(np.int64)
    buckets = {}
    for t in range(len(ev)):
        for ix in range(ilo[t, 0], ihi[t, 0] + 1):
            for iy in range(ilo[t, 1], ihi[t, 1] + 1):
                buckets.setdefault((ix, iy), []).append(t)

    bv = background.vertices[background.triangles]
    blo, bhi = bv.min(axis=1), bv.max(axis=1)
    embox_lo, embox_hi = elo.min(axis=0), ehi.max(axis=0)
    near = np.nonzero(np.all(bhi >= embox_lo, axis=1)
                      & np.all(blo <= embox_hi, axis=1))[0]
    pairs = []
    jlo = np.floor((blo[near] - origin) / cell).astype(np.int64)
    jhi = np.floor((bhi[near] - origin) / cell).astype(np.int64)
    for k, bt in enumerate(near):
        found = set()
        for ix in range(jlo[k, 0], jhi[k, 0] + 1):
            for iy in range(jlo[k, 1], jhi[k, 1] + 1):
                found.update(buckets.get((ix, iy), ()))
        for et in found:
            if (blo[bt, 0] <= ehi[et, 0] and bhi[bt, 0] >= elo[et, 0]
                    and blo[bt, 1] <= ehi[et, 1]
                    and bhi[bt, 1] >= elo[et, 1]):
                pairs.append((bt, et))
    pairs = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return pairs


class OverlapTopology:
    """Tertiary integration mesh between a background and embedded mesh.

    Attributes
    ----------
    background_class : (nt_b,) int array with OUTSIDE / CUT / COVERED
    covered_region : indices of fully covered background triangles
    pairs : (npair, 2) int array, intersecting (bg, em) pairs
    pair_polys, pair_cnt : padded intersection polygons per pair
    sub_pair : (ns,) index into ``pairs`` per sub-triangle
    sub_verts : (ns, 3, 2) sub-triangle vertices (CCW)
    sub_areas : (ns,)
    Per quadrature point (shape (ns, nq)): ``points`` (physical, with a
    trailing coordinate axis), ``wdet`` (weight times area), ``bary_bg``
    and ``bary_em`` (barycentric in the parents, trailing axis 3).
    """

    def __init__(self, background, embedded, quadrature):
        self.background = background
        self.embedded = embedded
        self.quadrature = quadrature
        self._build()

    def _build(self):
        bg, em = self.background, self.embedded
        cand = find_candidates(bg, em)
        if len(cand):
            ta = bg.vertices[bg.triangles[cand[:, 0]]]
            tb = em.vertices[em.triangles[cand[:, 1]]]
            poly, cnt = clip_triangles_batch(ta, tb)
            hit = cnt >= 3
        else:
            poly = np.zeros((0, 8, 2))
            cnt = np.zeros(0, dtype=np.int64)
            hit = np.zeros(0, dtype=bool)
        self.pairs = cand[hit]
        self.pair_polys = poly[hit]
        self.pair_cnt = cnt[hit]
        self.pair_areas = polygon_areas(self.pair_polys, self.pair_cnt)

        # per-background coverage and classification
        nb = bg.n_triangles
        covered_area = np.zeros(nb)
        np.add.at(covered_area, self.pairs[:, 0], self.pair_areas)
        frac = covered_area / bg.areas
        self.background_class = np.where(
            frac > 1.0 - EPS_GEO, COVERED,
            np.where(frac < EPS_GEO, OUTSIDE, CUT)).astype(np.int8)
        self.covered_area = covered_area
        self.covered_region = np.nonzero(
            self.background_class == COVERED)[0]

        # embedded triangles must be fully covered by background cells;
        # the tolerance allows for discarded sliver polygons, which scale
        # with the (possibly much larger) background elements
        em_area = np.zeros(em.n_triangles)
        np.add.at(em_area, self.pairs[:, 1], self.pair_areas)
        tol = 1e-9 * em.areas + 10.0 * EPS_GEO * float(bg.areas.max())
        bad = np.abs(em_area - em.areas) > tol
        if np.any(bad):
            raise OverlapError(
                "embedded triangles not covered by the background mesh "
                "(meshes do not nest): %s"
                % np.nonzero(bad)[0][:10].tolist())

        # fan triangulation of each polygon
        max_sub = max(int(self.pair_cnt.max()) - 2, 0) if len(self.pair_cnt) \
            else 0
        subs = []
        sub_pair = []
        for k in range(max_sub):
            sel = np.nonzero(self.pair_cnt >= k + 3)[0]
            if not len(sel):
                continue
            tri = np.empty((len(sel), 3, 2))
            tri[:, 0] = self.pair_polys[sel, 0]
            tri[:, 1] = self.pair_polys[sel, k + 1]
            tri[:, 2] = self.pair_polys[sel, k + 2]
            subs.append(tri)
            sub_pair.append(sel)
        if subs:
            order = np.argsort(np.concatenate(sub_pair), kind="stable")
            self.sub_verts = np.concatenate(subs)[order]
            self.sub_pair = np.concatenate(sub_pair)[order]
        else:
            self.sub_verts = np.zeros((0, 3, 2))
            self.sub_pair = np.zeros(0, dtype=np.int64)
        e1 = self.sub_verts[:, 1] - self.sub_verts[:, 0]
        e2 = self.sub_verts[:, 2] - self.sub_verts[:, 0]
        self.sub_areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

        # quadrature data on the sub-triangles
        q = self.quadrature
        lam = q.points                                   # (nq, 3)
        self.points = np.einsum("qk,skd->sqd", lam, self.sub_verts)
        self.wdet = q.weights[None, :] * self.sub_areas[:, None]
        ns, nq = self.wdet.shape
        flat = self.points.reshape(-1, 2)
        bg_ids = np.repeat(self.pairs[self.sub_pair, 0], nq)
        em_ids = np.repeat(self.pairs[self.sub_pair, 1], nq)
        self.bary_bg = bg.barycentric(bg_ids, flat).reshape(ns, nq, 3)
        self.bary_em = em.barycentric(em_ids, flat).reshape(ns, nq, 3)

    @property
    def n_sub(self):
        return len(self.sub_verts)

    def sub_bg_tris(self):
        return self.pairs[self.sub_pair, 0]

    def sub_em_tris(self):
        return self.pairs[self.sub_pair, 1]

    def total_area(self):
        return float(np.sum(self.sub_areas))

    def consistency_errors(self):
        """Max mismatch of both-parent physical reconstructions."""
        if self.n_sub == 0:
            return 0.0
        bg_pts = self.background.physical_points(
            np.repeat(self.sub_bg_tris(), self.wdet.shape[1]),
            self.bary_bg.reshape(-1, 3))
        em_pts = self.embedded.physical_points(
            np.repeat(self.sub_em_tris(), self.wdet.shape[1]),
            self.bary_em.reshape(-1, 3))
        return float(np.max(np.linalg.norm(bg_pts - em_pts, axis=1)))


def build_overlap(background, embedded, quadrature=None):
    """Build the tertiary integration topology (see OverlapTopology)."""
    if quadrature is None:
        quadrature = quad_rule(6)
    return OverlapTopology(background, embedded, quadrature)


def locate_point(mesh, point, tol=1e-8):
    """Locate a single point: (tri_index, barycentric) or None."""
    tri, lam = mesh.locate(np.asarray(point, dtype=float)[None, :], tol=tol)
    if tri[0] < 0:
        return None
    return int(tri[0]), lam[0]
