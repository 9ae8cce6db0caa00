"""Conforming triangular meshes with Taylor-Hood node layout.

A :class:`TriMesh` stores straight-sided triangles with counter-clockwise
orientation. P1 nodes are the vertices; P2 nodes append one node per
unique edge, placed at the exact edge midpoint. Boundary edges carry
string tags ("inflow", "wall", "fs", "ff", "outflow", "axis", ...) and
triangles carry a region tag ("fluid" or "solid").

Meshes are immutable after construction; moving a mesh (ALE) produces a
new instance through :meth:`TriMesh.with_vertices`, sharing topology.
"""

import json

import numpy as np

from .basis import eval_basis

REGIONS = ("fluid", "solid")


class MeshError(Exception):
    """Raised for malformed or non-conforming mesh data."""


class TriMesh:
    """Triangular mesh with derived edge/midpoint data.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
        Vertex coordinates (m).
    triangles : array_like, shape (nt, 3)
        Vertex index triples. Clockwise triples are reoriented.
    boundary_tags : dict, optional
        Mapping ``(i, j) -> tag`` for boundary edges; vertex pairs may be
        given in either order. Every boundary edge must be covered.
    tri_regions : array_like, optional
        Region name per triangle, default all "fluid".
    validate : bool
        Run full conformity validation (default True).
    """

    def __init__(self, vertices, triangles, boundary_tags=None,
                 tri_regions=None, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        tris = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(self.vertices)):
            raise MeshError("triangle vertex index out of range")

        # enforce counter-clockwise orientation
        a = self.vertices[tris[:, 1]] - self.vertices[tris[:, 0]]
        b = self.vertices[tris[:, 2]] - self.vertices[tris[:, 0]]
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        flipped = det < 0.0
        if np.any(flipped):
            tris = tris.copy()
            tris[flipped, 1], tris[flipped, 2] = \
                tris[flipped, 2].copy(), tris[flipped, 1].copy()
        self.triangles = tris

        if tri_regions is None:
            self.tri_region = np.zeros(len(tris), dtype=np.int8)
        else:
            reg = np.asarray(
                [REGIONS.index(r) if isinstance(r, str) else int(r)
                 for r in tri_regions], dtype=np.int8)
            if len(reg) != len(tris):
                raise MeshError("tri_regions length mismatch")
            self.tri_region = reg

        self._build_edges()
        self._build_geometry()
        self._assign_boundary_tags(boundary_tags or {})
        if validate:
            self.validate()
        self._locator = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------

    def _build_edges(self):
        tris = self.triangles
        raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]],
                              tris[:, [2, 0]]])
        key = np.sort(raw, axis=1)
        edges, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            bad = edges[counts > 2]
            raise MeshError("non-conforming mesh: edges shared by more "
                            "than two triangles: %s" % bad.tolist())
        self.edges = edges                       # (ne, 2) sorted pairs
        self.tri_edges = inverse.reshape(3, -1).T.copy()  # (nt, 3)
        self.edge_counts = counts
        self.boundary_edge_ids = np.nonzero(counts == 1)[0]
        # adjacent triangle(s) per edge
        e2t = np.full((len(edges), 2), -1, dtype=np.int64)
        tri_ids = np.tile(np.arange(len(tris)), 3)
        order = np.argsort(inverse, kind="stable")
        einv = inverse[order]
        tids = tri_ids[order]
        first = np.searchsorted(einv, np.arange(len(edges)), side="left")
        last = np.searchsorted(einv, np.arange(len(edges)), side="right")
        n0 = last - first
        e2t[:, 0] = tids[first.clip(max=len(tids) - 1)] if len(tids) else -1
        two = n0 == 2
        e2t[two, 1] = tids[(first + 1)[two]]
        self.edge_tris = e2t

    def _build_geometry(self):
        v = self.vertices
        t = self.triangles
        self.midpoints = 0.5 * (v[self.edges[:, 0]] + v[self.edges[:, 1]])
        self.p2_coords = np.vstack([v, self.midpoints])
        self.tri_p2 = np.hstack([t, self.tri_edges + len(v)])  # (nt, 6)
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.jac = np.stack([e1, e2], axis=-1)   # (nt, 2, 2), columns e1,e2
        self.jac_det = det
        self.areas = 0.5 * det
        inv = np.empty_like(self.jac)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv[:, 0, 0] = e2[:, 1] / det
            inv[:, 0, 1] = -e2[:, 0] / det
            inv[:, 1, 0] = -e1[:, 1] / det
            inv[:, 1, 1] = e1[:, 0] / det
        self.jac_inv = inv

    def _assign_boundary_tags(self, boundary_tags):
        keyed = {}
        for (i, j), tag in boundary_tags.items():
            keyed[(min(i, j), max(i, j))] = str(tag)
        self.edge_tag = {}
        for eid in self.boundary_edge_ids:
            key = tuple(self.edges[eid])
            if key in keyed:
                self.edge_tag[int(eid)] = keyed.pop(key)
        if keyed:
            raise MeshError("tags given for non-boundary edges: %s"
                            % sorted(keyed))

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_p2_nodes(self):
        return len(self.p2_coords)

    def region_tris(self, region):
        return np.nonzero(self.tri_region == REGIONS.index(region))[0]

    def boundary_edges_with_tag(self, tag):
        return np.array(sorted(e for e, t in self.edge_tag.items()
                               if t == tag), dtype=np.int64)

    def boundary_tags(self):
        return sorted(set(self.edge_tag.values()))

    def nodes_on_edges(self, edge_ids, kind="P2"):
        """Distinct node ids (P1 vertex ids or P2 ids) on given edges."""
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        verts = np.unique(self.edges[edge_ids].ravel()) if len(edge_ids) \
            else np.empty(0, dtype=np.int64)
        if kind == "P1":
            return verts
        mids = edge_ids + self.n_vertices
        return np.unique(np.concatenate([verts, mids]))

    def nodes_with_tag(self, tag, kind="P2"):
        return self.nodes_on_edges(self.boundary_edges_with_tag(tag), kind)

    def node_coords(self, kind):
        return self.vertices if kind == "P1" else self.p2_coords

    def solid_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        solid = self.region_tris("solid")
        mask[self.triangles[solid].ravel()] = True
        return mask

    def circumcircle_diameters(self):
        v = self.vertices[self.triangles]
        a = np.linalg.norm(v[:, 1] - v[:, 2], axis=1)
        b = np.linalg.norm(v[:, 2] - v[:, 0], axis=1)
        c = np.linalg.norm(v[:, 0] - v[:, 1], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = a * b * c / (2.0 * np.abs(self.areas))
        return d

    def mean_edge_length(self):
        e = self.vertices[self.edges]
        return float(np.mean(np.linalg.norm(e[:, 1] - e[:, 0], axis=1)))

    def stats(self):
        return {
            "elements": int(self.n_triangles),
            "vertices": int(self.n_vertices),
            "p2_nodes": int(self.n_p2_nodes),
            "mean_edge_length": self.mean_edge_length(),
            "mean_circumcircle_diameter":
                float(np.mean(self.circumcircle_diameters())),
        }

    # ------------------------------------------------------------------
    # affine maps
    # ------------------------------------------------------------------

    def affine_map(self, tri_index, lam):
        """Map barycentric point(s) on one triangle to physical space."""
        lam = np.asarray(lam, dtype=float)
        verts = self.vertices[self.triangles[tri_index]]
        return lam @ verts

    def physical_points(self, tri_ids, lam):
        """Vectorized affine map: tri_ids (m,), lam (m, 3) -> (m, 2)."""
        verts = self.vertices[self.triangles[tri_ids]]
        return np.einsum("mk,mkd->md", lam, verts)

    def barycentric(self, tri_ids, points):
        """Inverse affine map: points (m, 2) on triangles tri_ids (m,)."""
        tri_ids = np.asarray(tri_ids, dtype=np.int64)
        d = points - self.vertices[self.triangles[tri_ids, 0]]
        s = np.einsum("mij,mj->mi", self.jac_inv[tri_ids], d)
        return np.stack([1.0 - s[:, 0] - s[:, 1], s[:, 0], s[:, 1]], axis=-1)

    def with_vertices(self, new_vertices):
        """Copy of the mesh with moved vertices (topology and tags shared)."""
        m = TriMesh.__new__(TriMesh)
        m.vertices = np.ascontiguousarray(new_vertices, dtype=float)
        if m.vertices.shape != self.vertices.shape:
            raise MeshError("vertex array shape changed")
        m.triangles = self.triangles
        m.tri_region = self.tri_region
        m.edges = self.edges
        m.tri_edges = self.tri_edges
        m.edge_counts = self.edge_counts
        m.boundary_edge_ids = self.boundary_edge_ids
        m.edge_tris = self.edge_tris
        m.edge_tag = self.edge_tag
        m._build_geometry()
        m._locator = None
        if np.any(m.areas <= 0.0):
            raise MeshError("mesh motion inverted %d element(s)"
                            % int(np.sum(m.areas <= 0.0)))
        return m

    # ------------------------------------------------------------------
    # point location
    # ------------------------------------------------------------------

    def locator(self):
        if self._locator is None:
            self._locator = _BinLocator(self)
        return self._locator

    def locate(self, points, tol=1e-8, extrapolate=False):
        """Locate points in the mesh.

        Returns ``(tri, bary)`` with ``tri = -1`` where a point is outside
        the mesh (unless ``extrapolate``, which then uses the nearest
        candidate triangle and extrapolated barycentric coordinates).
        Points within ``tol`` of an edge land in the incident triangle
        with the lowest index.
        """
        return self.locator().locate(np.asarray(points, dtype=float),
                                     tol=tol, extrapolate=extrapolate)

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def validate(self):
        if np.any(self.areas <= 0.0):
            bad = np.nonzero(self.areas <= 0.0)[0]
            raise MeshError("degenerate (zero-area) triangles: %s"
                            % bad.tolist())
        self._check_hanging_nodes()
        untagged = [int(e) for e in self.boundary_edge_ids
                    if int(e) not in self.edge_tag]
        if untagged:
            raise MeshError(
                "boundary edges without tag: %s"
                % [self.edges[e].tolist() for e in untagged[:20]])

    def _check_hanging_nodes(self, rel_tol=1e-9):
        """Reject vertices lying strictly inside another edge.

        Only once-used (boundary-like) edges can participate in a hanging
        configuration in an edge-conforming mesh, so the check is
        restricted to those.
        """
        be = self.boundary_edge_ids
        if len(be) == 0:
            return
        segs = self.vertices[self.edges[be]]          # (nb, 2, 2)
        verts = np.unique(self.edges[be].ravel())
        pts = self.vertices[verts]
        a, b = segs[:, 0], segs[:, 1]
        ab = b - a
        lens = np.linalg.norm(ab, axis=1)
        for k in range(len(be)):
            d = pts - a[k]
            t = (d @ ab[k]) / (lens[k] ** 2)
            perp = np.abs(d[:, 0] * ab[k, 1] - d[:, 1] * ab[k, 0]) / lens[k]
            inside = (t > rel_tol) & (t < 1.0 - rel_tol) \
                & (perp < rel_tol * lens[k])
            if np.any(inside):
                v = verts[np.nonzero(inside)[0][0]]
                raise MeshError(
                    "hanging node: vertex %d lies inside edge %s"
                    % (int(v), self.edges[be[k]].tolist()))


class _BinLocator:
    """Uniform-bin point locator over triangle bounding boxes."""

    def __init__(self, mesh, bin_scale=1.0):
        self.mesh = mesh
        v = mesh.vertices[mesh.triangles]    # (nt, 3, 2)
        lo = v.min(axis=1)
        hi = v.max(axis=1)
        diag = np.linalg.norm(hi - lo, axis=1)
        self.cell = max(float(np.mean(diag)) * bin_scale, 1e-300)
        self.origin = mesh.vertices.min(axis=0) - 0.5 * self.cell
        top = mesh.vertices.max(axis=0) + 0.5 * self.cell
        self.shape = np.maximum(
            np.ceil((top - self.origin) / self.cell).astype(int), 1)
        ilo = np.floor((lo - self.origin) / self.cell).astype(int)
        ihi = np.floor((hi - self.origin) / self.cell).astype(int)
        buckets = {}
        for t in range(len(v)):
            for ix in range(ilo[t, 0], ihi[t, 0] + 1):
                for iy in range(ilo[t, 1], ihi[t, 1] + 1):
                    buckets.setdefault((ix, iy), []).append(t)
        self.buckets = {k: np.array(sorted(ts), dtype=np.int64)
                        for k, ts in buckets.items()}

    def candidates(self, point):
        ix = int(np.floor((point[0] - self.origin[0]) / self.cell))
        iy = int(np.floor((point[1] - self.origin[1]) / self.cell))
        return self.buckets.get((ix, iy), np.empty(0, dtype=np.int64))

    def locate(self, points, tol=1e-8, extrapolate=False):
        points = np.atleast_2d(points)
        m = len(points)
        out_tri = np.full(m, -1, dtype=np.int64)
        out_lam = np.zeros((m, 3))
        idx = np.floor((points - self.origin) / self.cell).astype(int)
        keys = [(int(i), int(j)) for i, j in idx]
        order = sorted(range(m), key=lambda q: keys[q])
        mesh = self.mesh
        start = 0
        while start < m:
            stop = start
            key = keys[order[start]]
            while stop < m and keys[order[stop]] == key:
                stop += 1
            sel = np.array(order[start:stop])
            cand = self.buckets.get(key)
            if cand is not None and len(cand):
                pts = points[sel]
                rem = np.ones(len(sel), dtype=bool)
                best = np.full(len(sel), -1, dtype=np.int64)
                best_lam = np.zeros((len(sel), 3))
                best_def = np.full(len(sel), np.inf)
                for t in cand:
                    if not rem.any():
                        break
                    lam = mesh.barycentric(np.full(rem.sum(), t), pts[rem])
                    ok = lam.min(axis=1) >= -tol
                    deficit = np.where(ok, 0.0, -lam.min(axis=1))
                    ridx = np.nonzero(rem)[0]
                    hit = ridx[ok]
                    out = sel[hit]
                    out_tri[out] = t
                    out_lam[out] = lam[ok]
                    rem[hit] = False
                    better = deficit < best_def[ridx]
                    bidx = ridx[better]
                    best[bidx] = t
                    best_def[bidx] = deficit[better]
                    best_lam[bidx] = lam[better]
                if extrapolate and rem.any():
                    ridx = np.nonzero(rem)[0]
                    out_tri[sel[ridx]] = best[ridx]
                    out_lam[sel[ridx]] = best_lam[ridx]
            elif extrapolate:
                # empty bucket: fall back to nearest triangle by centroid
                cent = mesh.vertices[mesh.triangles].mean(axis=1)
                for q in sel:
                    t = int(np.argmin(
                        np.sum((cent - points[q]) ** 2, axis=1)))
                    out_tri[q] = t
                    out_lam[q] = mesh.barycentric(
                        np.array([t]), points[q][None, :])[0]
            start = stop
        return out_tri, out_lam


def element_quality(mesh, tri_index=None):
    """Incircle/circumcircle radius ratio, in [0, 0.5].

    Degenerate (zero-area) triangles return 0 rather than raising.
    """
    scalar = tri_index is not None and np.ndim(tri_index) == 0
    tris = mesh.triangles if tri_index is None \
        else mesh.triangles[np.atleast_1d(tri_index)]
    q = triangle_quality(mesh.vertices[tris])
    return float(q[0]) if scalar else q


def triangle_quality(verts):
    """Quality r/R for triangle vertex arrays of shape (..., 3, 2)."""
    verts = np.asarray(verts, dtype=float)
    single = verts.ndim == 2
    v = verts[None] if single else verts
    a = np.linalg.norm(v[..., 1, :] - v[..., 2, :], axis=-1)
    b = np.linalg.norm(v[..., 2, :] - v[..., 0, :], axis=-1)
    c = np.linalg.norm(v[..., 0, :] - v[..., 1, :], axis=-1)
    e1 = v[..., 1, :] - v[..., 0, :]
    e2 = v[..., 2, :] - v[..., 0, :]
    area = 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    per = a + b + c
    scale = np.maximum(per, 1e-300) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = 2.0 * area / np.maximum(per, 1e-300)
        rr = a * b * c / np.maximum(4.0 * area, 1e-300)
        q = np.where(area / scale < 1e-14, 0.0, r / np.maximum(rr, 1e-300))
    return float(q[0]) if single else q


def interpolate_field(mesh, dof_map, field, points, tol=1e-8,
                      extrapolate=False):
    """Evaluate a nodal field at physical points. See dofs.eval_field."""
    from .dofs import eval_field
    tri, lam = mesh.locate(points, tol=tol, extrapolate=extrapolate)
    if np.any(tri < 0):
        bad = np.atleast_2d(points)[np.nonzero(tri < 0)[0][0]]
        raise MeshError("interpolation point outside mesh: %s" % (bad,))
    return eval_field(mesh, dof_map, field, tri, lam)


# ----------------------------------------------------------------------
# mesh file I/O
# ----------------------------------------------------------------------

def load_mesh(path):
    """Load a mesh from the JSON mesh format.

    Keys: ``vertices`` ([x, y] pairs), ``triangles`` ([i, j, k] triples,
    0-based), ``boundary`` ([{edge: [i, j], tag: str}]) and optional
    ``regions`` ([{triangle: index, tag: str}]). Midpoint nodes are
    derived, never stored.
    """
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshError("%s: parse error at line %d column %d: %s"
                            % (path, exc.lineno, exc.colno, exc.msg))
    try:
        vertices = data["vertices"]
        triangles = data["triangles"]
    except KeyError as exc:
        raise MeshError("%s: missing key %s" % (path, exc))
    tags = {}
    for item in data.get("boundary", []):
        i, j = item["edge"]
        tags[(int(i), int(j))] = item["tag"]
    regions = None
    if data.get("regions"):
        regions = ["fluid"] * len(triangles)
        for item in data["regions"]:
            regions[int(item["triangle"])] = item["tag"]
    return TriMesh(vertices, triangles, boundary_tags=tags,
                   tri_regions=regions)


def save_mesh(mesh, path):
    data = {
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary": [{"edge": mesh.edges[eid].tolist(), "tag": tag}
                     for eid, tag in sorted(mesh.edge_tag.items())],
    }
    solid = mesh.region_tris("solid")
    if len(solid):
        data["regions"] = [{"triangle": int(t), "tag": "solid"}
                           for t in solid]
    with open(path, "w") as fh:
        json.dump(data, fh)


def export_vtk(mesh, fields, path):
    """Write a legacy ASCII VTK unstructured grid with vertex point data.

    ``fields`` maps names to per-vertex arrays: shape (nv,) becomes a
    SCALARS block, shape (nv, 2) a 3-component VECTORS block.
    """
    nv = mesh.n_vertices
    lines = ["# vtk DataFile Version 3.0", "puflow output", "ASCII",
             "DATASET UNSTRUCTURED_GRID", "POINTS %d double" % nv]
    for x, y in mesh.vertices:
        lines.append("%.17g %.17g 0" % (x, y))
    nt = mesh.n_triangles
    lines.append("CELLS %d %d" % (nt, 4 * nt))
    for t in mesh.triangles:
        lines.append("3 %d %d %d" % tuple(t))
    lines.append("CELL_TYPES %d" % nt)
    lines.extend(["5"] * nt)
    if fields:
        lines.append("POINT_DATA %d" % nv)
        for name, arr in fields.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append("SCALARS %s double 1" % name)
                lines.append("LOOKUP_TABLE default")
                lines.extend("%.17g" % v for v in arr[:nv])
            else:
                lines.append("VECTORS %s double" % name)
                lines.extend("%.17g %.17g 0" % (vx, vy)
                             for vx, vy in arr[:nv])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
