"""Mesh builders for the benchmark geometries.

Structured rectangles and annuli are assembled directly; domains with a
circular hole combine a structured point cloud with concentric boundary
rings and a Delaunay triangulation, giving quasi-uniform meshes like the
ones the benchmarks are defined on.
"""

import numpy as np
from scipy.spatial import Delaunay

from .mesh import TriMesh, MeshError

RECT_SIDES = ("left", "right", "bottom", "top")


def _side_tags(box, tags, tol):
    x0, y0, x1, y1 = box

    def classify(p):
        if abs(p[0] - x0) < tol:
            return tags["left"]
        if abs(p[0] - x1) < tol:
            return tags["right"]
        if abs(p[1] - y0) < tol:
            return tags["bottom"]
        if abs(p[1] - y1) < tol:
            return tags["top"]
        return None
    return classify


def rectangle(box, nx, ny, tags=None):
    """Structured rectangle mesh with alternating diagonals.

    Parameters
    ----------
    box : (x0, y0, x1, y1)
    nx, ny : int
        Cells per direction.
    tags : dict
        Maps "left", "right", "bottom", "top" to boundary tag strings.
    """
    x0, y0, x1, y1 = box
    tags = tags or {s: s for s in RECT_SIDES}
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=-1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
            else:
                tris.append((v10, v11, v01))
                tris.append((v10, v01, v00))
    tris = np.array(tris, dtype=np.int64)

    tol = 1e-9 * max(x1 - x0, y1 - y0)
    btags = {}
    for i in range(nx):
        btags[(vid(i, 0), vid(i + 1, 0))] = tags["bottom"]
        btags[(vid(i, ny), vid(i + 1, ny))] = tags["top"]
    for j in range(ny):
        btags[(vid(0, j), vid(0, j + 1))] = tags["left"]
        btags[(vid(nx, j), vid(nx, j + 1))] = tags["right"]
    return TriMesh(verts, tris, boundary_tags=btags)


def annulus(center, r_inner, r_outer, n_r, n_theta, tags=None,
            grading=1.0):
    """Structured polar ring mesh.

    ``grading`` is the ratio between successive radial spacings (> 1
    refines toward the inner circle).
    """
    tags = tags or {"inner": "fs", "outer": "ff"}
    cx, cy = center
    if grading == 1.0:
        radii = np.linspace(r_inner, r_outer, n_r + 1)
    else:
        w = grading ** np.arange(n_r)
        w = np.concatenate([[0.0], np.cumsum(w)])
        radii = r_inner + (r_outer - r_inner) * w / w[-1]
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    verts = np.empty(((n_r + 1) * n_theta, 2))
    for k, r in enumerate(radii):
        verts[k * n_theta:(k + 1) * n_theta, 0] = cx + r * np.cos(theta)
        verts[k * n_theta:(k + 1) * n_theta, 1] = cy + r * np.sin(theta)

    def vid(k, j):
        return k * n_theta + (j % n_theta)

    tris = []
    for k in range(n_r):
        for j in range(n_theta):
            v00, v01 = vid(k, j), vid(k, j + 1)
            v10, v11 = vid(k + 1, j), vid(k + 1, j + 1)
            if (k + j) % 2 == 0:
                tris.append((v00, v01, v11))
                tris.append((v00, v11, v10))
            else:
                tris.append((v00, v01, v10))
                tris.append((v01, v11, v10))
    btags = {}
    for j in range(n_theta):
        btags[(vid(0, j), vid(0, j + 1))] = tags["inner"]
        btags[(vid(n_r, j), vid(n_r, j + 1))] = tags["outer"]
    return TriMesh(verts, np.array(tris, dtype=np.int64),
                   boundary_tags=btags)


def delaunay_mesh(points, keep_fn=None, tag_fn=None, min_quality=0.02):
    """Delaunay triangulation with centroid filtering and edge tagging.

    Parameters
    ----------
    points : (n, 2) array
    keep_fn : callable (m, 2) -> bool mask
        Keeps triangles whose centroid satisfies the predicate.
    tag_fn : callable (2,) -> str or None
        Boundary tag from an edge midpoint; must cover every boundary
        edge of the filtered triangulation.
    """
    points = np.asarray(points, dtype=float)
    dt = Delaunay(points)
    tris = dt.simplices.astype(np.int64)
    cent = points[tris].mean(axis=1)
    if keep_fn is not None:
        tris = tris[keep_fn(cent)]
    # drop unreferenced points, keep order
    used = np.unique(tris.ravel())
    remap = -np.ones(len(points), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = points[used]
    tris = remap[tris]

    raw = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(raw, axis=1)
    edges, counts = np.unique(key, axis=0, return_counts=True)
    btags = {}
    for i, j in edges[counts == 1]:
        mid = 0.5 * (verts[i] + verts[j])
        tag = tag_fn(mid) if tag_fn is not None else None
        if tag is None:
            raise MeshError("untaggable boundary edge at %s" % (mid,))
        btags[(int(i), int(j))] = tag
    mesh = TriMesh(verts, tris, boundary_tags=btags)
    from .mesh import element_quality
    q = element_quality(mesh)
    if q.min() < min_quality:
        raise MeshError("mesh quality %.3g below %.3g"
                        % (q.min(), min_quality))
    return mesh


def polygon_radius(radius, n):
    """Vertex radius whose n-gon matches the circle in mean radius.

    An inscribed polygon under-resolves a no-slip circle by O(h^2) with
    a one-sided bias; placing vertices slightly outside removes the
    bias, so straight-edge meshes converge against the true circle.
    """
    return radius * 2.0 / (1.0 + np.cos(np.pi / n))


def circle_ring_points(center, radius, h, rings, clearance=0.5):
    """Concentric point rings on and around a circle, spacing ~ h."""
    cx, cy = center
    pts = []
    for m in range(rings + 1):
        r = radius + m * h
        n = max(8, int(round(2.0 * np.pi * r / h)))
        if m == 0:
            r = polygon_radius(radius, n)
        off = 0.5 * (m % 2)
        th = 2.0 * np.pi * (np.arange(n) + off) / n
        pts.append(np.stack([cx + r * np.cos(th), cy + r * np.sin(th)],
                            axis=-1))
    return np.vstack(pts), radius + (rings + clearance) * h


def rectangle_with_hole(box, center, radius, h, tags=None, rings=2):
    """Quasi-uniform mesh of a rectangle with a circular hole.

    The hole boundary is resolved by a ring of points exactly on the
    circle (tagged "fs"); outer sides take the rectangle ``tags``.
    """
    x0, y0, x1, y1 = box
    tags = tags or {s: s for s in RECT_SIDES}
    nx = max(2, int(round((x1 - x0) / h)))
    ny = max(2, int(round((y1 - y0) / h)))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([X.ravel(), Y.ravel()], axis=-1)
    ring_pts, rmax = circle_ring_points(center, radius, h, rings)
    keep = np.linalg.norm(grid - center, axis=1) > rmax
    points = np.vstack([grid[keep], ring_pts])

    side = _side_tags(box, tags, 1e-9 * max(x1 - x0, y1 - y0))
    rr = np.asarray(center, dtype=float)

    def tag_fn(mid):
        t = side(mid)
        if t is not None:
            return t
        if abs(np.linalg.norm(mid - rr) - radius) < 0.3 * h:
            return "fs"
        return None

    def keep_fn(cent):
        return np.linalg.norm(cent - rr, axis=1) > radius * (1.0 - 1e-12)

    return delaunay_mesh(points, keep_fn=keep_fn, tag_fn=tag_fn)


def disk_with_ring(center, r_solid, r_outer, h, n_theta=None,
                   tags=None, n_solid=None, n_fluid=None):
    """Polar mesh of a solid disk plus its fluid enrichment ring.

    Triangles inside ``r_solid`` are tagged "solid"; the outer circle is
    the fluid-fluid interface. The fluid-solid interface is the interior
    region boundary at ``r_solid``, with vertices placed at the
    mean-radius-compensated polygon radius. Explicit ``n_theta`` /
    ``n_solid`` / ``n_fluid`` counts allow exact refinement scaling.
    """
    tags = tags or {"outer": "ff"}
    cx, cy = center
    if n_theta is None:
        n_theta = max(8, int(round(2.0 * np.pi * r_solid / h)))
    if n_solid is None:
        n_solid = max(2, int(round(r_solid / h)))
    if n_fluid is None:
        n_fluid = max(2, int(round((r_outer - r_solid) / h)))
    r_fs = polygon_radius(r_solid, n_theta)
    radii = np.concatenate([
        np.linspace(0.0, r_fs, n_solid + 1)[1:],
        np.linspace(r_fs, r_outer, n_fluid + 1)[1:],
    ])
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    verts = [np.array([[cx, cy]])]
    for r in radii:
        verts.append(np.stack([cx + r * np.cos(theta),
                               cy + r * np.sin(theta)], axis=-1))
    verts = np.vstack(verts)

    def vid(k, j):
        # ring k (1-based) vertex j
        return 1 + (k - 1) * n_theta + (j % n_theta)

    tris = []
    regions = []
    for j in range(n_theta):
        tris.append((0, vid(1, j), vid(1, j + 1)))
        regions.append("solid")
    n_rings = len(radii)
    for k in range(1, n_rings):
        reg = "solid" if k < n_solid else "fluid"
        for j in range(n_theta):
            v00, v01 = vid(k, j), vid(k, j + 1)
            v10, v11 = vid(k + 1, j), vid(k + 1, j + 1)
            if (k + j) % 2 == 0:
                tris.append((v00, v01, v11))
                tris.append((v00, v11, v10))
            else:
                tris.append((v00, v01, v10))
                tris.append((v01, v11, v10))
            regions.extend([reg, reg])
    btags = {}
    for j in range(n_theta):
        btags[(vid(n_rings, j), vid(n_rings, j + 1))] = tags["outer"]
    return TriMesh(verts, np.array(tris, dtype=np.int64),
                   boundary_tags=btags, tri_regions=regions)
