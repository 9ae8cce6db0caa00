"""Mock aortic valve FSI benchmark (half lumen, one leaflet).

The channel half-width is W with the symmetry axis at y = W and the
wall at y = 0; a sinus pocket bulges below the wall just downstream of
the leaflet. The leaflet is a thin cantilevered strip clamped at the
wall. The overlapping path embeds the leaflet plus a fluid blanket in a
coarse background mesh of the whole lumen; the classical path merges
the same blanket mesh with a fitted outer triangulation and deforms it.
"""

import json
import time

import numpy as np
from shapely.geometry import Polygon, Point

from .mesh import TriMesh, MeshError
from .meshgen import delaunay_mesh
from .overlap import build_overlap
from .weighting import build_psi, classify_constraints, WeightField
from .assembly import (PuLayout, SceneState, assemble_ns_residual,
                       assemble_ns_jacobian)
from .solvers import SparseFactor, NewtonConfig, SolverError, BDF1, BDF2
from .fsi import SolidModel, duplicated_pressure_map
from .mesh_motion import MotionState, mesh_step, MotionError
from .quantities import boundary_flux
from .bench import velocity_dirichlet, no_slip, slip_y


class ValveGeometry:
    """Dimensions of the mock valve domain (meters)."""

    def __init__(self, width=0.014, length=0.0553, sinus_length=0.0158,
                 sinus_depth=0.0039, sinus_start=0.015, valve_x=0.011,
                 valve_height=0.0098, valve_thickness=0.0004,
                 ring=0.0016):
        self.width = width
        self.length = length
        self.sinus_length = sinus_length
        self.sinus_depth = sinus_depth
        self.sinus_start = sinus_start
        self.valve_x = valve_x
        self.valve_height = valve_height
        self.valve_thickness = valve_thickness
        self.ring = ring
        half = sinus_length / 2.0
        self.sinus_radius = (half ** 2 + sinus_depth ** 2) \
            / (2.0 * sinus_depth)
        self.sinus_cx = sinus_start + half
        self.sinus_cy = self.sinus_radius - sinus_depth

    def wall_y(self, x):
        """Wall height (<= 0 inside the sinus pocket)."""
        x = np.asarray(x, dtype=float)
        inside = (x > self.sinus_start) \
            & (x < self.sinus_start + self.sinus_length)
        dx = np.clip(self.sinus_radius ** 2 - (x - self.sinus_cx) ** 2,
                     0.0, None)
        return np.where(inside, self.sinus_cy - np.sqrt(dx), 0.0)

    def metadata(self):
        return {k: getattr(self, k) for k in
                ("width", "length", "sinus_length", "sinus_depth",
                 "sinus_start", "valve_x", "valve_height",
                 "valve_thickness", "ring")}


def leaflet_cloud(geo, h_solid=None):
    """Structured point cloud of the undeformed leaflet.

    Returns (points, boundary_sequence) where the sequence indexes the
    counter-clockwise outline of the strip.
    """
    th, hv, xv = geo.valve_thickness, geo.valve_height, geo.valve_x
    h_solid = h_solid or th / 2.0
    nx = max(2, int(round(th / h_solid)))
    ny = max(6, int(round(hv / (2.5 * h_solid))))
    xs = np.linspace(xv - th / 2, xv + th / 2, nx + 1)
    ys = np.linspace(0.0, hv, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)

    def vid(i, j):
        return i * (ny + 1) + j
    seq = [vid(0, 0)]
    seq += [vid(nx, 0)]                              # along the base
    seq += [vid(nx, j) for j in range(1, ny + 1)]    # right face up
    seq += [vid(i, ny) for i in range(nx - 1, -1, -1)]  # tip leftwards
    seq += [vid(0, j) for j in range(ny - 1, 0, -1)]    # left face down
    return pts, np.array(seq, dtype=np.int64)


def _resample_polyline(coords, spacing, closed=False):
    coords = np.asarray(coords, dtype=float)
    seg = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    n = max(4, int(round(total / spacing)))
    wanted = np.linspace(0.0, total, n, endpoint=not closed)
    out = np.empty((len(wanted), 2))
    out[:, 0] = np.interp(wanted, s, coords[:, 0])
    out[:, 1] = np.interp(wanted, s, coords[:, 1])
    return out


def capsule_mesh(solid_points, boundary_seq, geo, h_ring=None, layers=3,
                 first_layer_scale=1.0):
    """Leaflet plus fluid blanket, glued to the wall at y = 0.

    ``solid_points`` may be the deformed leaflet cloud; the blanket is
    rebuilt around its current outline.
    """
    solid_points = np.asarray(solid_points, dtype=float)
    outline = solid_points[boundary_seq]
    poly = Polygon(outline)
    if not poly.is_valid:
        raise MeshError("leaflet outline is self-intersecting")
    h_ring = h_ring or 2.2 * geo.valve_thickness
    ring = geo.ring
    pts = [solid_points]
    for k in range(1, layers + 1):
        d = ring * k / layers
        iso = poly.buffer(d, quad_segs=8).exterior
        chain = _clip_loop_above_wall(np.asarray(iso.coords))
        spacing = min(h_ring, max(d, h_ring / 2)) \
            * (first_layer_scale if k == 1 else 1.0)
        ring_pts = _resample_polyline(chain, spacing, closed=False)
        pts.append(ring_pts)
    # wall points between the outermost feet
    xlo, xhi = _wall_feet(poly, ring)
    base = solid_points[:, 1].min()
    inner_wall = outline[np.abs(outline[:, 1] - base) < 1e-12]
    wall_x = np.linspace(xlo, xhi, max(6, int(round((xhi - xlo)
                                                    / h_ring))))
    wall_pts = np.stack([wall_x, np.zeros_like(wall_x)], axis=-1)
    away = np.ones(len(wall_pts), dtype=bool)
    feet = [_wall_feet(poly, ring * k / layers) for k in range(1, layers + 1)]
    anchors = np.concatenate([inner_wall[:, 0],
                              np.asarray(feet).ravel()])
    for col in anchors:
        away &= np.abs(wall_pts[:, 0] - col) > 0.4 * h_ring
    pts.append(wall_pts[away])
    points = np.vstack(pts)

    outer = poly.buffer(ring, quad_segs=6)
    shrunk = poly.buffer(-1e-7)

    def keep_fn(cent):
        ok = np.array([outer.contains(Point(*c)) for c in cent])
        return ok & (cent[:, 1] > 0.0)

    def tag_fn(mid):
        if abs(mid[1]) < 1e-9:
            return "wall"
        return "ff"

    mesh = delaunay_mesh(points, keep_fn=keep_fn, tag_fn=tag_fn,
                         min_quality=0.008)
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    solid = np.array([shrunk.contains(Point(*c)) for c in cent])
    out = TriMesh(mesh.vertices, mesh.triangles,
                  boundary_tags={tuple(mesh.edges[e]): t
                                 for e, t in mesh.edge_tag.items()},
                  tri_regions=np.where(solid, "solid", "fluid"))
    return out, outer


def _clip_loop_above_wall(coords, y_wall=0.0):
    """Open polyline: the part of a closed loop with y >= y_wall.

    The loop is rotated to start below the wall; crossings are inserted
    exactly, so the returned chain runs from one wall foot to the other.
    """
    coords = np.asarray(coords, dtype=float)
    if np.allclose(coords[0], coords[-1]):
        coords = coords[:-1]
    below = np.nonzero(coords[:, 1] < y_wall)[0]
    if len(below) == 0:
        return np.vstack([coords, coords[:1]])
    coords = np.roll(coords, -below[0], axis=0)
    out = []
    n = len(coords)
    for i in range(n):
        a = coords[i]
        b = coords[(i + 1) % n]
        if a[1] >= y_wall:
            out.append(a)
        if (a[1] - y_wall) * (b[1] - y_wall) < 0.0:
            t = (y_wall - a[1]) / (b[1] - a[1])
            out.append(a + t * (b - a))
    return np.asarray(out)


def _wall_feet(poly, d):
    buf = poly.buffer(d, quad_segs=8)
    xs, _ = buf.exterior.xy
    xs = np.asarray(xs)
    ys = np.asarray(buf.exterior.xy[1])
    # crossings of y = 0
    roots = []
    for i in range(len(xs) - 1):
        y0, y1 = ys[i], ys[i + 1]
        if (y0 <= 0.0 < y1) or (y1 <= 0.0 < y0):
            t = y0 / (y0 - y1)
            roots.append(xs[i] + t * (xs[i + 1] - xs[i]))
    if len(roots) < 2:
        b = buf.bounds
        return b[0], b[2]
    return min(roots), max(roots)


def valve_background(geo, h=0.0007):
    """Coarse mesh of the whole lumen (channel plus sinus pocket)."""
    L, W = geo.length, geo.width
    nx = int(round(L / h))
    ny = int(round(W / h))
    xs = np.linspace(0, L, nx + 1)
    ys = np.linspace(0, W, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([X.ravel(), Y.ravel()], axis=-1)
    wall = geo.wall_y(grid[:, 0])
    keep = (grid[:, 1] > wall + 0.5 * h) | (grid[:, 1] == 0.0)
    keep &= ~((grid[:, 1] == 0.0) & (wall < -1e-12))
    pts = [grid[keep]]
    # sinus pocket fill and arc samples
    sx = np.arange(geo.sinus_start, geo.sinus_start + geo.sinus_length,
                   h * 0.9)
    arc = np.stack([sx, geo.wall_y(sx)], axis=-1)
    arc = arc[arc[:, 1] < -0.3 * h]
    pts.append(arc)
    pts.append(np.array([[geo.sinus_start, 0.0],
                         [geo.sinus_start + geo.sinus_length, 0.0]]))
    for frac in (0.33, 0.66):
        inner = np.stack([sx, geo.wall_y(sx) * frac], axis=-1)
        keep_in = inner[:, 1] < -0.4 * h
        pts.append(inner[keep_in])
    points = np.vstack(pts)

    def keep_fn(cent):
        return (cent[:, 1] < W) & (cent[:, 1] > geo.wall_y(cent[:, 0]))

    def tag_fn(mid):
        if abs(mid[0]) < 1e-9:
            return "inflow"
        if abs(mid[0] - L) < 1e-9:
            return "outflow"
        if abs(mid[1] - W) < 1e-9:
            return "axis"
        if abs(mid[1] - geo.wall_y(mid[0])) < 0.5 * h:
            return "wall"
        return None

    return delaunay_mesh(points, keep_fn=keep_fn, tag_fn=tag_fn,
                         min_quality=0.01)


def valve_classical(geo, capsule, capsule_poly, h=0.0007):
    """Fitted mesh: the capsule blanket merged with an outer field mesh."""
    L, W = geo.length, geo.width
    # capsule outer boundary points are reused verbatim for conformity
    ff_edges = capsule.boundary_edges_with_tag("ff")
    ff_nodes = np.unique(capsule.edges[ff_edges].ravel())
    ff_pts = capsule.vertices[ff_nodes]
    xlo = capsule.vertices[:, 0].min()
    xhi = capsule.vertices[:, 0].max()
    ytop = capsule.vertices[:, 1].max()

    nx = int(round(L / h))
    ny = int(round(W / h))
    xs = np.linspace(0, L, nx + 1)
    ys = np.linspace(0, W, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    grid = np.stack([X.ravel(), Y.ravel()], axis=-1)
    wall = geo.wall_y(grid[:, 0])
    keep = (grid[:, 1] > wall + 0.5 * h) | \
        ((grid[:, 1] == 0.0) & (wall > -1e-12))
    # clear the capsule footprint
    margin = 0.7 * h
    inside_box = (grid[:, 0] > xlo - margin) & (grid[:, 0] < xhi + margin) \
        & (grid[:, 1] < ytop + margin)
    keep &= ~inside_box
    pts = [grid[keep], ff_pts]
    sx = np.arange(geo.sinus_start, geo.sinus_start + geo.sinus_length,
                   h * 0.9)
    arc = np.stack([sx, geo.wall_y(sx)], axis=-1)
    pts.append(arc[arc[:, 1] < -0.3 * h])
    pts.append(np.array([[geo.sinus_start, 0.0],
                         [geo.sinus_start + geo.sinus_length, 0.0]]))
    for frac in (0.33, 0.66):
        inner = np.stack([sx, geo.wall_y(sx) * frac], axis=-1)
        pts.append(inner[inner[:, 1] < -0.4 * h])
    # wall points outside the capsule footprint
    points = np.vstack(pts)

    def keep_fn(cent):
        dom = (cent[:, 1] < W) & (cent[:, 1] > geo.wall_y(cent[:, 0]))
        out = np.array([not capsule_poly.contains(Point(*c))
                        for c in cent])
        return dom & out

    def tag_fn(mid):
        if abs(mid[0]) < 1e-9:
            return "inflow"
        if abs(mid[0] - L) < 1e-9:
            return "outflow"
        if abs(mid[1] - W) < 1e-9:
            return "axis"
        if abs(mid[1] - geo.wall_y(mid[0])) < 0.5 * h:
            return "wall"
        return "ff"   # capsule interface, removed on merge

    outer = delaunay_mesh(points, keep_fn=keep_fn, tag_fn=tag_fn,
                          min_quality=0.008)
    return merge_meshes(capsule, outer)


def merge_meshes(a, b):
    """Glue two conforming meshes sharing exact boundary vertices."""
    key = {}
    for i, p in enumerate(a.vertices):
        key[p.tobytes()] = i
    bmap = np.empty(b.n_vertices, dtype=np.int64)
    verts = [a.vertices]
    nxt = a.n_vertices
    new_pts = []
    for i, p in enumerate(b.vertices):
        j = key.get(p.tobytes())
        if j is None:
            bmap[i] = nxt
            nxt += 1
            new_pts.append(p)
        else:
            bmap[i] = j
    verts.append(np.asarray(new_pts).reshape(-1, 2))
    vertices = np.vstack(verts)
    tris = np.vstack([a.triangles, bmap[b.triangles]])
    regions = np.concatenate([a.tri_region, b.tri_region])
    tags = {}
    for mesh, vmap in ((a, np.arange(a.n_vertices)), (b, bmap)):
        for eid, tag in mesh.edge_tag.items():
            i, j = mesh.edges[eid]
            tags[(int(vmap[i]), int(vmap[j]))] = tag
    mesh = TriMesh(vertices, tris, boundary_tags={}, validate=False,
                   tri_regions=["fluid"] * len(tris))
    mesh.tri_region = regions.astype(np.int8)
    # only keep tags on edges that remain on the boundary
    still = {}
    for eid in mesh.boundary_edge_ids:
        i, j = mesh.edges[eid]
        t = tags.get((int(i), int(j))) or tags.get((int(j), int(i)))
        if t is None or t == "ff":
            raise MeshError("merge left an untagged boundary edge")
        still[(int(i), int(j))] = t
    out = TriMesh(vertices, tris, boundary_tags=still,
                  tri_regions=None, validate=True)
    out.tri_region = regions.astype(np.int8)
    return out


# ----------------------------------------------------------------------
# FSI drivers
# ----------------------------------------------------------------------

V_MAX = 0.5


def valve_inflow(geo, t, v_max=V_MAX):
    w = geo.width

    def fn(points):
        y = points[:, 1]
        out = np.zeros((len(points), 2))
        out[:, 0] = v_max * y * (2 * w - y) / w ** 2 \
            * np.sin(np.pi * t) ** 2
        return out
    return fn


def _p2_displacement(mesh, dverts):
    """Nodal P2 displacement field from vertex motion (midpoints derived)."""
    nn = mesh.n_p2_nodes
    out = np.zeros(2 * nn)
    out[:mesh.n_vertices] = dverts[:, 0]
    out[nn:nn + mesh.n_vertices] = dverts[:, 1]
    mid = mesh.edges
    out[mesh.n_vertices:nn] = 0.5 * (dverts[mid[:, 0], 0]
                                     + dverts[mid[:, 1], 0])
    out[nn + mesh.n_vertices:] = 0.5 * (dverts[mid[:, 0], 1]
                                        + dverts[mid[:, 1], 1])
    return out


class _ValveCommon:
    """Shared pieces of the two valve FSI paths."""

    def __init__(self, geo=None, rho=1030.0, mu_f=3.0e-3, mu_s=20.0e3,
                 newton_tol=1e-6, newton_rel=1e-9, max_iter=14):
        self.geo = geo or ValveGeometry()
        self.rho = rho
        self.mu_f = mu_f
        self.mu_s = mu_s
        self.newton_tol = newton_tol
        self.newton_rel = newton_rel
        self.max_iter = max_iter
        self.wall_time = 0.0

    def _converged(self, rnorm, r0):
        return rnorm < max(self.newton_tol, self.newton_rel * r0)

    def _tip_node(self, mesh):
        """P2 node initially at the leaflet tip (free-end center)."""
        target = np.array([self.geo.valve_x, self.geo.valve_height])
        solid_nodes = np.unique(mesh.tri_p2[mesh.region_tris("solid")]
                                .ravel())
        pts = mesh.p2_coords[solid_nodes]
        return int(solid_nodes[np.argmin(
            np.linalg.norm(pts - target, axis=1))])


class ValveFsiPufem(_ValveCommon):
    """Overlapping-mesh valve: embedded blanket over a coarse lumen mesh."""

    def __init__(self, h_bg=0.0007, epsilon=0.1, **kw):
        super().__init__(**kw)
        geo = self.geo
        self.epsilon = epsilon
        self.bg = valve_background(geo, h_bg)
        cloud, seq = leaflet_cloud(geo)
        self.cloud, self.seq = cloud, seq
        self.em_ref, self.poly0 = capsule_mesh(cloud, seq, geo)
        self.psi_values = build_psi(self.em_ref).values
        self.pe_map = duplicated_pressure_map(self.em_ref)
        self.solid = SolidModel(self.em_ref, "e", self.mu_s)
        self.motion = MotionState(self.em_ref)
        self.em_cur = self.em_ref
        self.tip = self._tip_node(self.em_ref)
        self.tip_ref = self.em_ref.p2_coords[self.tip].copy()
        lay = PuLayout(self.bg, self.em_ref, pe_map=self.pe_map)
        self.total = lay.total
        self.nn = self.em_ref.n_p2_nodes

    def _scene(self, em_cur, vhat, t, dt, bdf, hist1, hist2):
        from .bench import build_pufem_scene
        scene = build_pufem_scene(self.bg, em_cur, self.rho, self.mu_f,
                                  "sym", True, epsilon=self.epsilon,
                                  psi_values=self.psi_values,
                                  pe_map=self.pe_map)
        scene.solid = self.solid
        scene.vhat_e = vhat
        scene.dt = dt
        scene.bdf = bdf
        scene.hist1 = hist1
        scene.hist2 = hist2
        lay = scene.layout
        dofs, vals = velocity_dirichlet(
            lay, "b", self.bg,
            {"inflow": valve_inflow(self.geo, t), "wall": no_slip,
             "axis": slip_y})
        # embedded wall nodes (blanket feet and leaflet base) are fixed
        wn = em_cur.nodes_with_tag("wall", "P2")
        for c in (0, 1):
            dofs.extend(lay.vdof("e", wn, c).tolist())
            vals.extend([0.0] * len(wn))
        scene.set_dirichlet(dofs, vals)
        return scene

    def step(self, loop_x, hist1, hist2, t_new, dt, step_idx):
        t0 = time.perf_counter()
        bdf = BDF1 if step_idx <= 1 else BDF2
        x = loop_x.copy()
        em_start = self.em_cur
        fs_nodes = None
        scene = None
        r0 = None
        info = {"iterations": 0}
        for it in range(self.max_iter):
            em_cur, vhat, motion_trial = self._move_mesh(x, em_start, dt)
            scene = self._scene(em_cur, vhat, t_new, dt, bdf, hist1,
                                hist2)
            R = assemble_ns_residual(scene, x)
            rnorm = float(np.linalg.norm(R))
            if r0 is None:
                r0 = rnorm
            info["iterations"] = it
            if self._converged(rnorm, r0) and it > 0:
                break
            J = assemble_ns_jacobian(scene, x)
            x = x + SparseFactor(J, layout=scene.layout).solve(-R)
        else:
            raise SolverError("valve FSI step %d did not converge "
                              "(residual %.3e)" % (step_idx, rnorm))
        self.solid.commit_displacement(x, scene)
        motion_trial.mesh = em_cur
        self.motion = motion_trial
        self.em_cur = em_cur
        info["residual"] = rnorm
        info["wall_time"] = time.perf_counter() - t0
        self.wall_time += info["wall_time"]
        return x, scene, info

    def _move_mesh(self, x, em_start, dt):
        lay = PuLayout(self.bg, em_start, pe_map=self.pe_map)
        ve = lay.split(x)[1]
        nn = self.nn
        u = self.solid.u_prev + dt * ve
        ref0 = self.em_ref.vertices
        target = ref0 + np.stack([u[:self.em_ref.n_vertices],
                                  u[nn:nn + self.em_ref.n_vertices]],
                                 axis=-1)
        fs_nodes = p2_nodes_of_em_interface(em_start)
        start_p2 = np.vstack([em_start.vertices, em_start.midpoints])
        ref_p2 = np.vstack([self.em_ref.vertices, self.em_ref.midpoints])
        u_nodes = np.stack([u[:nn], u[nn:]], axis=-1)
        fixed = {}
        for n in fs_nodes:
            tgt = ref_p2[n] + u_nodes[n]
            d = tgt - start_p2[n]
            fixed[int(n)] = (d[0], d[1])
        for n in em_start.nodes_with_tag("wall", "P2"):
            fixed.setdefault(int(n), (0.0, 0.0))
        motion = self.motion.clone()
        moved, _ = mesh_step(motion, fixed, dt)
        new_verts = moved.vertices.copy()
        solid_verts = np.unique(
            self.em_ref.triangles[self.em_ref.region_tris("solid")]
            .ravel())
        new_verts[solid_verts] = target[solid_verts]
        em_cur = self.em_ref.with_vertices(new_verts)
        vhat = _p2_displacement(em_start,
                                em_cur.vertices - em_start.vertices) / dt
        return em_cur, vhat, motion

    def outputs(self, x, scene):
        lay = scene.layout
        u = self.solid.u_prev
        nn = self.nn
        tip_dx = u[self.tip]
        tip_dy = u[nn + self.tip]
        q = self.motion.qualities(self.em_cur)
        inc = self.solid.incompressibility_error(
            np.zeros_like(x), _FrozenState(lay, 0.0))
        return {"tip_x": float(tip_dx), "tip_y": float(tip_dy),
                "min_quality": float(q.min()),
                "j_err": float(inc)}


class _FrozenState:
    def __init__(self, layout, dt):
        self.layout = layout
        self.dt = dt


def p2_nodes_of_em_interface(mesh):
    from .weighting import fs_edge_ids, p2_nodes_of_edges
    return p2_nodes_of_edges(mesh, fs_edge_ids(mesh))


class ValveFsiClassical(_ValveCommon):
    """Boundary-fitted valve path with optional midway remeshing."""

    def __init__(self, h=0.0007, midway_remesh=None, **kw):
        super().__init__(**kw)
        geo = self.geo
        self.h = h
        cloud, seq = leaflet_cloud(geo)
        self.cloud0, self.seq = cloud, seq
        capsule, poly = capsule_mesh(cloud, seq, geo)
        self.mesh = valve_classical(geo, capsule, poly, h)
        self.ref_vertices = self.mesh.vertices.copy()
        self.cloud_ids = match_points(self.mesh.vertices, cloud)
        self.pb_map = duplicated_pressure_map(self.mesh)
        self.solid = SolidModel(self.mesh, "b", self.mu_s)
        self.motion = MotionState(self.mesh)
        self.tip = self._tip_node(self.mesh)
        self.midway_remesh = midway_remesh
        self.remeshed = False
        lay = PuLayout(self.mesh, pb_map=self.pb_map)
        self.total = lay.total
        self.nn = self.mesh.n_p2_nodes

    def _scene(self, mesh_cur, vhat, t, dt, bdf, hist1, hist2):
        from .bench import build_classical_scene
        scene = build_classical_scene(mesh_cur, self.rho, self.mu_f,
                                      "sym", True, pb_map=self.pb_map)
        scene.solid = self.solid
        scene.vhat_b = vhat
        scene.dt = dt
        scene.bdf = bdf
        scene.hist1 = hist1
        scene.hist2 = hist2
        lay = scene.layout
        dofs, vals = velocity_dirichlet(
            lay, "b", mesh_cur,
            {"inflow": valve_inflow(self.geo, t), "wall": no_slip,
             "axis": slip_y})
        scene.set_dirichlet(dofs, vals)
        return scene

    def step(self, loop_x, hist1, hist2, t_new, dt, step_idx):
        t0 = time.perf_counter()
        bdf = BDF1 if step_idx <= 1 else BDF2
        x = loop_x.copy()
        mesh_start = self.motion.mesh
        r0 = None
        info = {"iterations": 0}
        for it in range(self.max_iter):
            mesh_cur, vhat, motion_trial = self._move_mesh(x, mesh_start,
                                                           dt)
            scene = self._scene(mesh_cur, vhat, t_new, dt, bdf, hist1,
                                hist2)
            R = assemble_ns_residual(scene, x)
            rnorm = float(np.linalg.norm(R))
            if r0 is None:
                r0 = rnorm
            info["iterations"] = it
            if self._converged(rnorm, r0) and it > 0:
                break
            J = assemble_ns_jacobian(scene, x)
            x = x + SparseFactor(J, layout=scene.layout).solve(-R)
        else:
            raise SolverError("valve FSI step %d did not converge "
                              "(residual %.3e)" % (step_idx, rnorm))
        self.solid.commit_displacement(x, scene)
        motion_trial.mesh = mesh_cur
        self.motion = motion_trial
        self.mesh_cur = mesh_cur
        info["residual"] = rnorm
        info["wall_time"] = time.perf_counter() - t0
        self.wall_time += info["wall_time"]
        return x, scene, info

    def _move_mesh(self, x, mesh_start, dt):
        lay = PuLayout(mesh_start, pb_map=self.pb_map)
        vb = lay.split(x)[0]
        nn = self.nn
        u = self.solid.u_prev + dt * vb
        mesh0 = self.mesh
        u_nodes = np.stack([u[:nn], u[nn:]], axis=-1)
        ref_p2 = np.vstack([self.ref_vertices,
                            0.5 * (self.ref_vertices[mesh0.edges[:, 0]]
                                   + self.ref_vertices[mesh0.edges[:, 1]])])
        start_p2 = np.vstack([mesh_start.vertices, mesh_start.midpoints])
        fixed = {}
        for n in p2_nodes_of_em_interface(mesh_start):
            tgt = ref_p2[n] + u_nodes[n]
            d = tgt - start_p2[n]
            fixed[int(n)] = (d[0], d[1])
        for tag in ("wall", "inflow", "outflow", "axis"):
            for n in mesh_start.nodes_with_tag(tag, "P2"):
                fixed.setdefault(int(n), (0.0, 0.0))
        motion = self.motion.clone()
        moved, _ = mesh_step(motion, fixed, dt)
        new_verts = moved.vertices.copy()
        solid_verts = np.unique(
            mesh0.triangles[mesh0.region_tris("solid")].ravel())
        target = self.ref_vertices + u_nodes[:mesh0.n_vertices]
        new_verts[solid_verts] = target[solid_verts]
        mesh_cur = mesh0.with_vertices(new_verts)
        vhat = _p2_displacement(mesh_start,
                                mesh_cur.vertices - mesh_start.vertices) \
            / dt
        return mesh_cur, vhat, motion

    def outputs(self, x, scene):
        u = self.solid.u_prev
        nn = self.nn
        q = self.motion.qualities()
        return {"tip_x": float(u[self.tip]),
                "tip_y": float(u[nn + self.tip]),
                "min_quality": float(q.min())}


def match_points(vertices, points, tol=1e-12):
    """Vertex ids of exact point matches (points are mesh inputs)."""
    key = {v.tobytes(): i for i, v in enumerate(vertices)}
    out = np.empty(len(points), dtype=np.int64)
    for k, p in enumerate(np.asarray(points, dtype=float)):
        j = key.get(p.tobytes())
        if j is None:
            d = np.linalg.norm(vertices - p, axis=1)
            j = int(np.argmin(d))
            if d[j] > tol:
                raise MeshError("point %s not found among vertices" % (p,))
        out[k] = j
    return out


def _classical_remesh(driver, x, h1, h2):
    """Rebuild the fitted mesh around the deformed leaflet.

    The solid keeps its material points: the deformed leaflet cloud is
    reused verbatim as the new solid vertex set, so the new reference
    configuration is exact (original cloud positions). Fluid fields and
    histories are interpolated; the mesh-quality normalization restarts
    from the fresh mesh.
    """
    from .quantities import PuFieldEvaluator
    old_mesh = driver.motion.mesh
    old_lay = PuLayout(old_mesh, pb_map=driver.pb_map)
    geo = driver.geo

    deformed_cloud = old_mesh.vertices[driver.cloud_ids]
    capsule2, poly2 = capsule_mesh(deformed_cloud, driver.seq, geo)
    new_mesh = valve_classical(geo, capsule2, poly2, driver.h)
    new_cloud_ids = match_points(new_mesh.vertices, deformed_cloud)
    refv = new_mesh.vertices.copy()
    refv[new_cloud_ids] = driver.cloud0
    pb2 = duplicated_pressure_map(new_mesh)
    solid2 = SolidModel(new_mesh, "b", driver.mu_s, ref_vertices=refv)
    solid2.u_prev = _p2_displacement(new_mesh, new_mesh.vertices - refv)
    new_lay = PuLayout(new_mesh, pb_map=pb2)
    nn2 = new_mesh.n_p2_nodes

    def interp(vec):
        ev = PuFieldEvaluator(old_lay, vec)
        out = np.zeros(new_lay.total)
        v = ev.velocity(new_mesh.p2_coords)
        out[:nn2] = v[:, 0]
        out[nn2:2 * nn2] = v[:, 1]
        pcoords = new_mesh.vertices[
            np.concatenate([np.arange(new_mesh.n_vertices),
                            pb2.interface_base])]
        out[new_lay.off_pb:] = ev.pressure(pcoords)
        return out

    x2, h12, h22 = interp(x), interp(h1), interp(h2)
    driver.mesh = new_mesh
    driver.ref_vertices = refv
    driver.cloud_ids = new_cloud_ids
    driver.pb_map = pb2
    driver.solid = solid2
    driver.motion = MotionState(new_mesh)
    ref_p2 = np.vstack([refv, 0.5 * (refv[new_mesh.edges[:, 0]]
                                     + refv[new_mesh.edges[:, 1]])])
    solid_nodes = np.unique(
        new_mesh.tri_p2[new_mesh.region_tris("solid")].ravel())
    target = np.array([geo.valve_x, geo.valve_height])
    driver.tip = int(solid_nodes[np.argmin(
        np.linalg.norm(ref_p2[solid_nodes] - target, axis=1))])
    driver.nn = nn2
    driver.total = new_lay.total
    driver.remeshed = True
    return x2, h12, h22


ValveFsiClassical.do_remesh = _classical_remesh
