"""Benchmark scenarios: cylinder convergence studies, the unsteady
channel-cylinder benchmark, and the oscillating-cylinder ALE test.

Each scenario builds its meshes from geometry parameters (or loads them
from mesh files), assembles the matching scene and produces a time
series plus a summary. The valve FSI scenario lives in
:mod:`puflow.valve`.
"""

import json
import time

import numpy as np

from .mesh import TriMesh, load_mesh
from .meshgen import rectangle, rectangle_with_hole, disk_with_ring
from .overlap import build_overlap
from .weighting import (build_psi, classify_constraints, WeightField,
                        fs_edge_ids, p2_nodes_of_edges,
                        effective_support_background,
                        effective_support_embedded)
from .assembly import PuLayout, SceneState
from .solvers import NewtonConfig, newton_solve, time_loop, NonConvergedError
from .quantities import (compute_forces, compute_pressure_drop,
                         compute_strouhal, boundary_flux, PuFieldEvaluator,
                         field_errors, fitted_rate)
from .dofs import eval_field


# ----------------------------------------------------------------------
# Dirichlet helpers
# ----------------------------------------------------------------------

def velocity_dirichlet(lay, side, mesh, spec):
    """Collect velocity Dirichlet data.

    ``spec`` maps a boundary tag to a callable points -> (m, 2); NaN
    entries leave that component free (slip/symmetry conditions).
    """
    dofs, vals = [], []
    for tag, fn in spec.items():
        nodes = mesh.nodes_with_tag(tag, "P2")
        if len(nodes) == 0:
            continue
        vv = np.asarray(fn(mesh.node_coords("P2")[nodes]), dtype=float)
        for c in (0, 1):
            keep = ~np.isnan(vv[:, c])
            dofs.extend(lay.vdof(side, nodes[keep], c).tolist())
            vals.extend(vv[keep, c].tolist())
    return dofs, vals


def embedded_solid_dirichlet(lay, em, velocity=(0.0, 0.0)):
    """Rigid-solid data: solid velocity plus interior pressure pins."""
    from .fsi import duplicated_pressure_map  # noqa: F401 (kept local)
    dofs, vals = [], []
    solid_nodes = np.unique(em.tri_p2[em.region_tris("solid")].ravel())
    for c in (0, 1):
        dofs.extend(lay.vdof("e", solid_nodes, c).tolist())
        vals.extend([velocity[c]] * len(solid_nodes))
    fs_verts = np.unique(em.edges[fs_edge_ids(em)].ravel())
    interior = np.setdiff1d(
        np.unique(em.triangles[em.region_tris("solid")].ravel()), fs_verts)
    dofs.extend(lay.pdof("e", interior).tolist())
    vals.extend([0.0] * len(interior))
    return dofs, vals


def no_slip(points):
    return np.zeros((len(points), 2))


def slip_y(points):
    out = np.full((len(points), 2), np.nan)
    out[:, 1] = 0.0
    return out


# ----------------------------------------------------------------------
# scene assembly
# ----------------------------------------------------------------------

def build_pufem_scene(bg, em, rho, mu, viscous_form, include_advection,
                      epsilon=0.1, psi_dirichlet=10.0, pe_map=None,
                      psi_values=None):
    psi = WeightField(em, psi_values) if psi_values is not None \
        else build_psi(em, psi_dirichlet)
    topo = build_overlap(bg, em)
    cs = classify_constraints(bg, em, psi, topo, epsilon=epsilon,
                              pe_map=pe_map)
    lay = PuLayout(bg, em, pe_map=pe_map)
    scene = SceneState(lay, rho=rho, mu=mu, viscous_form=viscous_form,
                       include_advection=include_advection, psi=psi,
                       topo=topo)
    scene.constraints = cs
    return scene


def build_classical_scene(mesh, rho, mu, viscous_form, include_advection,
                          pb_map=None):
    lay = PuLayout(mesh, pb_map=pb_map)
    return SceneState(lay, rho=rho, mu=mu, viscous_form=viscous_form,
                      include_advection=include_advection)


def steady_solve(scene, config=None, continuation=(), x0=None):
    """Steady solve with optional viscosity continuation fallback."""
    config = config or NewtonConfig(tol=1e-6, max_iter=40,
                                    jacobian_reuse_count=1)
    x = np.zeros(scene.layout.total) if x0 is None else x0
    if scene.include_advection and scene.rho != 0.0:
        # Stokes initialization: one exact linear solve
        adv, scene.include_advection = scene.include_advection, False
        rho0, scene.rho = scene.rho, 0.0
        scene.op.invalidate()
        from .assembly import assemble_ns_residual, assemble_ns_jacobian
        from .solvers import SparseFactor
        R = assemble_ns_residual(scene, x)
        fac = SparseFactor(assemble_ns_jacobian(scene, x),
                           layout=scene.layout)
        x = x + fac.solve(-R)
        scene.include_advection = adv
        scene.rho = rho0
        scene.op.invalidate()
    mus = list(continuation) + [scene.mu]
    mu_target = scene.mu
    for mu in mus:
        scene.mu = mu
        scene.op.invalidate()
        x, info = newton_solve(scene, x, config)
    scene.mu = mu_target
    return x, info


# ----------------------------------------------------------------------
# steady cylinder benchmarks (convergence studies)
# ----------------------------------------------------------------------

CYL_CENTER = (0.5, 0.5)
CYL_RADIUS = 0.15
RING_THICKNESS = 0.161


def cylinder_meshes(h, pairing="M1", mode="pufem"):
    """Meshes of the unit-square cylinder domain at spacing h.

    Counts derive from the base level h = 0.1 and scale exactly with
    1/h, so successive refinements halve every spacing.
    """
    tags = {"left": "inflow", "right": "outflow",
            "bottom": "axis", "top": "axis"}
    scale = 0.1 / h
    if mode == "classical":
        return rectangle_with_hole((0, 0, 1, 1), CYL_CENTER, CYL_RADIUS,
                                   h, tags=tags)
    n = int(round(10 * scale))
    bg = rectangle((0, 0, 1, 1), n, n, tags=tags)
    emscale = scale if pairing == "M1" else 2.0 * scale
    em = disk_with_ring(CYL_CENTER, CYL_RADIUS,
                        CYL_RADIUS + RING_THICKNESS, h,
                        n_theta=int(round(16 * emscale)),
                        n_solid=int(round(2 * emscale)),
                        n_fluid=int(round(3 * emscale)))
    return bg, em


def steady_cylinder_case(h, mode="pufem", pairing="M1", problem="stokes",
                         re=30, newton_tol=1e-6):
    """Solve one steady Stokes/Navier-Stokes cylinder case.

    Returns (scene, x). Inflow is uniform; side walls carry a symmetry
    condition (zero normal velocity); the cylinder is rigid.
    """
    if problem == "stokes":
        rho, mu, u_in = 0.0, 1.0, 1.0
        form, adv = "grad", False
    else:
        rho, mu = 1.0, 0.01
        u_in = 1.0 if re == 30 else 10.0 / 3.0
        form, adv = "sym", True

    def inflow(points):
        out = np.zeros((len(points), 2))
        out[:, 0] = u_in
        return out

    spec = {"inflow": inflow, "axis": slip_y}
    if mode == "classical":
        mesh = cylinder_meshes(h, mode="classical")
        scene = build_classical_scene(mesh, rho, mu, form, adv)
        lay = scene.layout
        dofs, vals = velocity_dirichlet(lay, "b", mesh, spec)
        nodes = mesh.nodes_with_tag("fs", "P2")
        for c in (0, 1):
            dofs.extend(lay.vdof("b", nodes, c).tolist())
            vals.extend([0.0] * len(nodes))
        scene.set_dirichlet(dofs, vals)
    else:
        bg, em = cylinder_meshes(h, pairing=pairing)
        scene = build_pufem_scene(bg, em, rho, mu, form, adv)
        lay = scene.layout
        dofs, vals = velocity_dirichlet(lay, "b", bg, spec)
        d2, v2 = embedded_solid_dirichlet(lay, em)
        scene.set_dirichlet(dofs + d2, vals + v2)
    cfg = NewtonConfig(tol=newton_tol, max_iter=40)
    continuation = ()
    if problem == "ns" and re >= 100:
        continuation = (mu * 10.0, mu * 3.0)
    x, _ = steady_solve(scene, cfg, continuation)
    return scene, x


def solution_evaluator(scene, x):
    if scene.layout.has_embedded:
        return PuFieldEvaluator(scene.layout, x, scene.psi)
    return PuFieldEvaluator(scene.layout, x)


def convergence_study(levels, mode, problem="stokes", re=30,
                      pairing="M1", reference=None, h_ref=0.005,
                      progress=None):
    """Error table of a mesh family against a fine classical reference.

    Returns a dict with per-level h, H1 velocity error, L2 pressure
    error, and fitted rates. ``reference`` may carry a precomputed
    (scene, x) pair to share between studies.
    """
    if reference is None:
        reference = steady_cylinder_case(h_ref, mode="classical",
                                         problem=problem, re=re)
    ref_scene, ref_x = reference
    rows = []
    for h in levels:
        t0 = time.perf_counter()
        scene, x = steady_cylinder_case(h, mode=mode, problem=problem,
                                        re=re, pairing=pairing)
        ev = solution_evaluator(scene, x)
        err_v, err_p = field_errors(ref_scene.layout.bg, ref_scene.layout,
                                    ref_x, ev)
        meshes = [scene.layout.bg] + ([scene.layout.em]
                                      if scene.layout.has_embedded else [])
        rows.append({
            "h": h,
            "err_v_h1": err_v,
            "err_p_l2": err_p,
            "mean_edge_length": meshes[0].mean_edge_length(),
            "circumcircle_h": float(np.mean(
                meshes[0].circumcircle_diameters())),
            "elements": int(sum(m.n_triangles for m in meshes)),
            "wall_time": time.perf_counter() - t0,
        })
        if progress:
            progress(rows[-1])
    hs = [r["h"] for r in rows]
    ev_ = [r["err_v_h1"] for r in rows]
    ep_ = [r["err_p_l2"] for r in rows]
    table = {
        "rows": rows,
        "rate_v": fitted_rate(hs, ev_),
        "rate_p": fitted_rate(hs, ep_),
        "rate_combined": fitted_rate(hs, np.add(ev_, ep_)),
    }
    for k in range(1, len(rows)):
        rows[k]["rate_v"] = float(np.log2(ev_[k - 1] / ev_[k]))
        rows[k]["rate_p"] = float(np.log2(ep_[k - 1] / ep_[k]))
    return table


# ----------------------------------------------------------------------
# unsteady channel-cylinder benchmark
# ----------------------------------------------------------------------

CHANNEL = (0.0, 0.0, 2.2, 0.41)
TUREK_CENTER = (0.2, 0.2)
TUREK_RADIUS = 0.05
TUREK_RING = 0.10
TUREK_U = 1.5
TUREK_W = 0.41
PRESSURE_PROBES = ((0.15, 0.2), (0.25, 0.2))


def turek_inflow(u_max, w, ramp=1.0):
    def fn(points):
        out = np.zeros((len(points), 2))
        y = points[:, 1]
        out[:, 0] = 4.0 * u_max * y * (w - y) / w ** 2 * ramp
        return out
    return fn


class ChannelCylinderScenario:
    """Vortex-shedding benchmark behind a fixed cylinder (overlapping
    or classical path)."""

    static_geometry = True

    def __init__(self, mode="pufem", h_bg=0.015, h_em=None, rho=1.0,
                 mu=0.001, background_mesh=None, embedded_mesh=None):
        self.mode = mode
        self.rho = rho
        self.mu = mu
        self.h_bg = h_bg
        self.h_em = h_em or h_bg
        self.background_mesh = background_mesh
        self.embedded_mesh = embedded_mesh
        self._built = None

    def _build(self):
        tags = {"left": "inflow", "right": "outflow",
                "bottom": "wall", "top": "wall"}
        if self.mode == "classical":
            mesh = self.background_mesh or rectangle_with_hole(
                CHANNEL, TUREK_CENTER, TUREK_RADIUS, self.h_bg, tags=tags)
            scene = build_classical_scene(mesh, self.rho, self.mu, "sym",
                                          True)
        else:
            bg = self.background_mesh or rectangle(
                CHANNEL, max(4, int(round(2.2 / self.h_bg))),
                max(4, int(round(0.41 / self.h_bg))), tags=tags)
            em = self.embedded_mesh or disk_with_ring(
                TUREK_CENTER, TUREK_RADIUS, TUREK_RADIUS + TUREK_RING,
                self.h_em,
                n_theta=max(16, int(round(
                    2 * np.pi * (TUREK_RADIUS + TUREK_RING / 2)
                    / self.h_em))))
            scene = build_pufem_scene(bg, em, self.rho, self.mu, "sym",
                                      True)
        self._built = scene
        return scene

    def scene(self):
        return self._built or self._build()

    def _apply_bc(self, scene, t):
        lay = scene.layout
        ramp = min(t, 1.0)
        spec = {"inflow": turek_inflow(TUREK_U, TUREK_W, ramp),
                "wall": no_slip}
        dofs, vals = velocity_dirichlet(lay, "b", lay.bg, spec)
        if self.mode == "classical":
            nodes = lay.bg.nodes_with_tag("fs", "P2")
            for c in (0, 1):
                dofs.extend(lay.vdof("b", nodes, c).tolist())
                vals.extend([0.0] * len(nodes))
        else:
            d2, v2 = embedded_solid_dirichlet(lay, lay.em)
            dofs += d2
            vals += v2
        scene.set_dirichlet(dofs, vals)

    def initial(self):
        scene = self.scene()
        self._apply_bc(scene, 0.0)
        return scene, np.zeros(scene.layout.total), {}

    def advance(self, scene, loop, t_new):
        self._apply_bc(scene, t_new)
        return scene

    def outputs(self, scene, loop):
        return benchmark_coefficients(scene, loop.x, self.rho, self.mu)


def benchmark_coefficients(scene, x, rho, mu, u_bar=1.0,
                           diameter=2 * TUREK_RADIUS,
                           probes=PRESSURE_PROBES):
    lay = scene.layout
    if lay.has_embedded:
        vb, ve, pb, pe = lay.split(x)
        fd, fl = compute_forces(lay.em, lay.ve, ve, lay.pe, pe, mu)
    else:
        vb, _, pb, _ = lay.split(x)
        mesh = lay.bg
        fd, fl = compute_forces(mesh, lay.vb, vb, lay.pb, pb, mu,
                                edge_ids=mesh.boundary_edges_with_tag("fs"))
    ev = solution_evaluator(scene, x)
    dp = compute_pressure_drop(ev.pressure, probes[0], probes[1])
    scale = 2.0 / (rho * u_bar ** 2 * diameter)
    return {"fd": fd, "fl": fl, "cd": scale * fd, "cl": scale * fl,
            "dp": dp}


# ----------------------------------------------------------------------
# oscillating cylinder (prescribed rigid motion)
# ----------------------------------------------------------------------

OSC_CENTER = (1.1, 0.205)
OSC_A = 0.2
OSC_OMEGA = 2.0 * np.pi


def cylinder_displacement(t, A=OSC_A, omega=OSC_OMEGA):
    """Two-branch displacement law with a smooth spin-up until t = 1."""
    t = np.asarray(t, dtype=float)
    early = A * np.sin(omega * t) / omega - A * t * np.cos(omega * t)
    late = -A * np.cos(omega * t)
    return np.where(t <= 1.0, early, late)


def cylinder_velocity(t, A=OSC_A, omega=OSC_OMEGA):
    t = np.asarray(t, dtype=float)
    early = A * omega * t * np.sin(omega * t)
    late = A * omega * np.sin(omega * t)
    return np.where(t <= 1.0, early, late)


class OscillatingCylinderPufem:
    """Embedded mesh translating rigidly through a fixed background."""

    static_geometry = False

    def __init__(self, h_bg=0.02, h_em=0.02, rho=1.0, mu=0.001,
                 epsilon=0.1):
        tags = {"left": "outflow", "right": "outflow",
                "bottom": "wall", "top": "wall"}
        self.bg = rectangle(CHANNEL, max(4, int(round(2.2 / h_bg))),
                            max(4, int(round(0.41 / h_bg))), tags=tags)
        self.em_ref = disk_with_ring(
            OSC_CENTER, TUREK_RADIUS, TUREK_RADIUS + TUREK_RING, h_em,
            n_theta=max(16, int(round(
                2 * np.pi * (TUREK_RADIUS + TUREK_RING / 2) / h_em))))
        self.psi_values = build_psi(self.em_ref).values
        self.rho = rho
        self.mu = mu
        self.epsilon = epsilon
        from .fsi import duplicated_pressure_map  # noqa
        self.pe_map = None

    def _scene_at(self, t):
        d = float(cylinder_displacement(t))
        dd = float(cylinder_velocity(t))
        em = self.em_ref.with_vertices(self.em_ref.vertices + [d, 0.0])
        scene = build_pufem_scene(self.bg, em, self.rho, self.mu, "sym",
                                  True, epsilon=self.epsilon,
                                  psi_values=self.psi_values)
        lay = scene.layout
        vhat = np.zeros(lay.ve.total_dofs)
        vhat[:lay.ve.n_nodes] = dd
        scene.vhat_e = vhat
        dofs, vals = velocity_dirichlet(lay, "b", self.bg,
                                        {"wall": no_slip})
        d2, v2 = embedded_solid_dirichlet(lay, em, velocity=(dd, 0.0))
        scene.set_dirichlet(dofs + d2, vals + v2)
        self._d = d
        self._dd = dd
        return scene

    def initial(self):
        scene = self._scene_at(0.0)
        return scene, np.zeros(scene.layout.total), {}

    def advance(self, scene, loop, t_new):
        return self._scene_at(t_new)

    def outputs(self, scene, loop):
        lay = scene.layout
        vb, ve, pb, pe = lay.split(loop.x)
        fd, fl = compute_forces(lay.em, lay.ve, ve, lay.pe, pe, self.mu)
        ev = solution_evaluator(scene, loop.x)
        cx = OSC_CENTER[0] + self._d
        dp = compute_pressure_drop(
            ev.pressure, (cx - TUREK_RADIUS, OSC_CENTER[1]),
            (cx + TUREK_RADIUS, OSC_CENTER[1]))
        return {"fd": fd, "fl": fl, "dp": dp, "d": self._d}

class OscillatingCylinderClassical:
    """Boundary-fitted path: the fitted mesh deforms with the cylinder."""

    static_geometry = False

    def __init__(self, h=0.02, rho=1.0, mu=0.001):
        from .mesh_motion import MotionState
        tags = {"left": "outflow", "right": "outflow",
                "bottom": "wall", "top": "wall"}
        mesh = rectangle_with_hole(CHANNEL, OSC_CENTER, TUREK_RADIUS, h,
                                   tags=tags)
        self.motion = MotionState(mesh)
        self.rho = rho
        self.mu = mu
        self._d = 0.0

    def _make_scene(self, mesh, vhat, dd, t):
        scene = build_classical_scene(mesh, self.rho, self.mu, "sym", True)
        scene.vhat_b = vhat
        lay = scene.layout
        dofs, vals = velocity_dirichlet(lay, "b", mesh,
                                        {"wall": no_slip})
        nodes = mesh.nodes_with_tag("fs", "P2")
        for c, val in ((0, dd), (1, 0.0)):
            dofs.extend(lay.vdof("b", nodes, c).tolist())
            vals.extend([val] * len(nodes))
        scene.set_dirichlet(dofs, vals)
        return scene

    def initial(self):
        mesh = self.motion.mesh
        scene = self._make_scene(mesh, None, 0.0, 0.0)
        return scene, np.zeros(scene.layout.total), {}

    def advance(self, scene, loop, t_new):
        from .mesh_motion import mesh_step
        mesh = self.motion.mesh
        d_new = float(cylinder_displacement(t_new))
        delta = d_new - self._d
        fs = mesh.nodes_with_tag("fs", "P2")
        walls = np.concatenate([mesh.nodes_with_tag("wall", "P2"),
                                mesh.nodes_with_tag("outflow", "P2")])
        fixed = {int(n): (delta, 0.0) for n in fs}
        fixed.update({int(n): (0.0, 0.0) for n in walls})
        dt = t_new - loop.t
        new_mesh, vhat = mesh_step(self.motion, fixed, dt)
        self._d = d_new
        dd = float(cylinder_velocity(t_new))
        return self._make_scene(new_mesh, vhat, dd, t_new)

    def outputs(self, scene, loop):
        lay = scene.layout
        mesh = lay.bg
        vb, _, pb, _ = lay.split(loop.x)
        fd, fl = compute_forces(mesh, lay.vb, vb, lay.pb, pb, self.mu,
                                edge_ids=mesh.boundary_edges_with_tag("fs"))
        ev = solution_evaluator(scene, loop.x)
        cx = OSC_CENTER[0] + self._d
        dp = compute_pressure_drop(
            ev.pressure, (cx - TUREK_RADIUS, OSC_CENTER[1]),
            (cx + TUREK_RADIUS, OSC_CENTER[1]))
        q = self.motion.qualities()
        return {"fd": fd, "fl": fl, "dp": dp, "d": self._d,
                "min_quality": float(q.min())}


# ----------------------------------------------------------------------
# diagnostics shared by the runners
# ----------------------------------------------------------------------

def global_flux_balance(scene, x):
    """Net boundary flux relative to the inflow flux."""
    lay = scene.layout
    vb = lay.split(x)[0]
    total = boundary_flux(lay.bg, lay.vb, vb)
    inflow = abs(boundary_flux(lay.bg, lay.vb, vb, tags=["inflow"]))
    if inflow == 0.0:
        inflow = abs(boundary_flux(lay.bg, lay.vb, vb, tags=["outflow"]))
    return total, inflow


def support_table(scene):
    """(node, side, field, E) diagnostic rows."""
    rows = []
    lay = scene.layout
    if not lay.has_embedded:
        return rows
    for kind, field in (("P2", "v"), ("P1", "p")):
        Eb = effective_support_background(kind, scene.topo, scene.psi)
        for n, e in enumerate(Eb):
            rows.append((n, "background", field, float(e)))
        Ee = effective_support_embedded(kind, lay.em, scene.psi)
        for n, e in enumerate(Ee):
            rows.append((n, "embedded", field, float(e)))
    return rows
