"""Derived quantities: surface forces, shedding frequency, pressure
probes, boundary fluxes and discretization-error norms."""

import numpy as np

from numpy.polynomial.legendre import leggauss

from .basis import eval_basis
from .dofs import eval_field
from .mesh import MeshError
from .quadrature import rule as quad_rule
from .weighting import fs_edge_ids


class ProbeError(Exception):
    pass


def _edge_gauss(n=3):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def interface_quadrature(mesh, edge_ids, n_gauss=3):
    """Quadrature on interface edges with normals out of the solid.

    Returns (points, weights, normals, fluid_tris) with shapes
    (ne, ng, 2), (ne, ng), (ne, 2), (ne,). For region-interface edges
    the adjacent fluid triangle is used; for boundary edges (classical
    hole meshes) the only triangle is the fluid one and the normal
    points into it.
    """
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    a = mesh.vertices[mesh.edges[edge_ids, 0]]
    b = mesh.vertices[mesh.edges[edge_ids, 1]]
    s, w = _edge_gauss(n_gauss)
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    lens = np.linalg.norm(b - a, axis=1)
    weights = w[None, :] * lens[:, None]
    t0 = mesh.edge_tris[edge_ids, 0]
    t1 = mesh.edge_tris[edge_ids, 1]
    fluid = np.where((t1 >= 0) & (mesh.tri_region[t0] == 1), t1, t0)
    # normal out of the solid = away from the solid neighbor; for
    # boundary edges, towards the fluid triangle's centroid
    nvec = np.stack([-(b - a)[:, 1], (b - a)[:, 0]], axis=-1)
    nvec /= np.linalg.norm(nvec, axis=1)[:, None]
    cent = mesh.vertices[mesh.triangles[fluid]].mean(axis=1)
    flip = np.einsum("ei,ei->e", cent - a, nvec) < 0.0
    nvec[flip] *= -1.0
    return pts, weights, nvec, fluid


def compute_forces(mesh, v_map, v_values, p_map, p_values, mu,
                   edge_ids=None, n_gauss=3):
    """Drag and lift from the stress on the fluid-solid interface.

    F_d = int mu dv_t/dn n_y - p n_x ; F_l = -int mu dv_t/dn n_x + p n_y,
    with n pointing from the solid into the fluid and v_t the tangential
    velocity component.
    """
    if edge_ids is None:
        edge_ids = fs_edge_ids(mesh)
    if len(edge_ids) == 0:
        raise ProbeError("no tagged fluid-solid interface on this mesh")
    pts, w, nvec, fluid = interface_quadrature(mesh, edge_ids, n_gauss)
    ne, ng, _ = pts.shape
    tri = np.repeat(fluid, ng)
    lam = mesh.barycentric(tri, pts.reshape(-1, 2))
    vv, gv = eval_field(mesh, v_map, v_values, tri, lam, grad=True)
    pp = eval_field(mesh, p_map, p_values, tri, lam)
    nrep = np.repeat(nvec, ng, axis=0)
    trep = np.stack([nrep[:, 1], -nrep[:, 0]], axis=-1)
    dvtdn = np.einsum("mi,mij,mj->m", trep, gv, nrep)
    wf = w.ravel()
    fd = np.sum(wf * (mu * dvtdn * nrep[:, 1] - pp * nrep[:, 0]))
    fl = -np.sum(wf * (mu * dvtdn * nrep[:, 0] + pp * nrep[:, 1]))
    return float(fd), float(fl)


def compute_pressure_drop(evaluate_pressure, point_front, point_back):
    """p(front) - p(back) through a pressure evaluator callable."""
    vals = evaluate_pressure(np.array([point_front, point_back]))
    return float(vals[0] - vals[1])


def compute_strouhal(times, cl, diameter, u_bar, startup_fraction=0.7):
    """Strouhal number from upward zero crossings of the lift series.

    The shedding frequency is the inverse mean period between upward
    crossings of (cl - mean cl), measured after the startup window.
    """
    times = np.asarray(times, dtype=float)
    cl = np.asarray(cl, dtype=float)
    t0 = times[0] + startup_fraction * (times[-1] - times[0])
    sel = times >= t0
    t = times[sel]
    y = cl[sel] - np.mean(cl[sel])
    up = np.nonzero((y[:-1] < 0.0) & (y[1:] >= 0.0))[0]
    if len(up) < 4:
        raise ProbeError("fewer than 3 full oscillation periods after "
                         "startup; cannot estimate the frequency")
    tc = t[up] + (t[up + 1] - t[up]) * (-y[up]) / (y[up + 1] - y[up])
    period = float(np.mean(np.diff(tc)))
    return float(diameter / (u_bar * period))


def boundary_flux(mesh, v_map, v_values, tags=None, n_gauss=3):
    """Net outward volume flux across tagged boundary edges."""
    if tags is None:
        edge_ids = mesh.boundary_edge_ids
    else:
        edge_ids = np.concatenate(
            [mesh.boundary_edges_with_tag(t) for t in tags]) \
            if tags else np.zeros(0, dtype=np.int64)
    if len(edge_ids) == 0:
        return 0.0
    a = mesh.vertices[mesh.edges[edge_ids, 0]]
    b = mesh.vertices[mesh.edges[edge_ids, 1]]
    s, w = _edge_gauss(n_gauss)
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    lens = np.linalg.norm(b - a, axis=1)
    tri = mesh.edge_tris[edge_ids, 0]
    nvec = np.stack([-(b - a)[:, 1], (b - a)[:, 0]], axis=-1)
    nvec /= np.linalg.norm(nvec, axis=1)[:, None]
    cent = mesh.vertices[mesh.triangles[tri]].mean(axis=1)
    flip = np.einsum("ei,ei->e", cent - a, nvec) > 0.0   # outward
    nvec[flip] *= -1.0
    ng = len(s)
    trep = np.repeat(tri, ng)
    lam = mesh.barycentric(trep, pts.reshape(-1, 2))
    vv = eval_field(mesh, v_map, v_values, trep, lam)
    wf = (w[None, :] * lens[:, None]).ravel()
    return float(np.sum(wf * np.einsum("mi,mi->m",
                                       vv, np.repeat(nvec, ng, axis=0))))


class PuFieldEvaluator:
    """Pointwise evaluation of the combined two-mesh solution."""

    def __init__(self, layout, x, psi=None, clamp_psi=False):
        self.layout = layout
        self.x = np.asarray(x, dtype=float)
        self.psi = psi
        self.clamp = clamp_psi

    def _bg_eval(self, points, coeffs, dof_map, grad):
        tri, lam = self.layout.bg.locate(points, extrapolate=True)
        return eval_field(self.layout.bg, dof_map, coeffs, tri, lam,
                          grad=grad)

    def velocity(self, points, grad=False):
        lay = self.layout
        vb, ve, _, _ = lay.split(self.x)
        out = self._bg_eval(points, vb, lay.vb, grad)
        vb_val, vb_grad = out if grad else (out, None)
        if not lay.has_embedded:
            return (vb_val, vb_grad) if grad else vb_val
        tri, lam = lay.em.locate(points)
        inside = tri >= 0
        if not np.any(inside):
            return (vb_val, vb_grad) if grad else vb_val
        em = lay.em
        tri_in = tri[inside]
        lam_in = lam[inside]
        oute = eval_field(em, lay.ve, ve, tri_in, lam_in, grad=grad)
        ve_val, ve_grad = oute if grad else (oute, None)
        nodal = self.psi.values[em.tri_p2[tri_in]]
        nvals, ngrads = eval_basis("P2", lam_in, check=False)
        pvals = np.einsum("mk,mk->m", nvals, nodal)
        if self.clamp:
            pvals = np.clip(pvals, 0.0, 1.0)
        val = vb_val.copy()
        val[inside] = (1 - pvals)[:, None] * vb_val[inside] \
            + pvals[:, None] * ve_val
        if not grad:
            return val
        jinv = em.jac_inv[tri_in]
        gref = np.einsum("mji,mkj->mki", jinv, ngrads)
        gpsi = np.einsum("mki,mk->mi", gref, nodal)
        gv = vb_grad.copy()
        diff = ve_val - vb_val[inside]
        gv[inside] = ((1 - pvals)[:, None, None] * vb_grad[inside]
                      + pvals[:, None, None] * ve_grad
                      + np.einsum("mi,mj->mij", diff, gpsi))
        return val, gv

    def pressure(self, points):
        lay = self.layout
        _, _, pb, pe = lay.split(self.x)
        pb_val = self._bg_eval(points, pb, lay.pb, False)
        if not lay.has_embedded:
            return pb_val
        tri, lam = lay.em.locate(points)
        inside = tri >= 0
        if not np.any(inside):
            return pb_val
        em = lay.em
        pe_val = eval_field(em, lay.pe, pe, tri[inside], lam[inside])
        nodal = self.psi.values[em.tri_p2[tri[inside]]]
        nvals, _ = eval_basis("P2", lam[inside], check=False)
        pvals = np.einsum("mk,mk->m", nvals, nodal)
        if self.clamp:
            pvals = np.clip(pvals, 0.0, 1.0)
        out = pb_val.copy()
        out[inside] = (1 - pvals) * pb_val[inside] + pvals * pe_val
        return out


def field_errors(ref_mesh, ref_layout, ref_x, evaluator, quad=None):
    """H1 velocity and L2 pressure error of a coarse solution.

    Integration runs over the (finer) reference mesh; the coarse
    solution is sampled through ``evaluator`` (a PuFieldEvaluator or
    anything with the same velocity/pressure interface).
    """
    quad = quad or quad_rule(4)
    mesh = ref_mesh
    tris = mesh.region_tris("fluid")
    nq = quad.npoints
    lam = quad.points
    tri_rep = np.repeat(tris, nq)
    lam_rep = np.tile(lam, (len(tris), 1))
    pts = mesh.physical_points(tri_rep, lam_rep)
    wdet = (mesh.areas[tris, None] * quad.weights[None, :]).ravel()

    vb, _, pb, _ = ref_layout.split(ref_x)
    v_ref, g_ref = eval_field(mesh, ref_layout.vb, vb, tri_rep, lam_rep,
                              grad=True)
    p_ref = eval_field(mesh, ref_layout.pb, pb, tri_rep, lam_rep)

    v_c, g_c = evaluator.velocity(pts, grad=True)
    p_c = evaluator.pressure(pts)

    dv = v_ref - v_c
    dg = g_ref - g_c
    dp = p_ref - p_c
    err_v = np.sqrt(np.sum(wdet * (np.einsum("mi,mi->m", dv, dv)
                                   + np.einsum("mij,mij->m", dg, dg))))
    err_p = np.sqrt(np.sum(wdet * dp * dp))
    return float(err_v), float(err_p)


def fitted_rate(hs, errors):
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
