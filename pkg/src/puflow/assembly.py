"""Residual and Jacobian assembly for the flow formulations.

The unknown vector is laid out in blocks [V_b, V_e, P_b, P_e] (embedded
blocks absent on the classical path); velocity blocks are component-major.
Integration runs over three kinds of contexts:

* plain background elements (full mesh; the two-stage scheme later
  subtracts the raw integrand over the overlap),
* tertiary sub-triangles carrying basis data of both parents and the
  weighting field,
* plain embedded fluid elements with the weighting field.

Background x background couplings assemble raw terms on the plain
context and (weighted - raw) on the tertiary context; cross couplings
live on the tertiary context only; embedded x embedded couplings on the
embedded context. On the classical path only the plain context exists
and all weights are one.
"""

import numpy as np
import scipy.sparse as sp

from .basis import eval_basis
from .dofs import DofMap
from .quadrature import rule as quad_rule


class AssemblyError(Exception):
    pass


# ----------------------------------------------------------------------
# DOF layout
# ----------------------------------------------------------------------

class PuLayout:
    """Global DOF layout [V_b | V_e | P_b | P_e]."""

    def __init__(self, bg_mesh, em_mesh=None, pe_map=None, pb_map=None):
        self.bg = bg_mesh
        self.em = em_mesh
        self.vb = DofMap.for_mesh(bg_mesh, "P2", 2)
        self.pb = pb_map if pb_map is not None \
            else DofMap.for_mesh(bg_mesh, "P1", 1)
        if em_mesh is not None:
            self.ve = DofMap.for_mesh(em_mesh, "P2", 2)
            self.pe = pe_map if pe_map is not None \
                else DofMap.for_mesh(em_mesh, "P1", 1)
        else:
            self.ve = None
            self.pe = None
        nvb = self.vb.total_dofs
        nve = self.ve.total_dofs if self.ve else 0
        npb = self.pb.total_dofs
        npe = self.pe.total_dofs if self.pe else 0
        self.off_vb = 0
        self.off_ve = nvb
        self.off_pb = nvb + nve
        self.off_pe = nvb + nve + npb
        self.total = nvb + nve + npb + npe

    @property
    def has_embedded(self):
        return self.em is not None

    def vdof(self, side, nodes, comp):
        if side == "b":
            return self.off_vb + self.vb.dof(nodes, comp)
        return self.off_ve + self.ve.dof(nodes, comp)

    def pdof(self, side, nodes):
        if side == "b":
            return self.off_pb + self.pb.dof(nodes)
        return self.off_pe + self.pe.dof(nodes)

    def split(self, x):
        """Split a global vector into (vb, ve, pb, pe) views."""
        return (x[self.off_vb:self.off_ve], x[self.off_ve:self.off_pb],
                x[self.off_pb:self.off_pe], x[self.off_pe:self.total])


# ----------------------------------------------------------------------
# integration contexts
# ----------------------------------------------------------------------

class PlainCtx:
    """Quadrature data over plain elements of one mesh."""

    def __init__(self, mesh, quad, tri_ids, vnodes_table, pnodes_table):
        self.mesh = mesh
        self.tri_ids = tri_ids
        nel = len(tri_ids)
        nq = quad.npoints
        self.wdet = mesh.areas[tri_ids, None] * quad.weights[None, :]
        n2, g2 = eval_basis("P2", quad.points, check=False)
        n1, g1 = eval_basis("P1", quad.points, check=False)
        self.N2 = np.broadcast_to(n2, (nel, nq, 6))
        self.N1 = np.broadcast_to(n1, (nel, nq, 3))
        jinv = mesh.jac_inv[tri_ids]
        self.G2 = np.einsum("mji,qkj->mqki", jinv, g2)
        self.G1 = np.einsum("mji,qkj->mqki", jinv, g1)
        self.vnodes = vnodes_table[tri_ids]
        self.pnodes = pnodes_table[tri_ids]
        self.psi = None      # weighting value at quadrature points
        self.gpsi = None
        self.nq = nq

    def set_weighting(self, psi_vals, psi_grads):
        self.psi = psi_vals
        self.gpsi = psi_grads


class TertCtx:
    """Quadrature data over the tertiary sub-triangles (both parents)."""

    def __init__(self, topo, layout):
        bg, em = topo.background, topo.embedded
        self.topo = topo
        self.wdet = topo.wdet
        ns, nq = topo.wdet.shape
        self.nq = nq
        bt = topo.sub_bg_tris()
        et = topo.sub_em_tris()
        self.bg_tris = bt
        self.em_tris = et
        n2b, g2b = eval_basis("P2", topo.bary_bg.reshape(-1, 3), check=False)
        n1b, g1b = eval_basis("P1", topo.bary_bg.reshape(-1, 3), check=False)
        n2e, g2e = eval_basis("P2", topo.bary_em.reshape(-1, 3), check=False)
        n1e, g1e = eval_basis("P1", topo.bary_em.reshape(-1, 3), check=False)
        jb = np.repeat(bg.jac_inv[bt], nq, axis=0)
        je = np.repeat(em.jac_inv[et], nq, axis=0)
        self.N2b = n2b.reshape(ns, nq, 6)
        self.N1b = n1b.reshape(ns, nq, 3)
        self.N2e = n2e.reshape(ns, nq, 6)
        self.N1e = n1e.reshape(ns, nq, 3)
        self.G2b = np.einsum("sji,skj->ski", jb, g2b).reshape(ns, nq, 6, 2)
        self.G1b = np.einsum("sji,skj->ski", jb, g1b).reshape(ns, nq, 3, 2)
        self.G2e = np.einsum("sji,skj->ski", je, g2e).reshape(ns, nq, 6, 2)
        self.G1e = np.einsum("sji,skj->ski", je, g1e).reshape(ns, nq, 3, 2)
        self.vnodes_b = layout.vb.cell_nodes[bt]
        self.pnodes_b = layout.pb.cell_nodes[bt]
        self.vnodes_e = layout.ve.cell_nodes[et]
        self.pnodes_e = layout.pe.cell_nodes[et]
        self.em_region = em.tri_region[et]
        self.psi = None
        self.gpsi = None

    def set_weighting(self, psi_vals, psi_grads):
        self.psi = psi_vals
        self.gpsi = psi_grads


def eval_psi_on_ctx(psi_values, ctx, side="e"):
    """Weighting value and gradient at context points via P2 expansion."""
    if isinstance(ctx, TertCtx):
        nodal = psi_values[ctx.topo.embedded.tri_p2[ctx.em_tris]]
        vals = np.einsum("sqk,sk->sq", ctx.N2e, nodal)
        grads = np.einsum("sqki,sk->sqi", ctx.G2e, nodal)
        return vals, grads
    nodes = ctx.mesh.tri_p2[ctx.tri_ids]
    vals = np.einsum("sqk,sk->sq", np.asarray(ctx.N2), psi_values[nodes])
    grads = np.einsum("sqki,sk->sqi", ctx.G2, psi_values[nodes])
    return vals, grads


# ----------------------------------------------------------------------
# low-level scatter helpers
# ----------------------------------------------------------------------

class CooBuilder:
    """Accumulates COO triplets for the global sparse matrix."""

    def __init__(self, n):
        self.n = n
        self.rows = []
        self.cols = []
        self.vals = []

    def add_block(self, elem_mat, row_dofs, col_dofs):
        """elem_mat (s, nt, nu), row_dofs (s, nt), col_dofs (s, nu)."""
        s, nt, nu = elem_mat.shape
        r = np.repeat(row_dofs[:, :, None], nu, axis=2)
        c = np.repeat(col_dofs[:, None, :], nt, axis=1)
        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.vals.append(elem_mat.ravel())

    def tocsr(self):
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)),
                             shape=(self.n, self.n)).tocsr()


def scatter_vector(out, elem_vec, row_dofs):
    out += np.bincount(row_dofs.ravel(), weights=elem_vec.ravel(),
                       minlength=len(out))


# ----------------------------------------------------------------------
# weighted test/trial data
# ----------------------------------------------------------------------

def weighted_family(ctx, family):
    """Weighted basis values/gradients for a test or trial family.

    family: ("b", kind) or ("e", kind) with kind "v" (P2) or "p" (P1).
    Returns (values, grads, vnode-table). On a TertCtx the weight is
    1 - psi for "b" and psi for "e" with the product-rule gradient; on a
    PlainCtx without weighting the raw data is returned.
    """
    side, kind = family
    cache = getattr(ctx, "_wcache", None)
    if cache is None:
        cache = ctx._wcache = {}
    hit = cache.get(family)
    if hit is not None:
        return hit
    if isinstance(ctx, TertCtx):
        if side == "b":
            N = ctx.N2b if kind == "v" else ctx.N1b
            G = ctx.G2b if kind == "v" else ctx.G1b
            nodes = ctx.vnodes_b if kind == "v" else ctx.pnodes_b
            w = 1.0 - ctx.psi
            gw = -ctx.gpsi
        else:
            N = ctx.N2e if kind == "v" else ctx.N1e
            G = ctx.G2e if kind == "v" else ctx.G1e
            nodes = ctx.vnodes_e if kind == "v" else ctx.pnodes_e
            w = ctx.psi
            gw = ctx.gpsi
        val = w[:, :, None] * N
        grad = w[:, :, None, None] * G + N[..., None] * gw[:, :, None, :]
        cache[family] = (val, grad, nodes)
        return val, grad, nodes
    # plain context
    N = ctx.N2 if kind == "v" else ctx.N1
    G = ctx.G2 if kind == "v" else ctx.G1
    nodes = ctx.vnodes if kind == "v" else ctx.pnodes
    if ctx.psi is None:
        out = (np.asarray(N), G, nodes)
        cache[family] = out
        return out
    if side != "e":
        raise AssemblyError("weighted plain context is embedded-side only")
    val = ctx.psi[:, :, None] * np.asarray(N)
    grad = ctx.psi[:, :, None, None] * G \
        + np.asarray(N)[..., None] * ctx.gpsi[:, :, None, :]
    cache[family] = (val, grad, nodes)
    return val, grad, nodes


def raw_family(ctx, family):
    """Unweighted basis data of one side on a context."""
    side, kind = family
    if isinstance(ctx, TertCtx):
        if side == "b":
            N = ctx.N2b if kind == "v" else ctx.N1b
            G = ctx.G2b if kind == "v" else ctx.G1b
            nodes = ctx.vnodes_b if kind == "v" else ctx.pnodes_b
        else:
            N = ctx.N2e if kind == "v" else ctx.N1e
            G = ctx.G2e if kind == "v" else ctx.G1e
            nodes = ctx.vnodes_e if kind == "v" else ctx.pnodes_e
        return np.asarray(N), G, nodes
    N = ctx.N2 if kind == "v" else ctx.N1
    G = ctx.G2 if kind == "v" else ctx.G1
    nodes = ctx.vnodes if kind == "v" else ctx.pnodes
    return np.asarray(N), G, nodes


def field_at_points(ctx, side, coeffs_xy, kind="v", weighted=True,
                    with_grad=True):
    """Evaluate a velocity-like field of one side at context points.

    coeffs_xy: (2, n_nodes) nodal components. When ``weighted`` the
    PU weight of that side multiplies the raw field (used to build the
    combined field); gradients then follow the product rule.
    Returns val (s, q, 2) and grad (s, q, 2, 2) with grad[..., i, j] =
    d v_i / d x_j.
    """
    fam = (side, kind)
    if weighted:
        N, G, nodes = weighted_family(ctx, fam)
    else:
        N, G, nodes = raw_family(ctx, fam)
    cx = coeffs_xy[0][nodes]
    cy = coeffs_xy[1][nodes]
    val = np.stack([np.einsum("sqk,sk->sq", N, cx),
                    np.einsum("sqk,sk->sq", N, cy)], axis=-1)
    if not with_grad:
        return val, None
    gx = np.einsum("sqki,sk->sqi", G, cx)
    gy = np.einsum("sqki,sk->sqi", G, cy)
    return val, np.stack([gx, gy], axis=-2)


# ----------------------------------------------------------------------
# scene state and operator
# ----------------------------------------------------------------------

class SceneState:
    """Everything needed to assemble one time/Newton step.

    For PUFEM scenes ``psi``/``topo`` bind the weighting field and the
    tertiary topology on the *current* embedded configuration; classical
    scenes leave them None. History vectors and the embedded mesh
    velocity default to zero. ``bdf`` holds the time-derivative stencil
    (c0, c1, c2) scaled such that d/dt v ~ (c0 v_n + c1 v_{n-1} +
    c2 v_{n-2}) / dt; None for steady problems.
    """

    def __init__(self, layout, rho, mu, dt=None, bdf=None, psi=None,
                 topo=None, quad=None, viscous_form="sym",
                 include_advection=True, vhat_e=None, vhat_b=None,
                 hist1=None, hist2=None):
        if layout.has_embedded and topo is None:
            raise AssemblyError("PUFEM layout requires an overlap topology")
        self.layout = layout
        self.rho = float(rho)
        self.mu = float(mu)
        self.dt = dt
        self.bdf = bdf
        self.psi = psi
        self.topo = topo
        self.quad = quad or quad_rule(6)
        self.viscous_form = viscous_form
        self.include_advection = include_advection
        self.vhat_e = vhat_e
        self.vhat_b = vhat_b
        self.hist1 = hist1
        self.hist2 = hist2
        self.dirichlet = ([], [])      # dof list, value list
        self.constraints = None        # weighting.ConstraintSet
        self.solid = None              # optional fsi.SolidModel
        self._op = None

    @property
    def op(self):
        if self._op is None:
            self._op = FlowOperator(self)
        return self._op

    def set_dirichlet(self, dofs, values):
        self.dirichlet = (np.asarray(dofs, dtype=np.int64),
                          np.asarray(values, dtype=float))
        if self._op is not None:
            self._op.rows = RowReplacement(self)

    def rows(self):
        """Replaced-row handler for Dirichlet and coupling constraints."""
        return self.op.rows


class FlowOperator:
    """Cached contexts and assembled pieces for one scene geometry."""

    def __init__(self, state):
        self.state = state
        lay = state.layout
        bg = lay.bg
        fluid_b = bg.region_tris("fluid")
        self.ctx_b = PlainCtx(bg, state.quad, fluid_b,
                              lay.vb.cell_nodes, lay.pb.cell_nodes)
        self.ctx_t = None
        self.ctx_tf = None
        if lay.has_embedded:
            ctx = TertCtx(state.topo, lay)
            vals, grads = eval_psi_on_ctx(state.psi.values, ctx)
            ctx.set_weighting(vals, grads)
            self.ctx_t = ctx
            self.ctx_tf = _subset_tert(ctx, ctx.em_region == 0)
        self._klin = None
        self._mvel = None
        self._kfull = None
        self._hist_vec = None
        self.rows = RowReplacement(state)

    # -- linear (state-independent) part of the operator --------------

    def linear_matrix(self):
        """Stress, pressure, continuity and ALE terms (no time mass)."""
        if self._klin is None:
            self._assemble_constant()
        return self._klin

    def mass_matrix(self):
        """Velocity mass matrix of the combined space (unscaled)."""
        if self._mvel is None:
            self._assemble_constant()
        return self._mvel

    def constant_matrix(self):
        st = self.state
        if st.bdf is None:
            return self.linear_matrix()
        coef = st.rho * st.bdf[0] / st.dt
        if self._kfull is None or self._kfull[0] != coef:
            self._kfull = (coef, (self.linear_matrix()
                                  + coef * self.mass_matrix()).tocsr())
        return self._kfull[1]

    def invalidate(self):
        self._klin = None
        self._mvel = None
        self._kfull = None
        self._hist_vec = None

    def _assemble_constant(self):
        st = self.state
        lay = st.layout
        coo = CooBuilder(lay.total)
        mass = CooBuilder(lay.total)
        # raw background terms over the full background mesh, then the
        # two-stage overlap correction
        self._raw_terms(coo, self.ctx_b, sign=+1.0, mass=mass)
        if lay.has_embedded:
            self._raw_terms(coo, self.ctx_t, sign=-1.0, mass=mass)
            self._weighted_terms(coo, self.ctx_tf, mass=mass)
        self._klin = coo.tocsr()
        self._mvel = mass.tocsr()

    def _raw_terms(self, coo, ctx, sign, mass):
        st = self.state
        lay = st.layout
        fam_v = ("b", "v")
        fam_p = ("b", "p")
        Nv, Gv, vn = raw_family(ctx, fam_v)
        Np, Gp, pn = raw_family(ctx, fam_p)
        w = ctx.wdet * sign
        rows_v = [lay.vdof("b", vn, c) for c in (0, 1)]
        rows_p = lay.pdof("b", pn)
        _add_viscous(coo, st, w, Nv, Gv, rows_v, Nv, Gv, rows_v)
        _add_pressure_divergence(coo, w, Gv, rows_v, Np, rows_p)
        _add_mass(mass, w, Nv, rows_v, Nv, rows_v)
        if st.vhat_b is not None and np.any(st.vhat_b):
            vh, _ = field_at_points(ctx, "b", st.vhat_b.reshape(2, -1),
                                    weighted=False, with_grad=False)
            adv = np.einsum("sqi,sqki->sqk", vh, Gv)
            mats = np.einsum("sq,sqi,sqj->sij", -st.rho * w, Nv, adv)
            for c in (0, 1):
                coo.add_block(mats, rows_v[c], rows_v[c])

    def _weighted_terms(self, coo, ctx, mass):
        st = self.state
        lay = st.layout
        fams = [("b", lay), ("e", lay)]
        data = {}
        for side, _ in fams:
            Nv, Gv, vn = weighted_family(ctx, (side, "v"))
            Np, Gp, pn = weighted_family(ctx, (side, "p"))
            data[side] = (Nv, Gv, [lay.vdof(side, vn, c) for c in (0, 1)],
                          Np, lay.pdof(side, pn))
        w = ctx.wdet
        for ts, _ in fams:
            Nt, Gt, rv_t, Npt, rp_t = data[ts]
            for us, _ in fams:
                Nu, Gu, rv_u, Npu, rp_u = data[us]
                _add_viscous(coo, st, w, Nt, Gt, rv_t, Nu, Gu, rv_u)
                _add_pressure_divergence(coo, w, Gt, rv_t, Npu, rp_u,
                                         q_test=(Npt, rp_t), Gu=Gu,
                                         rv_u=rv_u)
                _add_mass(mass, w, Nt, rv_t, Nu, rv_u)
        # ALE terms: embedded mesh velocity advection and the weighting
        # gradient transport, both zero where the weighting vanishes
        if st.vhat_e is not None and np.any(st.vhat_e):
            vhat = st.vhat_e.reshape(2, -1)
            vh, _ = field_at_points(ctx, "e", vhat, weighted=False,
                                    with_grad=False)
            Nve_r, Gve_r, vne = raw_family(ctx, ("e", "v"))
            Nvb_r, _, vnb = raw_family(ctx, ("b", "v"))
            rows_e = [lay.vdof("e", vne, c) for c in (0, 1)]
            rows_b = [lay.vdof("b", vnb, c) for c in (0, 1)]
            # -rho psi (vhat_e . grad) v_e
            adv = np.einsum("sqi,sqki->sqk", vh, Gve_r)
            coefs = -st.rho * ctx.psi * ctx.wdet
            for ts, _ in fams:
                Nt = data[ts][0]
                rv_t = data[ts][2]
                mats = np.einsum("sq,sqi,sqj->sij", coefs, Nt, adv)
                for c in (0, 1):
                    coo.add_block(mats, rv_t[c], rows_e[c])
            # -rho (vhat_e . grad psi)(v_e - v_b)
            vng = np.einsum("sqi,sqi->sq", vh, ctx.gpsi)
            coefs = -st.rho * vng * ctx.wdet
            for ts, _ in fams:
                Nt = data[ts][0]
                rv_t = data[ts][2]
                me = np.einsum("sq,sqi,sqj->sij", coefs, Nt, Nve_r)
                mb = np.einsum("sq,sqi,sqj->sij", -coefs, Nt, Nvb_r)
                for c in (0, 1):
                    coo.add_block(me, rv_t[c], rows_e[c])
                    coo.add_block(mb, rv_t[c], rows_b[c])
        return coo

    # -- nonlinear advection -------------------------------------------

    def _advection_state(self, ctx, x):
        """Velocity value and gradient of the combined field at points."""
        st = self.state
        lay = st.layout
        vb, ve, _, _ = lay.split(x)
        cb = vb.reshape(2, -1)
        if isinstance(ctx, TertCtx):
            valb, gradb = field_at_points(ctx, "b", cb, weighted=True)
            vale, grade = field_at_points(ctx, "e", ve.reshape(2, -1),
                                          weighted=True)
            return valb + vale, gradb + grade
        return field_at_points(ctx, "b", cb, weighted=False)

    def advection_jacobian(self, x):
        st = self.state
        lay = st.layout
        coo = CooBuilder(lay.total)
        if not st.include_advection or st.rho == 0.0:
            return coo.tocsr()
        # raw background part (plain + tertiary subtraction)
        for ctx, sign in self._bb_contexts():
            v, gv = self._advection_state(ctx, x) if not isinstance(ctx, TertCtx) \
                else self._raw_bg_state(ctx, x)
            Nv, Gv, vn = raw_family(ctx, ("b", "v"))
            rows = [lay.vdof("b", vn, c) for c in (0, 1)]
            self._adv_jac_blocks(coo, st.rho * sign * ctx.wdet, v, gv,
                                 Nv, Gv, rows, Nv, Gv, rows)
        if lay.has_embedded:
            ctx = self.ctx_tf
            v, gv = self._advection_state(ctx, x)
            data = {}
            for side in ("b", "e"):
                Nv, Gv, vn = weighted_family(ctx, (side, "v"))
                data[side] = (Nv, Gv,
                              [lay.vdof(side, vn, c) for c in (0, 1)])
            w = st.rho * ctx.wdet
            for ts in ("b", "e"):
                for us in ("b", "e"):
                    self._adv_jac_blocks(coo, w, v, gv, *data[ts],
                                         *data[us])
        return coo.tocsr()

    def _raw_bg_state(self, ctx, x):
        lay = self.state.layout
        vb = lay.split(x)[0].reshape(2, -1)
        return field_at_points(ctx, "b", vb, weighted=False)

    def _bb_contexts(self):
        out = [(self.ctx_b, +1.0)]
        if self.state.layout.has_embedded:
            out.append((self.ctx_t, -1.0))
        return out

    @staticmethod
    def _adv_jac_blocks(coo, w, v, gv, Nt, Gt, rows_t, Nu, Gu, rows_u):
        """d/dv of rho (v . grad v) . w for one family pair.

        Contributes  w_l * [ B (grad v)_{lj} + delta_lj (v . grad B) ].
        """
        vdotG = np.einsum("sqi,sqki->sqk", v, Gu)      # v . grad(trial)
        diag = np.einsum("sq,sqi,sqj->sij", w, Nt, vdotG)
        for c in (0, 1):
            coo.add_block(diag, rows_t[c], rows_u[c])
        for l in (0, 1):
            for j in (0, 1):
                mat = np.einsum("sq,sqi,sqj->sij", w * gv[:, :, l, j],
                                Nt, Nu)
                coo.add_block(mat, rows_t[l], rows_u[j])

    # -- residual -------------------------------------------------------

    def residual(self, x, constrained=True):
        """Weak-form residual at the iterate.

        Linear terms apply through the cached operator; only the
        self-advection (and any solid contribution) is evaluated
        pointwise.
        """
        st = self.state
        R = self.linear_matrix() @ x
        if st.bdf is not None:
            coef = st.rho / st.dt
            R += (coef * st.bdf[0]) * (self.mass_matrix() @ x)
            R += coef * self._history_vector()
        R += self._advection_residual(x)
        if st.solid is not None:
            st.solid.add_residual(R, x, st)
        if constrained:
            self.rows.apply_residual(R, x)
        return R

    def _history_vector(self):
        st = self.state
        key = (id(st.hist1), id(st.hist2), st.bdf)
        if self._hist_vec is None or self._hist_vec[0] != key:
            h = 0.0
            if st.bdf[1] and st.hist1 is not None:
                h = h + st.bdf[1] * st.hist1
            if st.bdf[2] and st.hist2 is not None:
                h = h + st.bdf[2] * st.hist2
            if np.ndim(h) == 0:
                vec = np.zeros(st.layout.total)
            else:
                vec = self.mass_matrix() @ h
            self._hist_vec = (key, vec)
        return self._hist_vec[1]

    def _advection_residual(self, x):
        st = self.state
        lay = st.layout
        R = np.zeros(lay.total)
        if not st.include_advection or st.rho == 0.0:
            return R
        for ctx, sign in self._bb_contexts():
            v, gv = self._raw_bg_state(ctx, x)
            f = np.einsum("sqij,sqj->sqi", gv, v)
            Nv, _, vn = raw_family(ctx, ("b", "v"))
            w = st.rho * sign * ctx.wdet
            for l in (0, 1):
                scatter_vector(R, np.einsum("sq,sqi->si", w * f[..., l],
                                            Nv), lay.vdof("b", vn, l))
        if lay.has_embedded:
            ctx = self.ctx_tf
            v, gv = self._advection_state(ctx, x)
            f = np.einsum("sqij,sqj->sqi", gv, v)
            w = st.rho * ctx.wdet
            for side in ("b", "e"):
                Nv, _, vn = weighted_family(ctx, (side, "v"))
                for l in (0, 1):
                    scatter_vector(R, np.einsum("sq,sqi->si",
                                                w * f[..., l], Nv),
                                   lay.vdof(side, vn, l))
        return R





    def jacobian(self, x, constrained=True):
        J = self.constant_matrix() + self.advection_jacobian(x)
        if self.state.solid is not None:
            J = J + self.state.solid.jacobian(x, self.state)
        if constrained:
            J = self.rows.apply_matrix(J)
        return J


def _subset_tert(ctx, mask):
    """Restricted view of a TertCtx (fluid-region sub-triangles)."""
    import copy
    sub = copy.copy(ctx)
    sub._wcache = {}
    for name in ("wdet", "N2b", "N1b", "N2e", "N1e", "G2b", "G1b", "G2e",
                 "G1e", "vnodes_b", "pnodes_b", "vnodes_e", "pnodes_e",
                 "em_region", "bg_tris", "em_tris", "psi", "gpsi"):
        val = getattr(ctx, name)
        if val is not None:
            setattr(sub, name, val[mask])
    return sub


def _scalar_at_points(ctx, family, coeffs, raw=False):
    if raw:
        N, _, nodes = raw_family(ctx, family)
    else:
        N, _, nodes = weighted_family(ctx, family)
    return np.einsum("sqk,sk->sq", N, coeffs[nodes])


def _add_viscous(coo, st, w, Nt, Gt, rows_t, Nu, Gu, rows_u):
    mu = st.mu
    full = np.einsum("sq,sqik,sqjk->sij", w * mu, Gt, Gu)
    for c in (0, 1):
        coo.add_block(full, rows_t[c], rows_u[c])
    if st.viscous_form == "sym":
        for l in (0, 1):
            for j in (0, 1):
                mat = np.einsum("sq,sqi,sqj->sij", w * mu,
                                Gt[:, :, :, j], Gu[:, :, :, l])
                coo.add_block(mat, rows_t[l], rows_u[j])


def _add_pressure_divergence(coo, w, Gt, rows_t, Npu, rows_pu,
                             q_test=None, Gu=None, rv_u=None):
    """-p div(w) momentum columns and +q div(v) continuity rows."""
    for l in (0, 1):
        mat = np.einsum("sq,sqi,sqj->sij", w, Gt[:, :, :, l], Npu)
        coo.add_block(-mat, rows_t[l], rows_pu)
    if q_test is None:
        # raw context: continuity rows pair with the same family
        Npt, rows_pt = Npu, rows_pu
        Gu, rv_u = Gt, rows_t
    else:
        Npt, rows_pt = q_test
    for j in (0, 1):
        mat = np.einsum("sq,sqi,sqj->sij", w, Npt, Gu[:, :, :, j])
        coo.add_block(mat, rows_pt, rv_u[j])


def _add_mass(coo, w, Nt, rows_t, Nu, rows_u):
    mat = np.einsum("sq,sqi,sqj->sij", w, Nt, Nu)
    for c in (0, 1):
        coo.add_block(mat, rows_t[c], rows_u[c])


# ----------------------------------------------------------------------
# Dirichlet and coupling-constraint row replacement
# ----------------------------------------------------------------------

class RowReplacement:
    """Replaces matrix/residual rows for Dirichlet data and constraints.

    Constraint rows encode x_c - sum_i w_i x_i = rhs_c; Dirichlet rows
    x_d = g_d. Replacement (not symmetric elimination) keeps the system
    square and is applied to both the Jacobian and the residual.
    """

    def __init__(self, state):
        self.state = state
        self._built = False

    def _build(self):
        st = self.state
        n = st.layout.total
        dir_dofs, dir_vals = st.dirichlet
        dir_dofs = np.asarray(dir_dofs, dtype=np.int64)
        dir_vals = np.asarray(dir_vals, dtype=float)
        if len(dir_dofs):
            # corner nodes may be tagged twice; identical values collapse
            order = np.argsort(dir_dofs, kind="stable")
            dir_dofs = dir_dofs[order]
            dir_vals = dir_vals[order]
            first = np.concatenate([[True], np.diff(dir_dofs) != 0])
            grp = np.cumsum(first) - 1
            ref = dir_vals[first][grp]
            if np.any(np.abs(dir_vals - ref) > 1e-12 * (1 + np.abs(ref))):
                bad = dir_dofs[np.abs(dir_vals - ref) > 1e-12]
                raise AssemblyError(
                    "conflicting Dirichlet values on dofs %s"
                    % np.unique(bad)[:10].tolist())
            dir_dofs = dir_dofs[first]
            dir_vals = dir_vals[first]
        rows = [dir_dofs]
        cols = [dir_dofs]
        vals = [np.ones(len(dir_dofs))]
        rhs = np.zeros(n)
        rhs[dir_dofs] = dir_vals
        con = st.constraints
        if con is not None and len(con.entries):
            cd = con.global_dofs(st.layout)
            sr, sc, sw, srhs = con.stencil_triplets(st.layout)
            # Dirichlet data wins over interpolation constraints (e.g.
            # interface nodes that also lie on a wall)
            is_dir = np.zeros(n, dtype=bool)
            is_dir[dir_dofs] = True
            keep_c = ~is_dir[cd]
            cd = cd[keep_c]
            keep_s = ~is_dir[sr]
            sr, sc, sw = sr[keep_s], sc[keep_s], sw[keep_s]
            srhs = srhs[keep_c]
            rows.append(cd)
            cols.append(cd)
            vals.append(np.ones(len(cd)))
            rows.append(sr)
            cols.append(sc)
            vals.append(-sw)
            rhs[cd] = srhs
            replaced = np.concatenate([dir_dofs, cd])
        else:
            replaced = dir_dofs
        if len(np.unique(replaced)) != len(replaced):
            raise AssemblyError("conflicting prescriptions on a DOF")
        self.replaced = replaced
        self.rhs = rhs
        keep = np.ones(n)
        keep[replaced] = 0.0
        self._keep_diag = sp.diags(keep, format="csr")
        self._pattern = sp.coo_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        # Before a constrained row is replaced, its original equation is
        # distributed onto its stencil masters (hanging-node style): the
        # constant-pressure test function stays in the span of the
        # enforced equations, which preserves global mass conservation.
        # Masters that are themselves replaced receive nothing.
        if con is not None and len(con.entries) and len(cd):
            w_keep = keep[sc] > 0.0
            srk, sck, swk = sr[w_keep], sc[w_keep], sw[w_keep]
            # renormalize over the surviving masters so each distributed
            # equation is carried with unit total weight
            tot_w = np.zeros(n)
            np.add.at(tot_w, srk, swk)
            scale = np.where(np.abs(tot_w[srk]) > 1e-6,
                             1.0 / np.where(tot_w[srk] == 0.0, 1.0,
                                            tot_w[srk]), 0.0)
            self._spread = sp.coo_matrix(
                (swk * scale, (sck, srk)), shape=(n, n)).tocsr()
        else:
            self._spread = None
        self._built = True

    def apply_matrix(self, J):
        if not self._built:
            self._build()
        if self._spread is not None:
            J = J + self._spread @ J
        return (self._keep_diag @ J + self._pattern).tocsc()

    def apply_residual(self, R, x):
        if not self._built:
            self._build()
        if self._spread is not None:
            R += self._spread @ R
        rep = self.replaced
        R[rep] = (self._pattern @ x)[rep] - self.rhs[rep]
        return R


# ----------------------------------------------------------------------
# spec-level entry points
# ----------------------------------------------------------------------

class BlockSystem:
    """Constrained sparse saddle-point system with block offsets."""

    def __init__(self, matrix, rhs, layout):
        self.matrix = matrix
        self.rhs = rhs
        self.layout = layout
        self.offsets = (layout.off_vb, layout.off_ve, layout.off_pb,
                        layout.off_pe, layout.total)


def assemble_stokes_pufem(state):
    """Assemble the constrained steady Stokes block system."""
    op = state.op
    K = op.constant_matrix()
    K = op.rows.apply_matrix(K)
    rhs = np.zeros(state.layout.total)
    R0 = np.zeros(state.layout.total)
    op.rows.apply_residual(R0, np.zeros(state.layout.total))
    return BlockSystem(K, -R0, state.layout)


def assemble_ns_residual(state, iterate, constrained=True):
    R = state.op.residual(np.asarray(iterate, dtype=float),
                          constrained=constrained)
    if not np.all(np.isfinite(R)):
        bad = int(np.nonzero(~np.isfinite(R))[0][0])
        raise AssemblyError("non-finite residual at dof %d" % bad)
    return R


def assemble_ns_jacobian(state, iterate, constrained=True):
    return state.op.jacobian(np.asarray(iterate, dtype=float),
                             constrained=constrained)


def apply_constraints(system, dirichlet, constraints, layout=None):
    """Row-replacement application to an assembled BlockSystem."""
    lay = layout or system.layout

    class _St:
        pass
    st = _St()
    st.layout = lay
    st.dirichlet = dirichlet
    st.constraints = constraints
    rows = RowReplacement(st)
    mat = rows.apply_matrix(system.matrix)
    rhs = system.rhs.copy()
    x0 = np.zeros(lay.total)
    R0 = np.zeros(lay.total)
    rows.apply_residual(R0, x0)
    rhs[rows.replaced] = -R0[rows.replaced]
    return BlockSystem(mat, rhs, lay)
