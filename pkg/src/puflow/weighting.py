"""Weighting field, effective-support metric and coupling constraints.

The weighting field on the embedded mesh is built by a harmonic ramp:
a P2 Laplace solve with value 0 on the fluid-fluid interface and a
large value (default 10) on the fluid-solid interface, clamped to one
and smoothed nodally with the hermite polynomial -2u^3 + 3u^2. Solid
nodes carry the value one. Nodal coefficients live in [0, 1]; the
quadratic expansion between nodes may overshoot slightly and is clamped
on diagnostic evaluation only, so that assembled integrands stay
polynomial (see build notes in the repository root).

Constrained-node classification follows the effective-support metric:
interpolation rows tie embedded interface nodes to the background field,
buried background nodes to the embedded field, and low-support
background pressure nodes to the embedded pressure.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import eval_basis
from .dofs import DofMap
from .mesh import MeshError
from .quadrature import rule as quad_rule
from .assembly import PlainCtx, TertCtx, eval_psi_on_ctx


class ConstraintError(Exception):
    pass


def hermite_smooth(u):
    """Cubic smoothing -2u^3 + 3u^2, clamped to [0, 1] outside."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def fs_edge_ids(mesh):
    """Fluid-solid interface edges: tagged boundary plus region interface."""
    tagged = mesh.boundary_edges_with_tag("fs")
    two = np.nonzero(mesh.edge_counts == 2)[0]
    t0 = mesh.edge_tris[two, 0]
    t1 = mesh.edge_tris[two, 1]
    iface = two[mesh.tri_region[t0] != mesh.tri_region[t1]]
    return np.unique(np.concatenate([tagged, iface]))


class WeightField:
    """P2 partition-of-unity weighting on the embedded mesh.

    ``values`` are nodal coefficients on the reference embedded mesh;
    they ride along when the mesh moves. ``eval`` clamps to [0, 1];
    assembly uses the raw polynomial expansion.
    """

    def __init__(self, mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_p2_nodes,):
            raise ValueError("weight field length mismatch")
        self.mesh = mesh
        self.values = values
        self.dof_map = DofMap.for_mesh(mesh, "P2", 1)

    def eval(self, tri, lam, clamp=True):
        vals, _ = eval_basis("P2", np.atleast_2d(lam), check=False)
        nodal = self.values[self.mesh.tri_p2[np.atleast_1d(tri)]]
        out = np.einsum("mk,mk->m", vals, nodal)
        return np.clip(out, 0.0, 1.0) if clamp else out

    def check_invariants(self):
        if np.any(self.values < -1e-14) or np.any(self.values > 1 + 1e-14):
            raise ValueError("weight coefficients leave [0, 1]")
        mesh = self.mesh
        ff = mesh.nodes_with_tag("ff", "P2")
        if len(ff) and np.max(np.abs(self.values[ff])) != 0.0:
            raise ValueError("weight not exactly zero on the outer interface")
        fs = p2_nodes_of_edges(mesh, fs_edge_ids(mesh))
        if len(fs) and np.min(self.values[fs]) != 1.0:
            raise ValueError("weight not exactly one on the solid interface")


def p2_nodes_of_edges(mesh, edge_ids):
    if len(edge_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    verts = np.unique(mesh.edges[np.asarray(edge_ids)].ravel())
    return np.unique(np.concatenate(
        [verts, np.asarray(edge_ids) + mesh.n_vertices]))


def p2_scalar_stiffness(mesh, tri_ids, quad=None):
    quad = quad or quad_rule(6)
    n2, g2 = eval_basis("P2", quad.points, check=False)
    jinv = mesh.jac_inv[tri_ids]
    G = np.einsum("mji,qkj->mqki", jinv, g2)
    wdet = mesh.areas[tri_ids, None] * quad.weights[None, :]
    mats = np.einsum("sq,sqik,sqjk->sij", wdet, G, G)
    nodes = mesh.tri_p2[tri_ids]
    rows = np.repeat(nodes[:, :, None], 6, axis=2).ravel()
    cols = np.repeat(nodes[:, None, :], 6, axis=1).ravel()
    n = mesh.n_p2_nodes
    return sp.coo_matrix((mats.ravel(), (rows, cols)),
                         shape=(n, n)).tocsr()


def build_psi(embedded, dirichlet_value=10.0):
    """Construct the weighting field on the embedded mesh.

    Harmonic ramp on the fluid region (0 on "ff", ``dirichlet_value`` on
    the solid interface), clamped at one, hermite-smoothed nodally, and
    set to one on every solid-region node.
    """
    mesh = embedded
    fluid = mesh.region_tris("fluid")
    ff_nodes = mesh.nodes_with_tag("ff", "P2")
    fs_nodes = p2_nodes_of_edges(mesh, fs_edge_ids(mesh))
    if len(ff_nodes) == 0 or len(fs_nodes) == 0:
        raise MeshError("embedded mesh needs both 'ff' and solid-interface "
                        "edges to build the weighting field")
    K = p2_scalar_stiffness(mesh, fluid).tolil()
    n = mesh.n_p2_nodes
    rhs = np.zeros(n)
    fixed = np.concatenate([ff_nodes, fs_nodes])
    vals = np.concatenate([np.zeros(len(ff_nodes)),
                           np.full(len(fs_nodes), float(dirichlet_value))])
    # nodes without fluid support (solid interior) are pinned as well
    diag = K.diagonal()
    inactive = np.nonzero(diag == 0.0)[0]
    inactive = np.setdiff1d(inactive, fixed)
    fixed = np.concatenate([fixed, inactive])
    vals = np.concatenate([vals, np.full(len(inactive), dirichlet_value)])
    K[fixed, :] = 0.0
    K[fixed, fixed] = 1.0
    rhs[fixed] = vals
    K = K.tocsc()
    try:
        u = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise MeshError("weighting solve failed: %s" % exc)
    u = np.clip(u, 0.0, 1.0)
    u = hermite_smooth(u)
    u[fs_nodes] = 1.0
    u[ff_nodes] = 0.0
    solid = mesh.region_tris("solid")
    if len(solid):
        u[np.unique(mesh.tri_p2[solid].ravel())] = 1.0
    field = WeightField(mesh, u)
    field.check_invariants()
    return field


# ----------------------------------------------------------------------
# effective support fraction
# ----------------------------------------------------------------------

def _basis_sq_per_node(N, wdet, nodes, out):
    np.add.at(out, nodes.ravel(),
              np.einsum("sq,sqi->si", wdet, N * N).ravel())


def effective_support_background(kind, topo, psi, quad=None):
    """E for every background node of the given basis kind.

    Integrals run over the fluid region: the background domain minus the
    embedded solid, with the weight 1 - psi inside the overlap.
    """
    quad = quad or topo.quadrature
    bg = topo.background
    vtab = bg.tri_p2 if kind == "P2" else bg.triangles
    nn = bg.n_p2_nodes if kind == "P2" else bg.n_vertices
    ctx = PlainCtx(bg, quad, np.arange(bg.n_triangles), bg.tri_p2,
                   bg.triangles)
    full = np.zeros(nn)
    N = np.asarray(ctx.N2 if kind == "P2" else ctx.N1)
    _basis_sq_per_node(N, ctx.wdet, vtab[ctx.tri_ids], full)

    lay = _MiniLayout(bg, topo.embedded)
    tert = TertCtx(topo, lay)
    vals, grads = eval_psi_on_ctx(psi.values, tert)
    Nt = tert.N2b if kind == "P2" else tert.N1b
    nodes_t = vtab[tert.bg_tris]
    raw_t = np.zeros(nn)
    _basis_sq_per_node(np.asarray(Nt), tert.wdet, nodes_t, raw_t)
    fluid = tert.em_region == 0
    raw_fl = np.zeros(nn)
    w_fl = np.zeros(nn)
    _basis_sq_per_node(np.asarray(Nt)[fluid], tert.wdet[fluid],
                       nodes_t[fluid], raw_fl)
    _basis_sq_per_node((1.0 - vals[fluid])[:, :, None]
                       * np.asarray(Nt)[fluid],
                       tert.wdet[fluid], nodes_t[fluid], w_fl)
    num = full - raw_t + w_fl
    den = full - raw_t + raw_fl
    E = np.zeros(nn)
    ok = den > 1e-12 * np.maximum(full, 1e-300)
    E[ok] = num[ok] / den[ok]
    return np.clip(E, 0.0, 1.0)


def effective_support_embedded(kind, embedded, psi, quad=None):
    """E for embedded nodes: fluid-region integrals with weight psi."""
    quad = quad or quad_rule(6)
    mesh = embedded
    fluid = mesh.region_tris("fluid")
    ctx = PlainCtx(mesh, quad, fluid, mesh.tri_p2, mesh.triangles)
    vals, grads = eval_psi_on_ctx(psi.values, ctx)
    vtab = mesh.tri_p2 if kind == "P2" else mesh.triangles
    nn = mesh.n_p2_nodes if kind == "P2" else mesh.n_vertices
    N = np.asarray(ctx.N2 if kind == "P2" else ctx.N1)
    nodes = vtab[fluid]
    den = np.zeros(nn)
    num = np.zeros(nn)
    _basis_sq_per_node(N, ctx.wdet, nodes, den)
    _basis_sq_per_node(vals[:, :, None] * N, ctx.wdet, nodes, num)
    E = np.zeros(nn)
    ok = den > 1e-300
    E[ok] = num[ok] / den[ok]
    return np.clip(E, 0.0, 1.0)


def effective_support(dof_node, mesh_side, psi, overlap, kind="P2"):
    """Effective support fraction of a single node (spec interface)."""
    if mesh_side == "background":
        return float(effective_support_background(kind, overlap, psi)
                     [dof_node])
    return float(effective_support_embedded(kind, overlap.embedded, psi)
                 [dof_node])


class _MiniLayout:
    """Just enough of a layout for TertCtx construction."""

    def __init__(self, bg, em):
        self.vb = DofMap.for_mesh(bg, "P2", 1)
        self.pb = DofMap.for_mesh(bg, "P1", 1)
        self.ve = DofMap.for_mesh(em, "P2", 1)
        self.pe = DofMap.for_mesh(em, "P1", 1)


# ----------------------------------------------------------------------
# constraint classification
# ----------------------------------------------------------------------

class ConstraintEntry:
    __slots__ = ("side", "field", "node", "kind", "opp_tri",
                 "stencil_nodes", "weights")

    def __init__(self, side, field, node, kind, opp_tri, stencil_nodes,
                 weights):
        self.side = side
        self.field = field
        self.node = int(node)
        self.kind = kind
        self.opp_tri = int(opp_tri)
        self.stencil_nodes = np.asarray(stencil_nodes, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=float)


class ConstraintSet:
    """The four constrained-node sets with resolved interpolation rows."""

    def __init__(self, entries):
        self.entries = entries

    def nodes(self, side, field):
        return np.array(sorted(e.node for e in self.entries
                               if e.side == side and e.field == field),
                        dtype=np.int64)

    @property
    def xv_b(self):
        return self.nodes("b", "v")

    @property
    def xv_e(self):
        return self.nodes("e", "v")

    @property
    def xp_b(self):
        return self.nodes("b", "p")

    @property
    def xp_e(self):
        return self.nodes("e", "p")

    def kinds(self):
        return sorted({e.kind for e in self.entries})

    def global_dofs(self, layout):
        dofs = []
        for e in self.entries:
            if e.field == "v":
                dofs.append(layout.vdof(e.side, e.node, 0))
                dofs.append(layout.vdof(e.side, e.node, 1))
            else:
                dofs.append(layout.pdof(e.side, e.node))
        return np.asarray(dofs, dtype=np.int64)

    def stencil_triplets(self, layout):
        rows, cols, w = [], [], []
        rhs = []
        for e in self.entries:
            opp = "e" if e.side == "b" else "b"
            if e.field == "v":
                for c in (0, 1):
                    r = layout.vdof(e.side, e.node, c)
                    rows.extend([r] * len(e.stencil_nodes))
                    cols.extend(layout.vdof(opp, e.stencil_nodes, c))
                    w.extend(e.weights)
                    rhs.append(0.0)
            else:
                r = layout.pdof(e.side, e.node)
                rows.extend([r] * len(e.stencil_nodes))
                cols.extend(layout.pdof(opp, e.stencil_nodes))
                w.extend(e.weights)
                rhs.append(0.0)
        return (np.asarray(rows, dtype=np.int64),
                np.asarray(cols, dtype=np.int64),
                np.asarray(w, dtype=float),
                np.asarray(rhs, dtype=float))


def _nodes_near_edges(coords, mesh, edge_ids, tol):
    """Mask of coords lying within tol of any of the given edges."""
    if len(edge_ids) == 0:
        return np.zeros(len(coords), dtype=bool)
    segs = mesh.vertices[mesh.edges[edge_ids]]
    a = segs[:, 0]
    b = segs[:, 1]
    ab = b - a
    ab2 = np.einsum("ei,ei->e", ab, ab)
    mask = np.zeros(len(coords), dtype=bool)
    for k in range(len(segs)):
        d = coords - a[k]
        t = np.clip((d @ ab[k]) / ab2[k], 0.0, 1.0)
        proj = a[k] + t[:, None] * ab[k]
        mask |= np.linalg.norm(coords - proj, axis=1) < tol
    return mask


def classify_constraints(background, embedded, psi, overlap, epsilon=0.1,
                         pe_map=None):
    """Build the constrained-node sets and their interpolation stencils.

    Embedded nodes on the outer interface copy the background field
    (interface-copy); background nodes buried under the embedded mesh
    copy the embedded field (covered-copy, or solid-velocity when the
    owning embedded element is solid); background pressure nodes with
    effective support below ``epsilon`` copy the embedded pressure
    (low-support-copy), or are pinned to zero when they have no fluid
    support and no embedded pressure exists below them (inactive-pin,
    rigid scenarios only).
    """
    bg, em = background, embedded
    entries = []
    diam = float(np.mean(np.sqrt(bg.areas)))
    snap = 1e-9 * diam
    ff_edges = em.boundary_edges_with_tag("ff")

    # --- embedded interface nodes ------------------------------------
    for kind_f, field, table in (("P2", "v", None), ("P1", "p", None)):
        nodes = em.nodes_on_edges(ff_edges, kind_f)
        coords = em.node_coords(kind_f)[nodes]
        tri, lam = bg.locate(coords, tol=1e-8)
        if np.any(tri < 0):
            bad = nodes[np.nonzero(tri < 0)[0][:5]]
            raise ConstraintError(
                "embedded interface nodes not locatable in the background "
                "mesh: %s" % bad.tolist())
        vals, _ = eval_basis(kind_f, lam, check=False)
        vtab = bg.tri_p2 if kind_f == "P2" else bg.triangles
        for i, node in enumerate(nodes):
            entries.append(ConstraintEntry(
                "e", field, node, "interface-copy", tri[i],
                vtab[tri[i]], vals[i]))

    # --- background velocity nodes under the covered region ----------
    covered = overlap.covered_region
    pe_table = pe_map.cell_nodes if pe_map is not None else em.triangles
    if len(covered):
        cand = np.unique(bg.tri_p2[covered].ravel())
        coords = bg.p2_coords[cand]
        on_ff = _nodes_near_edges(coords, em, ff_edges, snap)
        cand = cand[~on_ff]
        coords = coords[~on_ff]
        tri, lam = em.locate(coords, tol=1e-8)
        if np.any(tri < 0):
            bad = cand[np.nonzero(tri < 0)[0][:5]]
            raise ConstraintError(
                "covered background nodes not locatable in the embedded "
                "mesh: %s" % bad.tolist())
        vals, _ = eval_basis("P2", lam, check=False)
        solid = em.tri_region[tri] == 1
        for i, node in enumerate(cand):
            entries.append(ConstraintEntry(
                "b", "v", node, "solid-velocity" if solid[i]
                else "covered-copy", tri[i], em.tri_p2[tri[i]], vals[i]))

    # --- low-support background pressure nodes -----------------------
    E = effective_support_background("P1", overlap, psi)
    low = np.nonzero(E < epsilon)[0]
    if len(low):
        coords = bg.vertices[low]
        tri, lam = em.locate(coords, tol=1e-8)
        vals, _ = eval_basis("P1", lam, check=False)
        # fluid-support fraction decides pin vs copy for unlocatable nodes
        for i, node in enumerate(low):
            if tri[i] < 0:
                entries.append(ConstraintEntry(
                    "b", "p", node, "inactive-pin", -1, [], []))
            else:
                entries.append(ConstraintEntry(
                    "b", "p", node, "low-support-copy", tri[i],
                    pe_table[tri[i]], vals[i]))

    cs = ConstraintSet(entries)
    _check_circular(cs)
    return cs


def _check_circular(cs):
    """Reject exact circular pairs (unit-weight two-cycles)."""
    strong = {}
    for e in cs.entries:
        if len(e.weights) and np.max(e.weights) > 1.0 - 1e-9:
            tgt = int(e.stencil_nodes[int(np.argmax(e.weights))])
            strong[(e.side, e.field, e.node)] = tgt
    for (side, field, node), tgt in strong.items():
        opp = "e" if side == "b" else "b"
        back = strong.get((opp, field, tgt))
        if back == node:
            raise ConstraintError(
                "circular constraint between %s node %d and %s node %d"
                % (side, node, opp, tgt))


def constraint_row(dof, stencil_dofs, weights, rhs=0.0):
    """Sparse row encoding dof - sum(w_i x_i) = rhs (spec interface)."""
    cols = np.concatenate([[dof], np.asarray(stencil_dofs)])
    vals = np.concatenate([[1.0], -np.asarray(weights, dtype=float)])
    return cols.astype(np.int64), vals, float(rhs)
