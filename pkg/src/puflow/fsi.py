"""Quasi-static incompressible solid coupled monolithically to the flow.

The solid occupies the solid-tagged region of a mesh (the embedded mesh
on the overlapping path, the single fitted mesh on the classical path).
Velocity DOFs are shared with the fluid on the interface; the solid
pressure lives on duplicated P1 nodes so it can jump across the
interface. The solid unknown is the velocity: displacement follows by a
backward-Euler update, and the solid's momentum and incompressibility
residuals are assembled on the fixed reference configuration.
"""

import numpy as np

from .basis import eval_basis
from .dofs import DofMap
from .mesh import MeshError
from .mesh_motion import MotionError
from .quadrature import rule as quad_rule
from .weighting import fs_edge_ids
from .assembly import CooBuilder
import scipy.sparse as sp


def solid_stress(F, p, mu_s):
    """First Piola-Kirchhoff stress of the incompressible neo-Hookean solid.

    P = (mu_s / J) [F - (F:F)/2 F^{-T}] - p J F^{-T}, with F of shape
    (..., 2, 2) and det F > 0.
    """
    F = np.asarray(F, dtype=float)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(J <= 0.0):
        raise MotionError("inverted solid element: det F <= 0")
    G = np.empty_like(F)
    G[..., 0, 0] = F[..., 1, 1]
    G[..., 0, 1] = -F[..., 1, 0]
    G[..., 1, 0] = -F[..., 0, 1]
    G[..., 1, 1] = F[..., 0, 0]
    G = G / J[..., None, None]
    s = np.einsum("...ij,...ij->...", F, F)
    iso = mu_s * (F - 0.5 * s[..., None, None] * G) / J[..., None, None]
    return iso - (np.asarray(p) * J)[..., None, None] * G


def solid_stress_tangent(F, p, mu_s):
    """(dP/dF, dP/dp) of :func:`solid_stress`."""
    F = np.asarray(F, dtype=float)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    G = np.empty_like(F)
    G[..., 0, 0] = F[..., 1, 1]
    G[..., 0, 1] = -F[..., 1, 0]
    G[..., 1, 0] = -F[..., 0, 1]
    G[..., 1, 1] = F[..., 0, 0]
    G = G / J[..., None, None]
    s = np.einsum("...ij,...ij->...", F, F)
    X = F - 0.5 * s[..., None, None] * G
    eye = np.eye(2)
    pad = (None,) * (F.ndim - 2)
    GkL_GiJ = np.einsum("...kL,...iJ->...iJkL", G, G)
    GkJ_GiL = np.einsum("...kJ,...iL->...iJkL", G, G)
    dA = (-np.einsum("...kL,...iJ->...iJkL", G, X)
          + np.einsum("ik,JL->iJkL", eye, eye)[pad]
          - np.einsum("...kL,...iJ->...iJkL", F, G)
          + 0.5 * s[..., None, None, None, None] * GkJ_GiL) \
        / J[..., None, None, None, None]
    dP = mu_s * dA - np.asarray(p)[..., None, None, None, None] \
        * (J[..., None, None, None, None] * (GkL_GiJ - GkJ_GiL))
    dPdp = -J[..., None, None] * G
    return dP, dPdp


def duplicated_pressure_map(mesh):
    """P1 pressure DofMap with interface nodes duplicated on the solid side.

    Fluid-side triangles keep the base vertex ids; solid triangles
    referencing an interface vertex use a fresh node id, so the pressure
    may jump across the fluid-solid interface while remaining continuous
    within each region.
    """
    iface = np.unique(mesh.edges[fs_edge_ids(mesh)].ravel())
    nv = mesh.n_vertices
    extra = {int(v): nv + k for k, v in enumerate(iface)}
    cell = mesh.triangles.copy()
    solid = mesh.region_tris("solid")
    for t in solid:
        for j in range(3):
            v = int(cell[t, j])
            if v in extra:
                cell[t, j] = extra[v]
    dm = DofMap("P1", 1, cell, n_nodes=nv + len(iface))
    dm.interface_base = iface
    dm.interface_dup = np.array([extra[int(v)] for v in iface],
                                dtype=np.int64)
    return dm


class SolidModel:
    """Solid residual/Jacobian contributions on the reference mesh.

    Parameters
    ----------
    ref_mesh : TriMesh
        Reference (time-zero) configuration carrying the solid region.
    side : "b" or "e"
        Which velocity/pressure family owns the solid DOFs.
    mu_s : float
        Shear modulus.
    """

    def __init__(self, ref_mesh, side, mu_s, quad=None,
                 ref_vertices=None):
        self.side = side
        self.mu_s = float(mu_s)
        self.quad = quad or quad_rule(6)
        self.tris = ref_mesh.region_tris("solid")
        if len(self.tris) == 0:
            raise MeshError("no solid region on this mesh")
        n2, g2r = eval_basis("P2", self.quad.points, check=False)
        n1, _ = eval_basis("P1", self.quad.points, check=False)
        if ref_vertices is None:
            jinv = ref_mesh.jac_inv[self.tris]
            areas = ref_mesh.areas[self.tris]
        else:
            # reference geometry given explicitly (after remeshing the
            # fluid around a deformed solid)
            v = np.asarray(ref_vertices)[ref_mesh.triangles[self.tris]]
            e1 = v[:, 1] - v[:, 0]
            e2 = v[:, 2] - v[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            if np.any(det <= 0):
                raise MeshError("inverted reference solid element")
            areas = 0.5 * det
            jinv = np.empty((len(det), 2, 2))
            jinv[:, 0, 0] = e2[:, 1] / det
            jinv[:, 0, 1] = -e2[:, 0] / det
            jinv[:, 1, 0] = -e1[:, 1] / det
            jinv[:, 1, 1] = e1[:, 0] / det
        self.G = np.einsum("mji,qkj->mqki", jinv, g2r)
        self.N1 = n1
        self.wdet = areas[:, None] * self.quad.weights[None, :]
        self.vnodes = ref_mesh.tri_p2[self.tris]
        self.n_p2 = ref_mesh.n_p2_nodes
        self.u_prev = np.zeros(2 * self.n_p2)   # displacement at t_{n-1}

    def _pnodes(self, state):
        lay = state.layout
        pmap = lay.pe if self.side == "e" else lay.pb
        return pmap.cell_nodes[self.tris]

    def _split(self, x, state):
        lay = state.layout
        vb, ve, pb, pe = lay.split(x)
        v = ve if self.side == "e" else vb
        p = pe if self.side == "e" else pb
        return v, p

    def _deformation(self, x, state):
        v, p = self._split(x, state)
        dt = state.dt if state.dt is not None else 0.0
        u = self.u_prev + dt * v
        nn = self.n_p2
        ux = u[:nn][self.vnodes]
        uy = u[nn:][self.vnodes]
        gu = np.stack([np.einsum("sqki,sk->sqi", self.G, ux),
                       np.einsum("sqki,sk->sqi", self.G, uy)], axis=-2)
        F = gu + np.eye(2)
        pvals = np.einsum("qk,sk->sq", self.N1, p[self._pnodes(state)])
        return F, pvals

    def add_residual(self, R, x, state):
        lay = state.layout
        F, pvals = self._deformation(x, state)
        P = solid_stress(F, pvals, self.mu_s)
        rows = [lay.vdof(self.side, self.vnodes, 0),
                lay.vdof(self.side, self.vnodes, 1)]
        for l in (0, 1):
            r = np.einsum("sq,sqJ,sqiJ->si", self.wdet, P[:, :, l, :],
                          self.G)
            np.add.at(R, rows[l].ravel(), r.ravel())
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        prow = lay.pdof(self.side, self._pnodes(state))
        rp = np.einsum("sq,qi->si", self.wdet * (J - 1.0), self.N1)
        np.add.at(R, prow.ravel(), rp.ravel())

    def jacobian(self, x, state):
        lay = state.layout
        dt = state.dt if state.dt is not None else 0.0
        F, pvals = self._deformation(x, state)
        dP, dPdp = solid_stress_tangent(F, pvals, self.mu_s)
        coo = CooBuilder(lay.total)
        rows = [lay.vdof(self.side, self.vnodes, 0),
                lay.vdof(self.side, self.vnodes, 1)]
        prow = lay.pdof(self.side, self._pnodes(state))
        for l in (0, 1):
            for k in (0, 1):
                mat = dt * np.einsum("sq,sqJL,sqiJ,sqjL->sij", self.wdet,
                                     dP[:, :, l, :, k, :], self.G, self.G)
                coo.add_block(mat, rows[l], rows[k])
            mat = np.einsum("sq,sqJ,sqiJ,qj->sij", self.wdet,
                            dPdp[:, :, l, :], self.G, self.N1)
            coo.add_block(mat, rows[l], prow)
        # incompressibility rows: dJ/dF = J F^{-T}
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        G = np.empty_like(F)
        G[..., 0, 0] = F[..., 1, 1]
        G[..., 0, 1] = -F[..., 1, 0]
        G[..., 1, 0] = -F[..., 0, 1]
        G[..., 1, 1] = F[..., 0, 0]
        for k in (0, 1):
            mat = dt * np.einsum("sq,qi,sqL,sqjL->sij", self.wdet,
                                 self.N1, G[:, :, k, :], self.G)
            coo.add_block(mat, prow, rows[k])
        return coo.tocsr()

    def commit_displacement(self, x, state):
        """Backward-Euler displacement update after a converged step."""
        v, _ = self._split(x, state)
        self.u_prev = self.u_prev + state.dt * v

    def incompressibility_error(self, x, state):
        """L2 norm of J - 1 over the reference solid, area-normalized."""
        F, _ = self._deformation(x, state)
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        err = np.sum(self.wdet * (J - 1.0) ** 2)
        area = np.sum(self.wdet)
        return float(np.sqrt(max(err, 0.0) / area))
