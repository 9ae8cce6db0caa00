"""Degree-of-freedom maps and nodal coefficient vectors.

DOF layout is component-major: for a vector field with n nodes, DOF
``c * n + k`` holds component ``c`` of node ``k``. A :class:`DofMap`
carries its own cell-to-node table so that spaces with duplicated nodes
(discontinuous pressure across an interface) use the same machinery.
"""

import numpy as np

from .basis import eval_basis, n_local


class DofMap:
    """Map from (node, component) to global DOF indices.

    Parameters
    ----------
    kind : str
        "P1" or "P2".
    components : int
        1 for scalars, 2 for plane vector fields.
    cell_nodes : ndarray, shape (nt, nloc)
        Node ids per triangle.
    n_nodes : int, optional
        Total node count; defaults to ``cell_nodes.max() + 1``.
    """

    def __init__(self, kind, components, cell_nodes, n_nodes=None):
        if kind not in ("P1", "P2"):
            raise ValueError("kind must be P1 or P2")
        self.kind = kind
        self.components = int(components)
        self.cell_nodes = np.ascontiguousarray(cell_nodes, dtype=np.int64)
        if self.cell_nodes.shape[1] != n_local(kind):
            raise ValueError("cell_nodes has wrong local width for %s" % kind)
        self.n_nodes = int(n_nodes if n_nodes is not None
                           else self.cell_nodes.max() + 1)
        self.total_dofs = self.components * self.n_nodes
        self.constrained = np.zeros(self.total_dofs, dtype=bool)

    @classmethod
    def for_mesh(cls, mesh, kind, components):
        table = mesh.triangles if kind == "P1" else mesh.tri_p2
        n = mesh.n_vertices if kind == "P1" else mesh.n_p2_nodes
        return cls(kind, components, table, n_nodes=n)

    def dof(self, nodes, component=0):
        return component * self.n_nodes + np.asarray(nodes, dtype=np.int64)

    def node_component(self, dofs):
        dofs = np.asarray(dofs, dtype=np.int64)
        return dofs % self.n_nodes, dofs // self.n_nodes

    def zeros(self):
        return np.zeros(self.total_dofs)


class FieldVec:
    """Nodal coefficient vector bound to a DofMap."""

    def __init__(self, dof_map, values=None):
        self.dof_map = dof_map
        if values is None:
            values = np.zeros(dof_map.total_dofs)
        values = np.asarray(values, dtype=float)
        if values.shape != (dof_map.total_dofs,):
            raise ValueError("coefficient length %d != total_dofs %d"
                             % (values.size, dof_map.total_dofs))
        self.values = values

    def copy(self):
        return FieldVec(self.dof_map, self.values.copy())

    def component(self, c):
        n = self.dof_map.n_nodes
        return self.values[c * n:(c + 1) * n]

    def as_nodal(self):
        """View coefficients as an (n_nodes, components) array."""
        return self.values.reshape(self.dof_map.components, -1).T


def eval_field(mesh, dof_map, coeffs, tri, lam, grad=False):
    """Evaluate a nodal field at barycentric points of given triangles.

    Parameters
    ----------
    coeffs : ndarray, (total_dofs,)
    tri : ndarray, (m,)
    lam : ndarray, (m, 3)

    Returns
    -------
    values : ndarray, (m, components) (squeezed to (m,) for scalars)
    gradients : ndarray, (m, components, 2), only when ``grad``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    tri = np.atleast_1d(np.asarray(tri, dtype=np.int64))
    lam = np.atleast_2d(lam)
    vals, grads = eval_basis(dof_map.kind, lam, check=False)
    nodes = dof_map.cell_nodes[tri]                   # (m, nloc)
    ncomp = dof_map.components
    n = dof_map.n_nodes
    out = np.empty((len(tri), ncomp))
    for c in range(ncomp):
        out[:, c] = np.einsum("mk,mk->m", vals, coeffs[c * n + nodes])
    if not grad:
        return out[:, 0] if ncomp == 1 else out
    jinv = mesh.jac_inv[tri]                           # (m, 2, 2)
    gphys = np.einsum("mji,mkj->mki", jinv, grads)     # (m, nloc, 2)
    gout = np.empty((len(tri), ncomp, 2))
    for c in range(ncomp):
        gout[:, c] = np.einsum("mki,mk->mi", gphys, coeffs[c * n + nodes])
    if ncomp == 1:
        return out[:, 0], gout[:, 0]
    return out, gout
