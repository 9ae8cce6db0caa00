"""Pseudo-solid mesh motion with quality-based stiffening.

Boundary displacements propagate into the mesh through a fictitious
nearly incompressible neo-Hookean solve. Each element stiffens with the
squared inverse of its quality ratio relative to its original (time
zero) shape, so that well-shaped elements absorb most of the motion.
The reference configuration of every step is the previous step's
configuration.

The displacement is discretized with P2 elements; the mesh geometry is
affine, so vertices move by their nodal values and midpoints are
re-derived as edge means. The reported mesh velocity matches the actual
node motion.
"""

import numpy as np

from .basis import eval_basis
from .dofs import DofMap
from .mesh import MeshError, triangle_quality
from .quadrature import rule as quad_rule
from .assembly import CooBuilder
from .solvers import SparseFactor, SolverError


class MotionError(Exception):
    pass


def pseudo_solid_stress(F, mu_g, kappa):
    """First Piola-Kirchhoff tensor of the mesh material.

    P = mu_g [ (1/J)(F - (F:F)/2 F^{-T}) + kappa J (J-1) F^{-T} ]
    for F with positive determinant; F has shape (..., 2, 2).
    """
    F = np.asarray(F, dtype=float)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(J <= 0.0):
        raise MotionError("inverted element: det F <= 0")
    Ginv = np.empty_like(F)          # F^{-T}
    Ginv[..., 0, 0] = F[..., 1, 1]
    Ginv[..., 0, 1] = -F[..., 1, 0]
    Ginv[..., 1, 0] = -F[..., 0, 1]
    Ginv[..., 1, 1] = F[..., 0, 0]
    Ginv = Ginv / J[..., None, None]
    s = np.einsum("...ij,...ij->...", F, F)
    iso = (F - 0.5 * s[..., None, None] * Ginv) / J[..., None, None]
    vol = (kappa * J * (J - 1.0))[..., None, None] * Ginv
    return np.asarray(mu_g)[..., None, None] * (iso + vol)


def stress_tangent(F, mu_g, kappa):
    """dP_{iJ}/dF_{kL} of :func:`pseudo_solid_stress`, shape (...,2,2,2,2).

    The stiffening factor mu_g is held fixed (it is lagged between
    Newton iterates), so the tangent is exactly the derivative of the
    residual as implemented.
    """
    F = np.asarray(F, dtype=float)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    G = np.empty_like(F)
    G[..., 0, 0] = F[..., 1, 1]
    G[..., 0, 1] = -F[..., 1, 0]
    G[..., 1, 0] = -F[..., 0, 1]
    G[..., 1, 1] = F[..., 0, 0]
    G = G / J[..., None, None]       # F^{-T}
    s = np.einsum("...ij,...ij->...", F, F)
    X = F - 0.5 * s[..., None, None] * G
    eye = np.eye(2)
    t1 = -np.einsum("...kL,...iJ->...iJkL", G, X) / J[..., None, None,
                                                      None, None]
    t2 = (np.einsum("ik,JL->iJkL", eye, eye)[(None,) * (F.ndim - 2)]
          - np.einsum("...kL,...iJ->...iJkL", F, G)
          + 0.5 * s[..., None, None, None, None]
          * np.einsum("...kJ,...iL->...iJkL", G, G)) \
        / J[..., None, None, None, None]
    jj = (2.0 * J - 1.0) * J
    t3 = kappa * (jj[..., None, None, None, None]
                  * np.einsum("...kL,...iJ->...iJkL", G, G)
                  - (J * (J - 1.0))[..., None, None, None, None]
                  * np.einsum("...kJ,...iL->...iJkL", G, G))
    return np.asarray(mu_g)[..., None, None, None, None] * (t1 + t2 + t3)


def quality_stiffness(q_now, q_orig, mu_ref):
    """Heterogeneous stiffness mu_ref (Q(orig)/Q(now))^2."""
    q_now = np.asarray(q_now, dtype=float)
    if np.any(q_now <= 0.0):
        raise MotionError("collapsed element (quality 0)")
    return mu_ref * (np.asarray(q_orig) / q_now) ** 2


class PseudoSolidConfig:
    def __init__(self, mu_ref=1.0, kappa=10.0, tol=1e-10, max_iter=30):
        if mu_ref <= 0 or kappa <= 0:
            raise ValueError("mu_ref and kappa must be positive")
        self.mu_ref = float(mu_ref)
        self.kappa = float(kappa)
        self.tol = float(tol)
        self.max_iter = int(max_iter)


class MotionState:
    """Reference configuration and quality normalization of a moving mesh.

    ``mesh`` always holds the current configuration; the previous-step
    configuration is the reference for the next solve. ``q_orig`` keeps
    the element qualities of the time-zero mesh.
    """

    def __init__(self, mesh, config=None, region="fluid"):
        self.mesh = mesh
        self.config = config or PseudoSolidConfig()
        self.region = region
        self.tris = mesh.region_tris(region)
        self.q_orig = triangle_quality(
            mesh.vertices[mesh.triangles[self.tris]])
        if np.any(self.q_orig <= 0.0):
            raise MotionError("degenerate element in the reference mesh")
        self.vhat = np.zeros(2 * mesh.n_p2_nodes)

    def qualities(self, mesh=None):
        m = mesh or self.mesh
        return triangle_quality(m.vertices[m.triangles[self.tris]])

    def clone(self):
        """Shallow copy for trial solves inside a nonlinear iteration."""
        twin = MotionState.__new__(MotionState)
        twin.mesh = self.mesh
        twin.config = self.config
        twin.region = self.region
        twin.tris = self.tris
        twin.q_orig = self.q_orig
        twin.vhat = self.vhat
        return twin


def _motion_residual_jacobian(mesh, tris, u, mu_g, kappa, quad,
                              want_matrix):
    """Weak-form residual (and tangent) of the elastostatic problem.

    ``u`` is the P2 displacement, component-major. Integrals run on the
    reference configuration ``mesh``.
    """
    nn = mesh.n_p2_nodes
    n2, g2r = eval_basis("P2", quad.points, check=False)
    jinv = mesh.jac_inv[tris]
    G = np.einsum("mji,qkj->mqki", jinv, g2r)      # (nel, nq, 6, 2)
    wdet = mesh.areas[tris, None] * quad.weights[None, :]
    nodes = mesh.tri_p2[tris]
    ux = u[:nn][nodes]
    uy = u[nn:][nodes]
    gu = np.stack([np.einsum("sqki,sk->sqi", G, ux),
                   np.einsum("sqki,sk->sqi", G, uy)], axis=-2)
    F = gu + np.eye(2)
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    if np.any(J <= 0.0):
        raise MotionError("inverted element %d during motion solve"
                          % int(tris[np.nonzero(J <= 0)[0][0] // F.shape[1]]
                                if F.ndim == 4 else 0))
    P = pseudo_solid_stress(F, mu_g[:, None], kappa)
    R = np.zeros(2 * nn)
    rows = [nodes, nodes + nn]
    for l in (0, 1):
        r = np.einsum("sq,sqJ,sqiJ->si", wdet, P[:, :, l, :], G)
        np.add.at(R, rows[l].ravel(), r.ravel())
    if not want_matrix:
        return R, None
    A = stress_tangent(F, mu_g[:, None], kappa)    # (s, q, i, J, k, L)
    coo = CooBuilder(2 * nn)
    for l in (0, 1):
        for k in (0, 1):
            mat = np.einsum("sq,sqJL,sqiJ,sqjL->sij",
                            wdet, A[:, :, l, :, k, :], G, G)
            coo.add_block(mat, rows[l], rows[k])
    return R, coo.tocsr()


def mesh_step(motion, boundary_displacement, dt, extra_fixed=None):
    """Advance the mesh by one pseudo-solid solve.

    Parameters
    ----------
    motion : MotionState
    boundary_displacement : dict
        Maps P2 node id to its prescribed displacement (2-vector) over
        this step, relative to the current configuration. Must cover the
        moving boundary; other boundaries are zero-traction unless
        listed. Large steps are split into internal load increments when
        a single solve would invert elements.
    dt : float
        Step size; the mesh velocity is displacement / dt.

    Returns
    -------
    (new_mesh, vhat) : the moved mesh and the P2 nodal mesh velocity
    (component-major array of length 2 * n_p2_nodes).
    """
    start = motion.mesh
    fixed_nodes = np.array(sorted(boundary_displacement), dtype=np.int64)
    fixed_vals = np.array([boundary_displacement[n] for n in fixed_nodes],
                          dtype=float).reshape(-1, 2)
    n_inc = 1
    while True:
        try:
            mesh = start
            for k in range(n_inc):
                u = _solve_increment(motion, mesh, fixed_nodes,
                                     fixed_vals / n_inc, extra_fixed)
                nn = mesh.n_p2_nodes
                mesh = mesh.with_vertices(
                    mesh.vertices + np.stack(
                        [u[:mesh.n_vertices],
                         u[nn:nn + mesh.n_vertices]], axis=-1))
            break
        except (MotionError, MeshError):
            n_inc *= 2
            if n_inc > 16:
                raise
    new_mesh = mesh
    nn = start.n_p2_nodes
    dverts = new_mesh.vertices - start.vertices
    disp = np.zeros(2 * nn)
    disp[:start.n_vertices] = dverts[:, 0]
    disp[nn:nn + start.n_vertices] = dverts[:, 1]
    mid = start.edges
    disp[start.n_vertices:nn] = 0.5 * (dverts[mid[:, 0], 0]
                                       + dverts[mid[:, 1], 0])
    disp[nn + start.n_vertices:] = 0.5 * (dverts[mid[:, 0], 1]
                                          + dverts[mid[:, 1], 1])
    vhat = disp / dt
    motion.mesh = new_mesh
    motion.vhat = vhat
    return new_mesh, vhat


def _solve_increment(motion, mesh, fixed_nodes, fixed_vals, extra_fixed):
    """One Newton solve of the elastostatic problem on ``mesh``."""
    cfg = motion.config
    quad = quad_rule(4)
    nn = mesh.n_p2_nodes
    tris = motion.tris
    dir_dofs = np.concatenate([fixed_nodes, fixed_nodes + nn])
    dir_vals = np.concatenate([fixed_vals[:, 0], fixed_vals[:, 1]])
    used = np.unique(mesh.tri_p2[tris].ravel())
    unused = np.setdiff1d(np.arange(nn), used)
    if extra_fixed is not None:
        unused = np.union1d(unused, np.asarray(extra_fixed, dtype=np.int64))
    unused = np.setdiff1d(unused, fixed_nodes)
    dir_dofs = np.concatenate([dir_dofs, unused, unused + nn])
    dir_vals = np.concatenate([dir_vals, np.zeros(2 * len(unused))])

    u = np.zeros(2 * nn)
    u[dir_dofs] = dir_vals
    scale = max(cfg.mu_ref, 1e-30)
    q0 = motion.q_orig
    rnorm = np.inf
    for it in range(cfg.max_iter):
        verts = mesh.vertices + np.stack([u[:mesh.n_vertices],
                                          u[nn:nn + mesh.n_vertices]],
                                         axis=-1)
        q_now = triangle_quality(verts[mesh.triangles[tris]])
        if np.any(q_now <= 0):
            raise MotionError("element quality collapsed (worst element %d)"
                              % int(tris[int(np.argmin(q_now))]))
        mu_g = quality_stiffness(q_now, q0, cfg.mu_ref)
        R, J = _motion_residual_jacobian(mesh, tris, u, mu_g, cfg.kappa,
                                         quad, want_matrix=True)
        R[dir_dofs] = u[dir_dofs] - dir_vals
        rnorm = float(np.linalg.norm(R))
        if rnorm < cfg.tol * scale:
            return u
        J = J.tolil()
        J[dir_dofs, :] = 0.0
        J[dir_dofs, dir_dofs] = 1.0
        try:
            factor = SparseFactor(J.tocsc())
        except SolverError as exc:
            raise MotionError("singular mesh-motion system: %s" % exc)
        du = factor.solve(-R)
        # backtracking: do not let elements invert inside one update
        step = 1.0
        for _ in range(25):
            trial = u + step * du
            verts = mesh.vertices + np.stack(
                [trial[:mesh.n_vertices], trial[nn:nn + mesh.n_vertices]],
                axis=-1)
            e1 = verts[mesh.triangles[tris, 1]] - verts[mesh.triangles[
                tris, 0]]
            e2 = verts[mesh.triangles[tris, 2]] - verts[mesh.triangles[
                tris, 0]]
            if np.all(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] > 0):
                break
            step *= 0.5
        else:
            raise MotionError("mesh motion step keeps inverting elements")
        u = u + step * du
    raise MotionError("mesh motion Newton did not converge "
                      "(residual %.3e)" % rnorm)
