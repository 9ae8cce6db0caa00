import numpy as np
import pytest
import scipy.sparse.linalg as spla

from puflow.basis import eval_basis
from puflow.mesh import TriMesh
from puflow.meshgen import rectangle
from puflow.overlap import build_overlap
from puflow.weighting import WeightField
from puflow.quadrature import rule
from puflow.assembly import (PuLayout, SceneState, assemble_stokes_pufem,
                             assemble_ns_residual, assemble_ns_jacobian,
                             AssemblyError)
from support import (pufem_cylinder_scene, patch_dirichlet,
                     rigid_scene_dirichlet, exact_quadratic_stokes)


def solve_block(sysm):
    return spla.splu(sysm.matrix).solve(sysm.rhs)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_patch_test_exactness(seed):
    rng = np.random.default_rng(seed)
    center = rng.uniform(0.42, 0.56, size=2)
    scene = pufem_cylinder_scene(nx=8 + seed, center=tuple(center))
    v_ex, p_ex = exact_quadratic_stokes(mu=1.0)
    patch_dirichlet(scene, v_ex, p_ex)
    x = solve_block(assemble_stokes_pufem(scene))
    lay = scene.layout
    vb, ve, pb, pe = lay.split(x)
    nb, ne = lay.vb.n_nodes, lay.ve.n_nodes
    vexb = v_ex(lay.bg.p2_coords)
    vexe = v_ex(lay.em.p2_coords)
    assert np.abs(vb[:nb] - vexb[:, 0]).max() < 1e-8
    assert np.abs(vb[nb:] - vexb[:, 1]).max() < 1e-8
    assert np.abs(ve[:ne] - vexe[:, 0]).max() < 1e-8
    assert np.abs(ve[ne:] - vexe[:, 1]).max() < 1e-8
    assert np.abs(pb - p_ex(lay.bg.vertices)).max() < 1e-8
    assert np.abs(pe - p_ex(lay.em.vertices)).max() < 1e-8


def test_psi_zero_reduces_to_classical():
    # degenerate weighting: psi == 0, every embedded DOF constrained
    bg = rectangle((0, 0, 2, 1), 10, 5,
                   tags={"left": "inflow", "right": "outflow",
                         "bottom": "wall", "top": "wall"})
    em = rectangle((0.6, 0.3, 1.2, 0.7), 4, 3,
                   tags={"left": "ff", "right": "ff",
                         "bottom": "ff", "top": "ff"})
    psi = WeightField(em, np.zeros(em.n_p2_nodes))
    topo = build_overlap(bg, em)
    lay = PuLayout(bg, em)

    from puflow.weighting import ConstraintEntry, ConstraintSet
    entries = []
    for kind_f, field in (("P2", "v"), ("P1", "p")):
        coords = em.node_coords(kind_f)
        tri, lam = bg.locate(coords, tol=1e-8)
        vals, _ = eval_basis(kind_f, lam, check=False)
        vtab = bg.tri_p2 if kind_f == "P2" else bg.triangles
        for n in range(len(coords)):
            entries.append(ConstraintEntry("e", field, n, "covered-copy",
                                           tri[n], vtab[tri[n]], vals[n]))
    cs = ConstraintSet(entries)

    def bc(scene, lay_):
        dofs, vals_ = [], []
        for tag, fn in (("inflow", lambda p: np.stack(
                [4 * p[:, 1] * (1 - p[:, 1]), 0 * p[:, 1]], axis=-1)),
                ("wall", lambda p: np.zeros((len(p), 2)))):
            nodes = lay_.bg.nodes_with_tag(tag, "P2")
            vv = fn(lay_.bg.p2_coords[nodes])
            for i, n in enumerate(nodes):
                dofs += [lay_.vdof("b", n, 0), lay_.vdof("b", n, 1)]
                vals_ += [vv[i, 0], vv[i, 1]]
        scene.set_dirichlet(dofs, vals_)

    scene = SceneState(lay, rho=0.0, mu=1.0, viscous_form="grad",
                       include_advection=False, psi=psi, topo=topo)
    scene.constraints = cs
    bc(scene, lay)
    x = solve_block(assemble_stokes_pufem(scene))

    lay_c = PuLayout(bg)
    classical = SceneState(lay_c, rho=0.0, mu=1.0, viscous_form="grad",
                           include_advection=False)
    bc(classical, lay_c)
    xc = solve_block(assemble_stokes_pufem(classical))

    nvb = lay.vb.total_dofs
    npb = lay.pb.total_dofs
    assert np.abs(x[:nvb] - xc[:nvb]).max() < 1e-10
    pb = x[lay.off_pb:lay.off_pb + npb]
    assert np.abs(pb - xc[lay_c.off_pb:]).max() < 1e-10
    # embedded DOFs equal the interpolated background field
    ve = x[lay.off_ve:lay.off_pb]
    ne = lay.ve.n_nodes
    from puflow.dofs import eval_field
    tri, lam = bg.locate(em.p2_coords, tol=1e-8)
    vals = eval_field(bg, lay.vb, x[:nvb].reshape(2, -1).ravel(), tri, lam)
    # eval_field expects component-major coeffs; x[:nvb] already is
    assert np.abs(ve[:ne] - vals[:, 0]).max() < 1e-8
    assert np.abs(ve[ne:] - vals[:, 1]).max() < 1e-8


def test_single_pair_matches_degree8_oracle():
    # one background triangle, the same embedded triangle, linear psi
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]])
    tags = {(0, 1): "d", (1, 2): "d", (0, 2): "d"}
    bg = TriMesh(verts, [[0, 1, 2]], boundary_tags=tags)
    em = TriMesh(verts, [[0, 1, 2]], boundary_tags={
        (0, 1): "ff", (1, 2): "ff", (0, 2): "ff"})
    ramp = lambda p: 0.15 + 0.4 * p[:, 0] + 0.3 * p[:, 1]
    psi = WeightField(em, ramp(em.p2_coords))
    topo = build_overlap(bg, em)
    lay = PuLayout(bg, em)
    scene = SceneState(lay, rho=0.0, mu=1.3, viscous_form="grad",
                       include_advection=False, psi=psi, topo=topo)
    scene.constraints = None
    K = scene.op.constant_matrix().toarray()

    # independent dense oracle with a degree-8 collapsed product rule
    q8 = rule(8)
    lam = q8.points
    w = q8.weights * bg.areas[0]
    n2, g2r = eval_basis("P2", lam, check=False)
    jinv = bg.jac_inv[0]
    g2 = np.einsum("ji,qkj->qki", jinv, g2r)
    pvals = ramp(lam @ verts)
    gpsi = np.array([0.4, 0.3])
    Wb = (1 - pvals)[:, None, None] * g2 - n2[:, :, None] * gpsi
    We = pvals[:, None, None] * g2 + n2[:, :, None] * gpsi
    A_bb = 1.3 * np.einsum("q,qik,qjk->ij", w, Wb, Wb)
    A_be = 1.3 * np.einsum("q,qik,qjk->ij", w, Wb, We)
    A_ee = 1.3 * np.einsum("q,qik,qjk->ij", w, We, We)

    nb = lay.vb.n_nodes
    got_bb = K[:nb, :nb]
    got_be = K[:nb, lay.off_ve:lay.off_ve + 6]
    got_ee = K[lay.off_ve:lay.off_ve + 6, lay.off_ve:lay.off_ve + 6]
    # map the local P2 ordering of the oracle onto global node ids
    loc = bg.tri_p2[0]
    def to_global(A):
        G = np.zeros((6, 6))
        G[np.ix_(loc, loc)] = A
        return G
    assert np.abs(got_bb - to_global(A_bb)).max() < 1e-10
    assert np.abs(got_be - to_global(A_be)).max() < 1e-10
    assert np.abs(got_ee - to_global(A_ee)).max() < 1e-10


@pytest.fixture(scope="module")
def ns_scene():
    scene = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09, mu=0.05,
                                 rho=1.0, viscous_form="sym",
                                 include_advection=True)
    lid = lambda p: np.stack([np.ones(len(p)), np.zeros(len(p))], axis=-1)
    zero = lambda p: np.zeros((len(p), 2))
    rigid_scene_dirichlet(scene, bg_values={"d": zero})
    return scene


def _random_state(scene, seed=3, scale=0.3):
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, scene.layout.total)


def test_jacobian_matches_finite_differences_steady(ns_scene):
    scene = ns_scene
    x = _random_state(scene)
    J = assemble_ns_jacobian(scene, x).toarray()
    R0 = assemble_ns_residual(scene, x)
    h = 1e-6
    n = scene.layout.total
    fd = np.zeros((n, n))
    for k in range(n):
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        fd[:, k] = (assemble_ns_residual(scene, xp)
                    - assemble_ns_residual(scene, xm)) / (2 * h)
    scale = np.maximum(np.abs(fd), np.abs(J))
    err = np.abs(fd - J) / np.maximum(scale, 1e-8 / 1e-5)
    assert err.max() < 1e-5


def test_jacobian_matches_finite_differences_ale(ns_scene):
    scene = pufem_cylinder_scene(nx=4, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.1, mu=0.05,
                                 rho=1.2, viscous_form="sym",
                                 include_advection=True)
    zero = lambda p: np.zeros((len(p), 2))
    rigid_scene_dirichlet(scene, bg_values={"d": zero})
    rng = np.random.default_rng(11)
    scene.dt = 0.05
    scene.bdf = (1.5, -2.0, 0.5)
    scene.hist1 = rng.uniform(-0.2, 0.2, scene.layout.total)
    scene.hist2 = rng.uniform(-0.2, 0.2, scene.layout.total)
    scene.vhat_e = rng.uniform(-0.4, 0.4, scene.layout.ve.total_dofs)
    x = _random_state(scene, seed=7)
    J = assemble_ns_jacobian(scene, x).toarray()
    h = 1e-6
    n = scene.layout.total
    cols = np.arange(n)
    fd = np.zeros((n, n))
    for k in cols:
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        fd[:, k] = (assemble_ns_residual(scene, xp)
                    - assemble_ns_residual(scene, xm)) / (2 * h)
    err = np.abs(fd - J) / np.maximum(np.maximum(np.abs(fd), np.abs(J)),
                                      1e-3)
    assert err.max() < 1e-5


def test_jacobian_linear_in_density(ns_scene):
    x = _random_state(ns_scene, seed=5)
    import copy
    scenes = []
    for rho in (0.0, 1.0, 2.0):
        s = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09, mu=0.05,
                                 rho=rho, viscous_form="sym",
                                 include_advection=True)
        zero = lambda p: np.zeros((len(p), 2))
        rigid_scene_dirichlet(s, bg_values={"d": zero})
        scenes.append(assemble_ns_jacobian(s, x, constrained=False))
    d1 = (scenes[1] - scenes[0]).toarray()
    d2 = (scenes[2] - scenes[1]).toarray()
    assert np.abs(d1 - d2).max() < 1e-11 * max(1.0, np.abs(d1).max())


def test_rho_zero_jacobian_is_stokes_matrix(ns_scene):
    scene = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09, mu=0.05,
                                 rho=0.0, viscous_form="sym",
                                 include_advection=True)
    zero = lambda p: np.zeros((len(p), 2))
    rigid_scene_dirichlet(scene, bg_values={"d": zero})
    x = _random_state(scene, seed=2)
    J = assemble_ns_jacobian(scene, x)
    K = assemble_stokes_pufem(scene).matrix
    assert abs(J - K).max() < 1e-12


def test_residual_zero_at_stokes_solution(ns_scene):
    scene = pufem_cylinder_scene(nx=6, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09, mu=1.0,
                                 rho=0.0, viscous_form="grad",
                                 include_advection=False)
    inflow = lambda p: np.stack([p[:, 1] * (1 - p[:, 1]) * 4,
                                 np.zeros(len(p))], axis=-1)
    rigid_scene_dirichlet(scene, bg_values={"d": inflow})
    x = solve_block(assemble_stokes_pufem(scene))
    R = assemble_ns_residual(scene, x)
    assert np.linalg.norm(R) < 1e-10


def test_time_term_vanishes_for_constant_history(ns_scene):
    scene = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09, mu=0.05,
                                 rho=1.0, viscous_form="sym",
                                 include_advection=True)
    zero = lambda p: np.zeros((len(p), 2))
    rigid_scene_dirichlet(scene, bg_values={"d": zero})
    x = _random_state(scene, seed=9)
    R_steady = assemble_ns_residual(scene, x, constrained=False)
    scene2 = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                  r_outer=0.34, h_em=0.09, mu=0.05,
                                  rho=1.0, viscous_form="sym",
                                  include_advection=True)
    rigid_scene_dirichlet(scene2, bg_values={"d": zero})
    scene2.dt = 0.1
    scene2.bdf = (1.5, -2.0, 0.5)
    scene2.hist1 = x.copy()
    scene2.hist2 = x.copy()
    R_time = assemble_ns_residual(scene2, x, constrained=False)
    assert np.abs(R_time - R_steady).max() < 1e-12


def test_bdf2_exact_for_linear_history(ns_scene):
    # v(t) linear in time: BDF(2) and BDF(1) recover the same derivative
    scene_a = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                   r_outer=0.34, h_em=0.09, mu=0.05,
                                   rho=1.0, viscous_form="sym",
                                   include_advection=True)
    zero = lambda p: np.zeros((len(p), 2))
    rigid_scene_dirichlet(scene_a, bg_values={"d": zero})
    x = _random_state(scene_a, seed=13)
    rng = np.random.default_rng(17)
    c = rng.uniform(-1, 1, scene_a.layout.total)
    dt = 0.05
    scene_a.dt = dt
    scene_a.bdf = (1.5, -2.0, 0.5)
    scene_a.hist1 = x - c * dt
    scene_a.hist2 = x - 2 * c * dt
    R2 = assemble_ns_residual(scene_a, x, constrained=False)
    scene_a.bdf = (1.0, -1.0, 0.0)
    R1 = assemble_ns_residual(scene_a, x, constrained=False)
    assert np.abs(R2 - R1).max() < 1e-11


def test_all_dirichlet_gives_identity_rows():
    bg = rectangle((0, 0, 1, 1), 2, 2, tags={s: "d" for s in
                                             ("left", "right", "bottom",
                                              "top")})
    lay = PuLayout(bg)
    scene = SceneState(lay, rho=0.0, mu=1.0, viscous_form="grad",
                       include_advection=False)
    dofs = np.arange(lay.total)
    vals = np.linspace(0, 1, lay.total)
    scene.set_dirichlet(dofs, vals)
    sysm = assemble_stokes_pufem(scene)
    x = solve_block(sysm)
    assert np.allclose(x, vals, atol=1e-13)
    assert abs(sysm.matrix - sp_eye(lay.total)).max() == 0.0


def sp_eye(n):
    import scipy.sparse as sp
    return sp.eye(n, format="csr")


def test_pressure_pressure_block_zero(ns_scene):
    scene = pufem_cylinder_scene(nx=5, center=(0.5, 0.5), r_solid=0.18,
                                 r_outer=0.34, h_em=0.09)
    K = scene.op.constant_matrix()
    lay = scene.layout
    pp = K[lay.off_pb:, lay.off_pb:]
    assert abs(pp).max() == 0.0
