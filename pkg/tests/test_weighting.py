import numpy as np
import pytest

from puflow.meshgen import rectangle, disk_with_ring
from puflow.overlap import build_overlap
from puflow.weighting import (hermite_smooth, build_psi, WeightField,
                              effective_support,
                              effective_support_background,
                              effective_support_embedded,
                              classify_constraints, fs_edge_ids,
                              p2_nodes_of_edges, constraint_row)


def test_hermite_endpoints_and_midpoint():
    assert hermite_smooth(0.0) == 0.0
    assert hermite_smooth(1.0) == 1.0
    assert hermite_smooth(0.5) == pytest.approx(0.5, abs=1e-15)
    # monotone on [0, 1]
    u = np.linspace(0, 1, 101)
    assert np.all(np.diff(hermite_smooth(u)) >= 0)
    # clamped outside
    assert hermite_smooth(-0.3) == 0.0
    assert hermite_smooth(1.7) == 1.0


@pytest.fixture(scope="module")
def scene():
    bg = rectangle((0, 0, 1, 1), 10, 10,
                   tags={"left": "inflow", "right": "outflow",
                         "bottom": "wall", "top": "wall"})
    em = disk_with_ring((0.5, 0.5), 0.15, 0.311, 0.05)
    psi = build_psi(em)
    topo = build_overlap(bg, em)
    return bg, em, psi, topo


def test_build_psi_invariants(scene):
    bg, em, psi, topo = scene
    psi.check_invariants()
    assert np.all(psi.values >= 0.0) and np.all(psi.values <= 1.0)
    # zero exactly on the outer interface, one on the solid interface
    ff = em.nodes_with_tag("ff", "P2")
    assert np.all(psi.values[ff] == 0.0)
    fs = p2_nodes_of_edges(em, fs_edge_ids(em))
    assert np.all(psi.values[fs] == 1.0)
    # plateau around the solid: harmonic ramp exceeds one well inside
    r = np.linalg.norm(em.p2_coords - [0.5, 0.5], axis=1)
    assert np.all(psi.values[r < 0.2] == 1.0)


def test_psi_matches_harmonic_profile(scene):
    # annulus harmonic ramp: u(r) = 10 ln(R/r) / ln(R/Rin), clamped and
    # smoothed; compare at fluid nodes within discretization error
    bg, em, psi, topo = scene
    r_in, r_out, val = 0.15, 0.311, 10.0
    r = np.linalg.norm(em.p2_coords - [0.5, 0.5], axis=1)
    fluid_nodes = np.unique(em.tri_p2[em.region_tris("fluid")].ravel())
    rr = np.clip(r[fluid_nodes], r_in, r_out)
    exact = val * np.log(r_out / rr) / np.log(r_out / r_in)
    from puflow.weighting import hermite_smooth
    expect = hermite_smooth(np.clip(exact, 0.0, 1.0))
    got = psi.values[fluid_nodes]
    # the clamp knee sits inside the outermost element layer at this
    # resolution; nodal agreement is first-order there
    assert np.max(np.abs(got - expect)) < 0.15
    assert np.mean(np.abs(got - expect)) < 0.03


def test_degenerate_uniform_dirichlet_gives_one():
    em = disk_with_ring((0.5, 0.5), 0.15, 0.311, 0.05)
    # harmonic with value 10 on both interfaces is constant 10; clamp -> 1
    from puflow import weighting as wg
    import scipy.sparse.linalg as spla
    fluid = em.region_tris("fluid")
    K = wg.p2_scalar_stiffness(em, fluid).tolil()
    ff = em.nodes_with_tag("ff", "P2")
    fs = wg.p2_nodes_of_edges(em, wg.fs_edge_ids(em))
    n = em.n_p2_nodes
    rhs = np.zeros(n)
    fixed = np.concatenate([ff, fs])
    diag = K.diagonal()
    inactive = np.setdiff1d(np.nonzero(diag == 0)[0], fixed)
    fixed = np.concatenate([fixed, inactive])
    K[fixed, :] = 0.0
    K[fixed, fixed] = 1.0
    rhs[fixed] = 10.0
    u = spla.spsolve(K.tocsc(), rhs)
    u = wg.hermite_smooth(np.clip(u, 0, 1))
    assert np.allclose(u, 1.0, atol=1e-9)


def test_effective_support_limits(scene):
    bg, em, psi, topo = scene
    E = effective_support_background("P2", topo, psi)
    # far corner node: support entirely outside the embedded mesh
    corner = int(np.argmin(np.linalg.norm(bg.p2_coords, axis=1)))
    assert E[corner] == pytest.approx(1.0, abs=1e-12)
    # node deep under the solid: no fluid support
    center = int(np.argmin(np.linalg.norm(bg.p2_coords - [0.5, 0.5],
                                          axis=1)))
    assert E[center] == 0.0
    # embedded node with psi == 1 on its support
    Ee = effective_support_embedded("P2", em, psi)
    r = np.linalg.norm(em.p2_coords - [0.5, 0.5], axis=1)
    fluid_nodes = np.unique(em.tri_p2[em.region_tris("fluid")].ravel())
    deep = fluid_nodes[r[fluid_nodes] < 0.19]
    assert np.allclose(Ee[deep], 1.0, atol=1e-12)
    # interface nodes: psi == 0 on the interface itself, so E stays
    # moderate but clearly below the interior plateau
    ff = em.nodes_with_tag("ff", "P2")
    assert np.all(Ee[ff] < 0.5)


def test_effective_support_constant_weight_squares():
    # psi == c on the support of an embedded node gives E = c^2
    em = disk_with_ring((0.5, 0.5), 0.15, 0.311, 0.05)
    c = 0.37
    vals = np.full(em.n_p2_nodes, c)
    psi = WeightField(em, vals)
    Ee = effective_support_embedded("P2", em, psi)
    fluid_nodes = np.unique(em.tri_p2[em.region_tris("fluid")].ravel())
    assert np.allclose(Ee[fluid_nodes], c * c, atol=1e-12)


def test_effective_support_monotone_in_psi():
    em = disk_with_ring((0.5, 0.5), 0.15, 0.311, 0.05)
    rng = np.random.default_rng(4)
    lo = rng.uniform(0.1, 0.6, em.n_p2_nodes)
    hi = np.clip(lo + rng.uniform(0.0, 0.3, em.n_p2_nodes), 0, 1)
    E_lo = effective_support_embedded("P2", em, WeightField(em, lo))
    E_hi = effective_support_embedded("P2", em, WeightField(em, hi))
    assert np.all(E_hi >= E_lo - 1e-12)


def test_classify_constraints_sets(scene):
    bg, em, psi, topo = scene
    cs = classify_constraints(bg, em, psi, topo, epsilon=0.1)
    # every ff node is interface-constrained
    ff_v = em.nodes_with_tag("ff", "P2")
    assert np.array_equal(cs.xv_e, np.sort(ff_v))
    ff_p = em.nodes_with_tag("ff", "P1")
    assert np.array_equal(cs.xp_e, np.sort(ff_p))
    # background velocity constraints: exactly the covered-region nodes
    # away from the outer interface
    assert len(cs.xv_b) > 0
    r = np.linalg.norm(bg.p2_coords[cs.xv_b] - [0.5, 0.5], axis=1)
    assert np.all(r < 0.311 + 1e-9)
    # pressure constraints exist under the solid
    assert len(cs.xp_b) > 0
    # stencil weights sum to one (partition of unity), pins excepted
    for e in cs.entries:
        if e.kind != "inactive-pin":
            assert np.sum(e.weights) == pytest.approx(1.0, abs=1e-9)
    # determinism
    cs2 = classify_constraints(bg, em, psi, topo, epsilon=0.1)
    assert np.array_equal(cs.xv_b, cs2.xv_b)
    assert np.array_equal(cs.xp_b, cs2.xp_b)


def test_classify_epsilon_zero(scene):
    bg, em, psi, topo = scene
    cs = classify_constraints(bg, em, psi, topo, epsilon=0.0)
    assert len(cs.xp_b) == 0


def test_constraint_row_encoding():
    cols, vals, rhs = constraint_row(10, [3, 4, 5], [0.25, 0.5, 0.25])
    assert cols.tolist() == [10, 3, 4, 5]
    assert vals.tolist() == [1.0, -0.25, -0.5, -0.25]
    assert rhs == 0.0


def test_partition_of_unity_at_tertiary_points(scene):
    bg, em, psi, topo = scene
    from puflow.assembly import TertCtx, eval_psi_on_ctx
    from puflow.weighting import _MiniLayout
    ctx = TertCtx(topo, _MiniLayout(bg, em))
    vals, _ = eval_psi_on_ctx(psi.values, ctx)
    clamped = np.clip(vals, 0.0, 1.0)
    assert np.all(clamped >= -1e-12) and np.all(clamped <= 1 + 1e-12)
    assert np.allclose((1 - clamped) + clamped, 1.0)
    # raw expansion overshoots near the clamp knee but stays bounded
    assert vals.min() > -0.2 and vals.max() < 1.2
