import numpy as np
import pytest

from puflow.meshgen import rectangle, annulus
from puflow.overlap import (clip_triangles, clip_triangles_batch,
                            triangulate_polygon, find_candidates,
                            build_overlap, locate_point, polygon_areas,
                            OverlapError, COVERED, OUTSIDE, CUT)


def shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def random_ccw_triangle(rng, scale=1.0, shift=0.0):
    while True:
        t = rng.uniform(0, scale, size=(3, 2)) + shift
        a = np.cross(np.append(t[1] - t[0], 0), np.append(t[2] - t[0], 0))[2]
        if abs(a) > 0.05 * scale ** 2:
            return t if a > 0 else t[[0, 2, 1]]


def mc_area_estimate(tri_a, tri_b, n, rng):
    lo = np.minimum(tri_a.min(axis=0), tri_b.min(axis=0))
    hi = np.maximum(tri_a.max(axis=0), tri_b.max(axis=0))
    pts = rng.uniform(lo, hi, size=(n, 2))
    box = np.prod(hi - lo)

    def inside(tri):
        s1 = np.sign((tri[1, 0] - tri[0, 0]) * (pts[:, 1] - tri[0, 1])
                     - (tri[1, 1] - tri[0, 1]) * (pts[:, 0] - tri[0, 0]))
        s2 = np.sign((tri[2, 0] - tri[1, 0]) * (pts[:, 1] - tri[1, 1])
                     - (tri[2, 1] - tri[1, 1]) * (pts[:, 0] - tri[1, 0]))
        s3 = np.sign((tri[0, 0] - tri[2, 0]) * (pts[:, 1] - tri[2, 1])
                     - (tri[0, 1] - tri[2, 1]) * (pts[:, 0] - tri[2, 0]))
        return (s1 >= 0) & (s2 >= 0) & (s3 >= 0)

    hits = inside(tri_a) & inside(tri_b)
    p = hits.mean()
    area = box * p
    sigma = box * np.sqrt(max(p * (1 - p), 1e-30) / n)
    return area, sigma


def test_clip_self_is_identity():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    poly = clip_triangles(tri, tri)
    assert len(poly) == 3
    assert shoelace(poly) == pytest.approx(0.5, abs=1e-14)


def test_clip_disjoint_is_empty():
    a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    b = a + np.array([10.0, 0.0])
    assert len(clip_triangles(a, b)) == 0


def test_clip_known_translate():
    a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    b = a + np.array([0.5, 0.0])
    poly = clip_triangles(a, b)
    # overlap of unit right triangle with its x-translate by 0.5:
    # triangle (0.5,0),(1,0),(0.5,0.5) -> area 1/16 ... verified by MC below
    area = shoelace(poly)
    rng = np.random.default_rng(42)
    est, sigma = mc_area_estimate(a, b, 2 * 10 ** 6, rng)
    assert abs(area - est) < 3 * sigma


def test_clip_degenerate_raises():
    bad = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    good = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        clip_triangles(bad, good)


def test_clip_random_pairs_against_monte_carlo():
    rng = np.random.default_rng(2024)
    for _ in range(12):
        a = random_ccw_triangle(rng)
        b = random_ccw_triangle(rng, shift=rng.uniform(-0.3, 0.3))
        poly = clip_triangles(a, b)
        area = shoelace(poly) if len(poly) else 0.0
        assert len(poly) in (0,) + tuple(range(3, 7))
        est, sigma = mc_area_estimate(a, b, 10 ** 6, rng)
        assert abs(area - est) < 4 * max(sigma, 1e-12)


def test_clip_vertices_ccw():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = random_ccw_triangle(rng)
        b = random_ccw_triangle(rng, shift=rng.uniform(-0.2, 0.2))
        poly = clip_triangles(a, b)
        if len(poly) >= 3:
            assert shoelace(poly) > 0


def test_triangulate_polygon_cases():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = triangulate_polygon(tri)
    assert out.shape == (1, 3, 2)
    assert np.allclose(out[0], tri)

    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    out = triangulate_polygon(square)
    assert out.shape == (2, 3, 2)
    areas = [shoelace(t) for t in out]
    assert areas == pytest.approx([0.5, 0.5], abs=1e-15)

    th = np.linspace(0, 2 * np.pi, 7)[:-1]
    hexa = np.stack([np.cos(th), np.sin(th)], axis=-1)
    out = triangulate_polygon(hexa)
    assert out.shape == (4, 3, 2)
    assert sum(shoelace(t) for t in out) == pytest.approx(
        1.5 * np.sqrt(3), abs=1e-13)

    assert len(triangulate_polygon(np.zeros((2, 2)))) == 0


@pytest.fixture(scope="module")
def meshes():
    bg = rectangle((0, 0, 1, 1), 8, 8)
    em = annulus((0.5, 0.5), 0.15, 0.35, 2, 16)
    return bg, em


def test_find_candidates_superset_of_bruteforce(meshes):
    bg, em = meshes
    cand = {tuple(p) for p in find_candidates(bg, em)}
    ta = bg.vertices[bg.triangles]
    tb = em.vertices[em.triangles]
    for i in range(bg.n_triangles):
        for j in range(em.n_triangles):
            poly, cnt = clip_triangles_batch(ta[i][None], tb[j][None])
            if cnt[0] >= 3:
                assert (i, j) in cand


def test_find_candidates_disjoint_empty():
    bg = rectangle((0, 0, 1, 1), 4, 4)
    em_far = rectangle((5, 5, 6, 6), 2, 2)
    assert len(find_candidates(bg, em_far)) == 0


def test_find_candidates_identical_mesh_pairs_self():
    bg = rectangle((0, 0, 1, 1), 3, 3)
    pairs = {tuple(p) for p in find_candidates(bg, bg)}
    for t in range(bg.n_triangles):
        assert (t, t) in pairs


def test_build_overlap_invariants(meshes):
    bg, em = meshes
    topo = build_overlap(bg, em)
    # sub-areas per pair sum to the polygon areas
    per_pair = np.zeros(len(topo.pairs))
    np.add.at(per_pair, topo.sub_pair, topo.sub_areas)
    assert np.allclose(per_pair, topo.pair_areas, atol=1e-13)
    # total tertiary area equals the embedded area
    assert topo.total_area() == pytest.approx(float(np.sum(em.areas)),
                                              rel=1e-12)
    # both-parent reconstruction agreement
    assert topo.consistency_errors() < 1e-10
    # covered background area never exceeds triangle area
    assert np.all(topo.covered_area <= bg.areas * (1 + 1e-9))
    # classes present and sane
    assert set(np.unique(topo.background_class)) <= {OUTSIDE, CUT, COVERED}
    assert np.all(topo.covered_area[topo.background_class == OUTSIDE]
                  < 1e-9)


def test_build_overlap_matches_bruteforce_pairs(meshes):
    bg, em = meshes
    topo = build_overlap(bg, em)
    got = {tuple(p) for p in topo.pairs}
    ta = bg.vertices[bg.triangles]
    tb = em.vertices[em.triangles]
    expect = {}
    for i in range(bg.n_triangles):
        for j in range(em.n_triangles):
            poly, cnt = clip_triangles_batch(ta[i][None], tb[j][None])
            if cnt[0] >= 3:
                expect[(i, j)] = polygon_areas(poly, cnt)[0]
    assert got == set(expect)
    for k, (i, j) in enumerate(topo.pairs):
        assert topo.pair_areas[k] == pytest.approx(expect[(i, j)],
                                                   abs=1e-12)


def test_build_overlap_exact_cover():
    # embedded mesh identical to one background triangle
    bg = rectangle((0, 0, 1, 1), 2, 2)
    tri0 = bg.triangles[3]
    em_verts = bg.vertices[tri0]
    from puflow.mesh import TriMesh
    em = TriMesh(em_verts, [[0, 1, 2]],
                 boundary_tags={(0, 1): "ff", (1, 2): "ff", (0, 2): "ff"})
    topo = build_overlap(bg, em)
    assert topo.background_class[3] == COVERED
    others = np.delete(np.arange(bg.n_triangles), 3)
    assert np.all(topo.background_class[others] == OUTSIDE)


def test_build_overlap_not_nested_raises():
    bg = rectangle((0, 0, 1, 1), 4, 4)
    em = rectangle((0.5, 0.5, 1.5, 1.5), 4, 4)   # sticks out
    with pytest.raises(OverlapError, match="nest"):
        build_overlap(bg, em)


def test_build_overlap_deterministic(meshes):
    bg, em = meshes
    t1 = build_overlap(bg, em)
    t2 = build_overlap(bg, em)
    assert np.array_equal(t1.pairs, t2.pairs)
    assert np.array_equal(t1.sub_verts, t2.sub_verts)
    assert np.array_equal(t1.wdet, t2.wdet)
    assert np.array_equal(t1.bary_bg, t2.bary_bg)


def test_area_conservation_random_placements():
    bg = rectangle((0, 0, 2, 2), 12, 12)
    rng = np.random.default_rng(77)
    base = annulus((0, 0), 0.1, 0.3, 2, 14)
    total = float(np.sum(base.areas))
    for _ in range(10):
        shift = rng.uniform(0.45, 1.55, size=2)
        em = base.with_vertices(base.vertices + shift)
        topo = build_overlap(bg, em)
        assert topo.total_area() == pytest.approx(total, rel=1e-9)


def test_locate_point_interface():
    bg = rectangle((0, 0, 1, 1), 4, 4)
    assert locate_point(bg, [2.0, 2.0]) is None
    hit = locate_point(bg, [0.3, 0.3])
    assert hit is not None
    tri, lam = hit
    assert np.allclose(bg.affine_map(tri, lam), [0.3, 0.3], atol=1e-12)
