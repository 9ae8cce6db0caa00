"""Shared scene builders for the test suite."""

import numpy as np

from puflow.meshgen import rectangle, disk_with_ring
from puflow.overlap import build_overlap
from puflow.weighting import build_psi, classify_constraints, fs_edge_ids
from puflow.assembly import PuLayout, SceneState


def exact_quadratic_stokes(mu=1.0):
    """Divergence-free quadratic velocity and matching linear pressure."""
    def v(p):
        p = np.atleast_2d(p)
        return np.stack([p[:, 0] ** 2, -2.0 * p[:, 0] * p[:, 1]], axis=-1)

    def pr(p):
        p = np.atleast_2d(p)
        return 2.0 * mu * p[:, 0]
    return v, pr


def solid_interior_pressure_nodes(em):
    """Embedded P1 nodes strictly inside the solid region."""
    fs_verts = np.unique(em.edges[fs_edge_ids(em)].ravel())
    solid = np.unique(em.triangles[em.region_tris("solid")].ravel())
    return np.setdiff1d(solid, fs_verts)


def pufem_cylinder_scene(nx=9, center=(0.47, 0.53), r_solid=0.15,
                         r_outer=0.30, h_em=0.055, mu=1.0, rho=0.0,
                         viscous_form="grad", include_advection=False,
                         epsilon=0.1):
    """Unit-square background with an embedded disk+ring mesh."""
    bg = rectangle((0, 0, 1, 1), nx, nx,
                   tags={"left": "d", "right": "d",
                         "bottom": "d", "top": "d"})
    em = disk_with_ring(center, r_solid, r_outer, h_em)
    psi = build_psi(em)
    topo = build_overlap(bg, em)
    cs = classify_constraints(bg, em, psi, topo, epsilon=epsilon)
    lay = PuLayout(bg, em)
    scene = SceneState(lay, rho=rho, mu=mu, viscous_form=viscous_form,
                       include_advection=include_advection, psi=psi,
                       topo=topo)
    scene.constraints = cs
    return scene


def patch_dirichlet(scene, v_exact, p_exact):
    """Dirichlet data driving the scene to an exact global solution."""
    lay = scene.layout
    bg, em = lay.bg, lay.em
    dofs, vals = [], []
    bnodes = np.unique(np.concatenate(
        [bg.nodes_with_tag(t, "P2") for t in bg.boundary_tags()]))
    vb = v_exact(bg.p2_coords[bnodes])
    for i, n in enumerate(bnodes):
        dofs += [lay.vdof("b", n, 0), lay.vdof("b", n, 1)]
        vals += [vb[i, 0], vb[i, 1]]
    solid_nodes = np.unique(em.tri_p2[em.region_tris("solid")].ravel())
    vs = v_exact(em.p2_coords[solid_nodes])
    for i, n in enumerate(solid_nodes):
        dofs += [lay.vdof("e", n, 0), lay.vdof("e", n, 1)]
        vals += [vs[i, 0], vs[i, 1]]
    for n in solid_interior_pressure_nodes(em):
        dofs.append(lay.pdof("e", n))
        vals.append(float(p_exact(em.vertices[n][None])[0]))
    dofs.append(lay.pdof("b", 0))
    vals.append(float(p_exact(bg.vertices[0][None])[0]))
    scene.set_dirichlet(dofs, vals)
    return scene


def rigid_scene_dirichlet(scene, bg_values=None, solid_velocity=(0.0, 0.0)):
    """No-slip style Dirichlet: bg boundary data plus rigid solid values."""
    lay = scene.layout
    bg, em = lay.bg, lay.em
    dofs, vals = [], []
    for tag in bg.boundary_tags():
        fn = (bg_values or {}).get(tag)
        if fn is None:
            continue
        nodes = bg.nodes_with_tag(tag, "P2")
        vv = fn(bg.p2_coords[nodes])
        for i, n in enumerate(nodes):
            for c in (0, 1):
                if not np.isnan(vv[i, c]):
                    dofs.append(lay.vdof("b", n, c))
                    vals.append(vv[i, c])
    solid_nodes = np.unique(em.tri_p2[em.region_tris("solid")].ravel())
    for n in solid_nodes:
        dofs += [lay.vdof("e", n, 0), lay.vdof("e", n, 1)]
        vals += [solid_velocity[0], solid_velocity[1]]
    for n in solid_interior_pressure_nodes(em):
        dofs.append(lay.pdof("e", n))
        vals.append(0.0)
    scene.set_dirichlet(dofs, vals)
    return scene
