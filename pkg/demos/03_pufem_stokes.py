"""Solve the steady Stokes cylinder problem on overlapping meshes and
compare drag with the boundary-fitted path.

Run:  python3 demos/03_pufem_stokes.py
"""
from puflow.bench import (steady_cylinder_case, solution_evaluator,
                          global_flux_balance)
from puflow.quantities import compute_forces

for mode in ("pufem", "classical"):
    scene, x = steady_cylinder_case(0.05, mode=mode, problem="stokes")
    lay = scene.layout
    if lay.has_embedded:
        vb, ve, pb, pe = lay.split(x)
        fd, fl = compute_forces(lay.em, lay.ve, ve, lay.pe, pe, scene.mu)
    else:
        vb, _, pb, _ = lay.split(x)
        fd, fl = compute_forces(lay.bg, lay.vb, vb, lay.pb, pb, scene.mu,
                                edge_ids=lay.bg.boundary_edges_with_tag("fs"))
    net, inflow = global_flux_balance(scene, x)
    print("%-10s drag %.4f lift %+.1e  mass defect %.1e"
          % (mode, fd, fl, abs(net) / inflow))
