"""Build the partition-of-unity weighting field on an embedded mesh and
export it for inspection.

Run:  python3 demos/02_weighting_field.py
"""
import numpy as np

from puflow.meshgen import disk_with_ring
from puflow.weighting import build_psi
from puflow.mesh import export_vtk

em = disk_with_ring((0.0, 0.0), 0.15, 0.311, 0.03)
psi = build_psi(em)

r = np.linalg.norm(em.vertices, axis=1)
radii = np.unique(np.round(r, 6))
for radius in radii[::3]:
    sel = np.abs(r - radius) < 1e-6
    print("r = %.3f: psi in [%.3f, %.3f]" %
          (radius, psi.values[:em.n_vertices][sel].min(),
           psi.values[:em.n_vertices][sel].max()))
export_vtk(em, {"pressure": psi.values[:em.n_vertices]},
           "weighting_field.vtk")
print("wrote weighting_field.vtk (field stored as 'pressure')")
