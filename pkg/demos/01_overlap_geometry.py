"""Clip two meshes and inspect the tertiary integration topology.

Run:  python3 demos/01_overlap_geometry.py
"""
import numpy as np

from puflow.meshgen import rectangle, disk_with_ring
from puflow.overlap import build_overlap, CUT, COVERED

bg = rectangle((0, 0, 1, 1), 12, 12,
               tags={s: "wall" for s in ("left", "right", "bottom", "top")})
em = disk_with_ring((0.45, 0.55), 0.15, 0.32, 0.06)
topo = build_overlap(bg, em)

print("background: %d triangles, embedded: %d" %
      (bg.n_triangles, em.n_triangles))
print("intersecting pairs: %d, sub-triangles: %d" %
      (len(topo.pairs), topo.n_sub))
print("cut background cells: %d, fully covered: %d" %
      (int(np.sum(topo.background_class == CUT)), len(topo.covered_region)))
print("tertiary area = %.6f (embedded area %.6f)" %
      (topo.total_area(), float(np.sum(em.areas))))
print("both-parent point reconstruction gap: %.2e" %
      topo.consistency_errors())
