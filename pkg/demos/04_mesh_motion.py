"""Drag a cylinder through a fitted mesh with the quality-stiffened
pseudo-solid and watch the element quality.

Run:  python3 demos/04_mesh_motion.py
"""
from puflow.meshgen import rectangle_with_hole
from puflow.mesh_motion import MotionState, mesh_step

mesh = rectangle_with_hole((0, 0, 2.2, 0.41), (1.1, 0.205), 0.05, 0.045,
                           tags={"left": "w", "right": "w",
                                 "bottom": "w", "top": "w"})
motion = MotionState(mesh)
walls = mesh.nodes_with_tag("w", "P2")
circle = mesh.nodes_with_tag("fs", "P2")
for k in range(6):
    fixed = {int(n): (0.02, 0.0) for n in circle}
    fixed.update({int(n): (0.0, 0.0) for n in walls})
    new_mesh, vhat = mesh_step(motion, fixed, dt=0.01)
    q = motion.qualities()
    print("step %2d: displacement %.2f, min quality %.3f" %
          (k + 1, 0.02 * (k + 1), q.min()))
