"""puflow: overlapping-mesh finite element solver for 2D incompressible
flow and fluid-structure interaction.

The global flow field is a weighted sum of fields on a fixed background
mesh and a moving embedded mesh, combined through a smooth weighting
field and coupled by interpolation constraints. The package also ships a
classical boundary-fitted Taylor-Hood path and the benchmark harness that
drives both.
"""

from .quadrature import QuadratureRule, rule
from .basis import eval_basis
from .mesh import (TriMesh, MeshError, element_quality, triangle_quality,
                   load_mesh, save_mesh, export_vtk, interpolate_field)
from .dofs import DofMap, FieldVec, eval_field

__all__ = [
    "QuadratureRule", "rule", "eval_basis",
    "TriMesh", "MeshError", "element_quality", "triangle_quality",
    "load_mesh", "save_mesh", "export_vtk", "interpolate_field",
    "DofMap", "FieldVec", "eval_field",
]

__version__ = "0.1.0"
