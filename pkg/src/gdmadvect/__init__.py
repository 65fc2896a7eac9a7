"""Gradient-discretisation schemes for linear advection with a nonlinear
p-Laplace stabilisation, on triangular and polygonal meshes."""

from .errors import (GDMError, GDMismatch, GeometryError, LinearSolveFailure,
                     NewtonDivergence, NonSimplicialMesh, ParseError,
                     PointOutsideDomain, TrajectoryLeftDomain)
from .gd import DofVector, GradientDiscretisation, build_cvfe, build_gd, build_hfv, build_mlnc_p1
from .mesh import (Mesh, build_dual, build_mesh, generate_refined_nonconforming_mesh,
                   generate_triangular_mesh, read_mesh, write_mesh)
from .problems import ProblemData, case1, case2, case2_exact, get_case, lambda_supg
from .scheme import SchemeConfig, assemble_forms, run, theta_step

__version__ = "0.1.0"
