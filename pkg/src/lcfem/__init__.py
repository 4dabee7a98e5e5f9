"""Adaptive Q2/Q1 finite elements for Frank-Oseen director fields.

The package solves for equilibrium director fields of nematic and
cholesteric liquid crystals with either a penalty or a Lagrange-multiplier
treatment of the unit-length constraint.  Newton's method runs inside a
coarse-to-fine hierarchy whose meshes are refined where residual error
estimators are largest.
"""

from .amr import FlagSet, flag_top_fraction
from .estimator import ElementEstimates, edge_jump, estimate, estimate_analytic, strong_residual
from .fem import FeSpace, build_constraints, h1_error, interpolate, transfer
from .mesh import (
    BoundaryDescriptor,
    Mesh,
    build_ellipse_mesh,
    build_uniform_grid,
    quality_report,
    refine,
    refine_uniform,
)
from .physics import (
    DirectorState,
    ProblemConfig,
    deviation_report,
    energy,
    jacobian_lagrangian,
    jacobian_penalty,
    residual_lagrangian,
    residual_penalty,
)
from .problems import BoundaryCondition, preset
from .solver import (
    LinearSolveError,
    NonConvergenceError,
    SolveStats,
    linear_solve,
    nested_iteration,
    newton_solve,
    work_units,
)

__version__ = "0.1.0"
