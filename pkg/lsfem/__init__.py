"""lsfem - div least-squares finite elements with supercloseness verification."""

from .analysis import (
    compute_errors,
    energy_norm,
    expected_rates,
    postprocess,
    run_study,
    solve_problem,
)
from .assembly import SparseSystem, assemble
from .config import StudyConfig
from .exceptions import LsfemError
from .linalg import SolveReport, eigen_extrema_dense, solve_spd
from .mesh import Mesh, build_structured, load_mesh, refine_uniform, save_mesh
from .problems import Problem, builtin, regularity_hint
from .projections import (
    PiecewisePolynomial,
    elliptic_project,
    hdiv_interpolate,
    l2_project,
    nodal_interpolate,
)
from .quadrature import QuadratureRule, edge_rule, refined_triangle_rule, triangle_rule
from .spaces import DiscreteField, DofMap, FluxSpace, ScalarSpace, build_dofmap
from .types import ConvergenceReport, ElementPair, ErrorReport, ExpectedRate, SpaceDescriptor

try:
    from ._version import version as __version__
except ImportError:
    __version__ = "0.0.0"

__all__ = [
    "__version__",
    "ConvergenceReport",
    "DiscreteField",
    "DofMap",
    "ElementPair",
    "ErrorReport",
    "ExpectedRate",
    "FluxSpace",
    "LsfemError",
    "Mesh",
    "PiecewisePolynomial",
    "Problem",
    "QuadratureRule",
    "ScalarSpace",
    "SolveReport",
    "SpaceDescriptor",
    "SparseSystem",
    "StudyConfig",
    "assemble",
    "build_dofmap",
    "build_structured",
    "builtin",
    "compute_errors",
    "edge_rule",
    "eigen_extrema_dense",
    "elliptic_project",
    "energy_norm",
    "expected_rates",
    "hdiv_interpolate",
    "l2_project",
    "load_mesh",
    "nodal_interpolate",
    "postprocess",
    "refine_uniform",
    "refined_triangle_rule",
    "regularity_hint",
    "run_study",
    "save_mesh",
    "solve_problem",
    "solve_spd",
    "triangle_rule",
]
