"""Virtual element solvers on polygonal meshes with MC and MLMC uncertainty quantification."""
__version__ = "0.1.0"

from .exceptions import (CoefficientError, ConfigError, GeometryError, MeshFormatError,
                         MeshTopologyError, NumericalError, PolyUQError, SolverError)
from .geometry import (MeshHierarchy, PolygonalMesh, build_cartesian_hierarchy,
                       build_refined_hierarchy, cartesian_mesh, load_mesh, refine_uniform,
                       voronoi_mesh, write_mesh)
from .vem import VemSpace, assemble, error_norms, get_space, project_field, qoi, solve
from .fields import PiecewisePolyField, restrict_to_fine, restriction_matrix
from .stochastic import (PiecewiseRegionCoefficient, SampleStream, SmoothKLCoefficient,
                         sample_coefficient, smooth_kl_benchmark)
from .problems import StochasticProblem, smooth_coefficient_problem, strata_problem
from .estimators import (EstimatorResult, MCVEEstimator, MLMCVEEstimator, VemSolver,
                         mc_estimate, mc_sample_count, mlmc_estimate, mlmc_sample_counts)

__all__ = [
    "__version__",
    "PolyUQError", "ConfigError", "NumericalError", "GeometryError", "MeshFormatError",
    "MeshTopologyError", "CoefficientError", "SolverError",
    "PolygonalMesh", "MeshHierarchy", "cartesian_mesh", "build_cartesian_hierarchy",
    "build_refined_hierarchy", "refine_uniform", "voronoi_mesh", "load_mesh", "write_mesh",
    "VemSpace", "get_space", "assemble", "solve", "project_field", "error_norms", "qoi",
    "PiecewisePolyField", "restriction_matrix", "restrict_to_fine",
    "SampleStream", "SmoothKLCoefficient", "PiecewiseRegionCoefficient", "smooth_kl_benchmark",
    "sample_coefficient",
    "StochasticProblem", "smooth_coefficient_problem", "strata_problem",
    "EstimatorResult", "mc_sample_count", "mlmc_sample_counts", "mc_estimate", "mlmc_estimate",
    "VemSolver", "MCVEEstimator", "MLMCVEEstimator",
]
