"""Space-time finite elements for the heat equation with BDDC-preconditioned GMRES."""

from .bddc import BddcOperator, Level, build_bddc
from .experiments import RunConfig, run_convergence_study, run_scaling_study, run_solve
from .fem import ProblemSpec, assemble, error_norm_h, l2_error, manufactured_problem
from .krylov import SolveReport, gmres
from .mesh import SpaceTimeMesh, generate_structured
from .partition import Partition, block_partition, rcb_partition
from .schur import SchurOperator, build_schur, split_dofs

__all__ = [
    "BddcOperator", "Level", "build_bddc", "RunConfig", "run_convergence_study",
    "run_scaling_study", "run_solve", "ProblemSpec", "assemble", "error_norm_h",
    "l2_error", "manufactured_problem", "SolveReport", "gmres", "SpaceTimeMesh",
    "generate_structured", "Partition", "block_partition", "rcb_partition",
    "SchurOperator", "build_schur", "split_dofs",
]
__version__ = "0.1.0"
