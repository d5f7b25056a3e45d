"""Finite element solver for coupled electro-osmotic flow.

Stokes flow driven by the electric double layer: a generalized
Taylor-Hood discretisation of the velocity/pressure pair coupled to the
nonlinear potential equation, with monolithic Newton and fixed-point
solvers, small-data solvability diagnostics and a manufactured-solution
convergence harness.
"""

from .cli import RunConfig, main, parse_config, write_config, write_vtk
from .fe_space import SystemState, build_space, interpolate, \
    taylor_hood_spaces
from .forms import ProblemConfig, SparseSystem, charge_density
from .mesh import Mesh, MeshError, build_unit_square_mesh, mesh_from_arrays
from .mms import ConvergenceTable, ExactSolution, StudyError, error_norms, \
    manufactured_problem, run_convergence_study, standard_exact_solution
from .solver import DiagnosticsReport, LinearSolveError, NonlinearReport, \
    linear_solve, newton_solve, picard_solve, small_data_diagnostics

__version__ = "0.1.0"

__all__ = [
    "ConvergenceTable",
    "DiagnosticsReport",
    "ExactSolution",
    "LinearSolveError",
    "Mesh",
    "MeshError",
    "NonlinearReport",
    "ProblemConfig",
    "RunConfig",
    "SparseSystem",
    "StudyError",
    "SystemState",
    "build_space",
    "build_unit_square_mesh",
    "charge_density",
    "error_norms",
    "interpolate",
    "linear_solve",
    "main",
    "manufactured_problem",
    "mesh_from_arrays",
    "newton_solve",
    "parse_config",
    "picard_solve",
    "run_convergence_study",
    "small_data_diagnostics",
    "standard_exact_solution",
    "taylor_hood_spaces",
    "write_config",
    "write_vtk",
]
