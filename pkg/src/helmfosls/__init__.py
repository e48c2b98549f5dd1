"""Ultra-weak first-order least-squares (FOSLS) discretisation of the
Helmholtz equation with an HSSC-multigrid preconditioned MINRES solver and an
adaptive loop driven by the built-in error estimator."""
from .assembly import ProblemData, SaddleSystem, assemble_system
from .driver import (PrecondConfig, direct_solve, dorfler_mark, error_estimator, exact_errors,
                     run_adaptive, solve_on_mesh)
from .femspace import build_test_space, build_trial_space
from .mesh import MeshHierarchy, Triangulation, build_initial_mesh, read_mesh, write_mesh
from .minres import StoppingPolicy, minres_solve
from .precond import build_precond, build_schur_preconditioner
from .problems import make_problem

__version__ = "0.1.0"

__all__ = [
    "MeshHierarchy", "PrecondConfig", "ProblemData", "SaddleSystem", "StoppingPolicy",
    "Triangulation", "assemble_system", "build_initial_mesh", "build_precond",
    "build_schur_preconditioner", "build_test_space", "build_trial_space", "direct_solve",
    "dorfler_mark", "error_estimator", "exact_errors", "make_problem", "minres_solve",
    "read_mesh", "run_adaptive", "solve_on_mesh", "write_mesh",
]
