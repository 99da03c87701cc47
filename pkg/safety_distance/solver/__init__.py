from .abstract_solver import AbstractSolver, SolverOptions
from .conic import (
    ConeBlock,
    ConicProgram,
    ConicSolution,
    Status,
    check_size_guard,
    duality_gap,
    to_standard_form,
)
from .interior_point import InteriorPointSolver

SOLVERS = ("interior-point", "cvxpy")


def get_solver(name: str = "interior-point", options: SolverOptions | None = None) -> AbstractSolver:
    if name == "interior-point":
        return InteriorPointSolver(options)
    if name == "cvxpy" or name.startswith("cvxpy:"):
        from .cvxpy_solver import CvxpySolver

        backend = name.partition(":")[2] or None
        return CvxpySolver(options, backend=backend)
    raise ValueError(f"unknown solver {name!r}, expected one of {SOLVERS}")
