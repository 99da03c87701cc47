"""
External solver backend through cvxpy (any installed SDP-capable solver).
"""

import logging

import numpy as np

from ..errors import SolverError
from .abstract_solver import AbstractSolver, SolverOptions
from .conic import PSD, ConicProgram, ConicSolution, Status

LOGGER = logging.getLogger(__name__)

try:
    import cvxpy as cp

    HAS_CVXPY = True
except ImportError:
    HAS_CVXPY = False
    LOGGER.debug("cvxpy not found, external solver unavailable")


def _status(value: str) -> Status:
    if value == cp.OPTIMAL:
        return Status.OPTIMAL
    if value in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return Status.INFEASIBLE
    if value in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return Status.UNBOUNDED
    if value == cp.USER_LIMIT:
        return Status.MAX_ITER
    return Status.ILL_CONDITIONED


class CvxpySolver(AbstractSolver):
    def __init__(self, options: SolverOptions | None = None, backend: str | None = None):
        if not HAS_CVXPY:
            raise SolverError("the cvxpy solver needs the optional 'cvxpy' package")
        super().__init__(options)
        self.backend = backend

    @property
    def name(self) -> str:
        return f"{self.__class__.__name__}[{self.backend or 'default'}]"

    def _solve(self, program: ConicProgram) -> ConicSolution:
        y = cp.Variable(program.nvars)
        constraints = []
        equality = None
        if program.neq:
            equality = program.eq_matrix @ y == program.eq_rhs
            constraints.append(equality)
        cone_constraints = []
        for cone in program.cones:
            affine = cone.phi @ y + cone.const
            if cone.kind == PSD:
                z = cp.Variable((cone.size, cone.size), symmetric=True)
                # z is symmetric, so the flattening order is irrelevant
                constraints.append(cp.vec(z) == affine)
                cone_constraints.append(z >> 0)
            else:
                cone_constraints.append(affine >= 0)
        problem = cp.Problem(
            cp.Minimize(program.c @ y + program.offset), constraints + cone_constraints
        )
        try:
            problem.solve(solver=self.backend)
        except cp.SolverError as exc:
            LOGGER.warning("%s failed: %s", self.name, exc)
            return self._failed(program)
        status = _status(problem.status)
        if y.value is None:
            return self._failed(program, status)

        cone_duals = [np.asarray(con.dual_value, dtype=float) for con in cone_constraints]
        lam = (
            np.asarray(equality.dual_value, dtype=float).ravel()
            if equality is not None
            else np.zeros(0)
        )
        # cvxpy's multiplier sign convention for equalities differs between
        # versions; keep the sign that satisfies c - Phi'X - B'lam = 0
        stationary = program.c - sum(
            cone.phi.T @ np.ravel(x) for cone, x in zip(program.cones, cone_duals)
        )
        if program.neq:
            residual_plus = np.linalg.norm(stationary - program.eq_matrix.T @ lam)
            residual_minus = np.linalg.norm(stationary + program.eq_matrix.T @ lam)
            if residual_minus < residual_plus:
                lam = -lam
            dual_residual = min(residual_plus, residual_minus)
        else:
            dual_residual = float(np.linalg.norm(stationary))
        dual_objective = float(
            program.eq_rhs @ lam
            - sum(np.sum(cone.const * np.ravel(x)) for cone, x in zip(program.cones, cone_duals))
            + program.offset
        )
        primal_residual = float(
            np.linalg.norm(program.eq_matrix @ y.value - program.eq_rhs)
        ) if program.neq else 0.0
        return ConicSolution(
            status=status,
            y=np.asarray(y.value, dtype=float),
            eq_duals=lam,
            cone_duals=cone_duals,
            primal_objective=program.objective(y.value),
            dual_objective=dual_objective,
            iterations=int(problem.solver_stats.num_iters or 0),
            primal_residual=primal_residual,
            dual_residual=float(dual_residual),
            info={"backend": problem.solver_stats.solver_name},
        )

    def _failed(self, program: ConicProgram, status: Status = Status.ILL_CONDITIONED):
        nan = float("nan")
        return ConicSolution(
            status=status,
            y=np.full(program.nvars, nan),
            eq_duals=np.zeros(program.neq),
            cone_duals=[],
            primal_objective=nan,
            dual_objective=nan,
        )
