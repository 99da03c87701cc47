import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields, replace

from .conic import ConicProgram, ConicSolution, check_size_guard

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 100
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    step: float = 0.98
    size_guard: int = 600
    init_scale: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            expected = int if f.type in (int, "int") else float
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError(f"{f.name} must be a number, got {value!r}")
            if expected is int and not isinstance(value, int):
                raise TypeError(f"{f.name} must be an integer, got {value!r}")
            if value <= 0:
                raise ValueError(f"{f.name} must be positive, got {value!r}")
        if not self.step < 1:
            raise ValueError(f"step must lie in (0, 1), got {self.step}")

    @classmethod
    def from_env(cls, **overrides) -> "SolverOptions":
        """Defaults, then SD_SOLVER_TOL / SD_SIZE_GUARD, then explicit overrides."""
        values = {}
        tol = os.getenv("SD_SOLVER_TOL")
        if tol:
            values["gap_tol"] = values["feas_tol"] = float(tol)
        guard = os.getenv("SD_SIZE_GUARD")
        if guard:
            values["size_guard"] = int(guard)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def updated(self, **changes) -> "SolverOptions":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


class AbstractSolver(ABC):
    def __init__(self, options: SolverOptions | None = None):
        self.options = options or SolverOptions()

    @property
    def name(self) -> str:
        return self.__class__.__name__

    @abstractmethod
    def _solve(self, cp: ConicProgram) -> ConicSolution:
        pass

    def solve(self, cp: ConicProgram) -> ConicSolution:
        """Size-guarded solve; the solution is tagged with the solver name."""
        check_size_guard(cp.psd_sizes, self.options.size_guard)
        LOGGER.debug(
            "%s: %i variables, %i equalities, cones %s",
            self.name,
            cp.nvars,
            cp.neq,
            list(cp.psd_sizes),
        )
        solution = self._solve(cp)
        solution.solver = self.name
        LOGGER.debug(
            "%s finished with status %s after %i iterations",
            self.name,
            solution.status,
            solution.iterations,
        )
        return solution
