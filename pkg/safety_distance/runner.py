"""
One relaxation degree end to end (build, solve, read back), and sweeps over
a degree range.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .datatype import DistanceResult, ResultRecord
from .errors import SafetyDistanceError, SizeGuardError, SolverError
from .problem_file import ProblemOptions
from .program import MomentProgram, ProblemSpec, build_distance_program, build_shape_program
from .recovery import (
    RANK_THRESHOLD,
    Certificate,
    CertificateReport,
    ExtractionReport,
    certificate_to_json,
    extract_atoms,
    extract_certificate,
    verify_certificate,
)
from .solver import ConicProgram, ConicSolution, SolverOptions, get_solver, to_standard_form
from .sparsity import build_sparse_distance_program, use_sparse
from .utils import Stopwatch

LOGGER = logging.getLogger(__name__)

MONOTONE_TOL = 1e-6


@dataclass(frozen=True)
class RunOptions:
    sparse: str = "auto"
    solver: str = "interior-point"
    solver_options: SolverOptions = field(default_factory=SolverOptions.from_env)
    threshold: float = RANK_THRESHOLD
    certify: bool = False
    certificate_samples: int = 10_000
    certificate_tol: float = 1e-6
    seed: int = 0

    @classmethod
    def from_problem_options(cls, options: ProblemOptions, **overrides) -> RunOptions:
        """File options first, then any non-None override (CLI flags)."""
        solver_options = SolverOptions.from_env(
            gap_tol=options.tolerance,
            feas_tol=options.tolerance,
            size_guard=options.size_guard,
        )
        values = {
            "sparse": options.sparse,
            "solver": options.solver,
            "solver_options": solver_options,
            "seed": options.seed,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class DegreeSolution:
    """Everything produced at one degree; `result` is the serializable summary."""

    program: MomentProgram
    conic: ConicProgram
    solution: ConicSolution
    result: DistanceResult
    extraction: ExtractionReport | None = None
    certificate: Certificate | None = None
    report: CertificateReport | None = None


def build_program(problem: ProblemSpec, d: int, options: RunOptions) -> tuple[MomentProgram, bool]:
    if problem.shape is not None:
        return build_shape_program(problem, d, options.solver_options.size_guard), False
    n = len(problem.states)
    if n >= 2 and use_sparse(options.sparse, n, d):
        return build_sparse_distance_program(problem, d), True
    return build_distance_program(problem, d), False


def run_degree(problem: ProblemSpec, d: int, options: RunOptions | None = None) -> DegreeSolution:
    options = options or RunOptions()
    with Stopwatch() as timer:
        program, sparse = build_program(problem, d, options)
        conic = to_standard_form(program)
        solver = get_solver(options.solver, options.solver_options)
        solution = solver.solve(conic)
    raw = dual = None
    if solution.optimal:
        raw = conic.sense * solution.primal_objective
        dual = conic.sense * solution.dual_objective
    else:
        LOGGER.warning(
            "Degree %i of %s finished with status %s, no bound reported (last iterate %.6g)",
            d,
            problem.name,
            solution.status,
            conic.sense * solution.primal_objective,
        )

    extraction = None
    if solution.optimal and all(map(math.isfinite, solution.y)):
        extraction = extract_atoms(program.with_solution(solution.y), options.threshold)

    certificate = report = None
    if options.certify and not solution.optimal:
        LOGGER.warning("No certificate at degree %i: status %s", d, solution.status)
    elif options.certify:
        certificate = extract_certificate(solution, program, conic)
        report = verify_certificate(
            certificate,
            problem,
            options.certificate_samples,
            options.certificate_tol,
            options.seed,
        )

    result = DistanceResult(
        problem=problem.name,
        degree=d,
        tilde_degree=program.tilde_degree,
        objective=problem.objective.kind,
        sparse=sparse,
        status=str(solution.status),
        raw_bound=raw,
        bound=None if raw is None else problem.objective.report(raw),
        dual_bound=dual,
        gap=solution.gap,
        iterations=solution.iterations,
        solve_time=timer.elapsed,
        moment_sizes=program.moment_matrix_sizes(),
        ratios=extraction.ratios if extraction is not None else {},
        atoms=extraction.atoms if extraction is not None else None,
        peak_time=extraction.peak_time if extraction is not None else None,
        certificate=None if report is None else report.to_dict(),
    )
    LOGGER.info(
        "Degree %i of %s: bound %s (%s) in %.2fs",
        d,
        problem.name,
        "-" if result.bound is None else f"{result.bound:.6g}",
        result.status,
        timer.elapsed,
    )
    return DegreeSolution(program, conic, solution, result, extraction, certificate, report)


def solve_degree(problem: ProblemSpec, d: int, options: RunOptions | None = None) -> DistanceResult:
    return run_degree(problem, d, options).result


def certificate_document(solved: DegreeSolution) -> dict:
    if solved.certificate is None:
        raise SolverError("no certificate was extracted at this degree")
    return certificate_to_json(solved.certificate, solved.report)


def check_monotone(results: list[DistanceResult], tol: float = MONOTONE_TOL) -> list[str]:
    """
    Warnings for consecutive degrees whose raw bounds decrease beyond `tol`.
    Degrees without a bound (non-optimal solves) are left out.
    """
    warnings = []
    ordered = sorted((r for r in results if r.raw_bound is not None), key=lambda r: r.degree)
    for lower, upper in zip(ordered, ordered[1:]):
        if upper.raw_bound < lower.raw_bound - tol * max(1.0, abs(lower.raw_bound)):
            warnings.append(
                f"bound decreased from degree {lower.degree} ({lower.raw_bound:.6g}) "
                f"to degree {upper.degree} ({upper.raw_bound:.6g})"
            )
    return warnings


def sweep(
    problem: ProblemSpec,
    degrees: range,
    options: RunOptions | None = None,
    jobs: int = 1,
) -> ResultRecord:
    """
    Solve every degree in `degrees`; a degree that fails (size guard, solver
    error) is recorded and the other degrees are kept.
    """
    options = options or RunOptions()
    record = ResultRecord(problem=problem.name, objective=problem.objective.kind)

    def attempt(d: int) -> tuple[int, DistanceResult | None, str | None]:
        try:
            return d, solve_degree(problem, d, options), None
        except (SizeGuardError, SolverError) as exc:
            LOGGER.warning("Degree %i skipped: %s", d, exc)
            return d, None, str(exc)
        except SafetyDistanceError as exc:
            LOGGER.error("Degree %i failed: %s", d, exc)
            return d, None, str(exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(attempt, degrees))
    else:
        outcomes = [attempt(d) for d in degrees]

    for d, result, error in outcomes:
        if result is not None:
            record.results.append(result)
        else:
            record.failures[d] = error
    record.warnings = check_monotone(record.results)
    record.monotone = not record.warnings
    for warning in record.warnings:
        LOGGER.warning("Hierarchy not monotone: %s", warning)
    return record
