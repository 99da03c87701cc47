import csv
import sys
import json
import logging
import argparse
from dataclasses import asdict, replace
from pathlib import Path

from rich.table import Table

from .datatype import DistanceResult, ResultRecord
from .errors import (
    DimensionMismatchError,
    ModelError,
    PolynomialParseError,
    ProblemFileError,
    SafetyDistanceError,
    SizeGuardError,
    SolverError,
)
from .problem_file import ProblemFile, load_problem
from .program import OBJECTIVE_KINDS, ObjectiveSpec, ProblemSpec, safety_margin
from .runner import RunOptions, build_program, certificate_document, run_degree, sweep
from .sim import (
    SamplingOptions,
    distance_grid,
    safety_grid,
    sample_trajectories,
    sample_upper_bound,
    write_grid_csv,
    write_trajectories_csv,
)
from .solver import SOLVERS, get_solver, to_standard_form
from .solver.sparse_format import write_conic
from .sparsity import SPARSE_MODES
from .utils import STDERR, setup_logging

LOGGER = logging.getLogger(__name__)

EXIT_CODES = (
    ((PolynomialParseError, ProblemFileError, ModelError, DimensionMismatchError), 2),
    ((SolverError,), 3),
    ((SizeGuardError,), 4),
)

SAFE_TOL = 1e-6


def degree_range(text: str) -> range:
    """'A..B' (inclusive) or a single degree."""
    first, sep, last = text.partition("..")
    try:
        a, b = int(first), int(last) if sep else int(first)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None
    if a < 1 or a > b:
        raise argparse.ArgumentTypeError(f"need 1 <= A <= B, got {text!r}")
    return range(a, b + 1)


def exit_code(exc: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return 1


def emit(document: dict, out: str | None) -> None:
    """JSON to `out` or stdout; sorted keys keep reruns byte-identical."""
    text = json.dumps(document, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
        LOGGER.info("Wrote %s", out)
    else:
        sys.stdout.write(text)


def safety_conclusion(result: DistanceResult) -> str:
    verified = result.certificate is None or result.certificate["skipped"] or result.certificate["passed"]
    if result.status == "optimal" and result.bound is not None and result.bound > SAFE_TOL and verified:
        return f"trajectories certified safe at distance >= {result.bound:.6g}"
    return "no safety conclusion"


def _number(value: float | None) -> str:
    return "-" if value is None else f"{value:.6g}"


def results_table(record: ResultRecord) -> Table:
    table = Table(title=f"{record.problem} ({record.objective})")
    table.add_column("degree", justify="right")
    table.add_column("bound", justify="right")
    table.add_column("raw", justify="right")
    table.add_column("status")
    table.add_column("time [s]", justify="right")
    for row in record.rows():
        if row.error is not None:
            table.add_row(str(row.degree), "-", "-", f"failed: {row.error}", "-")
            continue
        table.add_row(
            str(row.degree),
            _number(row.bound),
            _number(row.raw_bound),
            row.status,
            f"{row.solve_time:.2f}",
        )
    return table


def _problem(args) -> tuple[ProblemSpec, ProblemFile]:
    problem_file = load_problem(args.problem)
    spec = problem_file.spec
    objective = getattr(args, "objective", None)
    if objective is not None:
        spec = replace(spec, objective=ObjectiveSpec(objective))
    return spec, problem_file


def _run_options(args, problem_file: ProblemFile, **extra) -> RunOptions:
    options = RunOptions.from_problem_options(
        problem_file.options,
        sparse=getattr(args, "sparse", None),
        solver=getattr(args, "solver", None),
        **extra,
    )
    guard = getattr(args, "size_guard", None)
    if guard is not None:
        options = replace(options, solver_options=options.solver_options.updated(size_guard=guard))
    return options


def _degree(args, problem_file: ProblemFile) -> int:
    return args.degree if args.degree is not None else problem_file.options.degree


def cmd_solve(args) -> int:
    spec, problem_file = _problem(args)
    options = _run_options(args, problem_file, certify=not args.no_certify)
    solved = run_degree(spec, _degree(args, problem_file), options)
    record = ResultRecord(problem=spec.name, objective=spec.objective.kind, results=[solved.result])
    STDERR.print(results_table(record))
    STDERR.print(safety_conclusion(solved.result))
    emit(record.to_dict(args.timings), args.out)
    return 0


def cmd_sweep(args) -> int:
    spec, problem_file = _problem(args)
    degrees = args.degrees
    if degrees is None:
        first, last = problem_file.options.degrees or (problem_file.options.degree,) * 2
        degrees = range(first, last + 1)
    record = sweep(spec, degrees, _run_options(args, problem_file), jobs=args.jobs)
    STDERR.print(results_table(record))
    if args.csv:
        with open(args.csv, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["degree", "bound", "raw_bound", "status", "solve_time"])
            for row in record.rows():
                writer.writerow([row.degree, row.bound, row.raw_bound, row.status, row.solve_time])
    emit(record.to_dict(args.timings), args.out)
    return 0


def cmd_sample(args) -> int:
    spec, problem_file = _problem(args)
    n = args.n if args.n is not None else problem_file.options.samples
    seed = args.seed if args.seed is not None else problem_file.options.seed
    samples = sample_trajectories(spec, n, seed, jobs=args.jobs)
    upper, witness = sample_upper_bound(spec, n, seed, samples=samples)
    record = ResultRecord(
        problem=spec.name,
        objective=spec.objective.kind,
        upper_bound=upper,
        witness=witness,
        empirical=spec.uncertainty is not None,
    )
    if args.trajectories:
        write_trajectories_csv(samples, args.trajectories, spec.states)
    label = "empirical distance" if record.empirical else "sampled upper bound"
    STDERR.print(f"{label}: {upper:.6g} at t={witness.time:.4g}")
    emit(record.to_dict(), args.out)
    return 0


def cmd_certify(args) -> int:
    spec, problem_file = _problem(args)
    options = _run_options(args, problem_file, certify=True, certificate_samples=args.samples)
    solved = run_degree(spec, _degree(args, problem_file), options)
    if not solved.solution.optimal:
        raise SolverError(f"certificate needs an optimal solve, status is {solved.solution.status}")
    document = certificate_document(solved)
    document["problem"] = spec.name
    document["conclusion"] = safety_conclusion(solved.result)
    for name, check in solved.report.conditions.items():
        STDERR.print(f"{name}: worst {check.worst:.3e} ({'pass' if check.passed else 'FAIL'})")
    if solved.report.skipped:
        STDERR.print(f"verification skipped: {solved.report.skipped}")
    STDERR.print(document["conclusion"])
    emit(document, args.out)
    return 0


def _result_atoms(document: dict) -> tuple[float | None, dict]:
    """Bound and atoms of the highest degree in a solve/sweep result file."""
    results = document.get("results") or ([document] if "degree" in document else [])
    if not results:
        return None, {}
    last = max(results, key=lambda r: r["degree"])
    return last.get("bound"), last.get("atoms") or {}


def cmd_export_plot(args) -> int:
    spec, problem_file = _problem(args)
    try:
        document = json.loads(Path(args.result).read_text())
    except OSError as exc:
        raise ProblemFileError(str(args.result), exc.strerror or str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{args.result} line {exc.lineno} column {exc.colno}", exc.msg) from exc
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = spec.coordinates[:2]

    options = SamplingOptions()
    xs, ys, values = distance_grid(spec, args.resolution, options)
    write_grid_csv(out_dir / "distance_grid.csv", xs, ys, values, names, "distance")
    xs, ys, values = safety_grid(spec, args.resolution)
    write_grid_csv(out_dir / "safety_grid.csv", xs, ys, values, names, "margin")

    n = args.n if args.n is not None else problem_file.options.samples
    if n > 0:
        samples = sample_trajectories(spec, n, problem_file.options.seed, options=options, jobs=args.jobs)
        write_trajectories_csv(samples, out_dir / "trajectories.csv", spec.states)

    bound, atoms = _result_atoms(document)
    with open(out_dir / "atoms.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["atom", "index", "value"])
        for name, point in sorted(atoms.items()):
            for i, value in enumerate(point):
                writer.writerow([name, i, repr(float(value))])
    emit({"out_dir": str(out_dir), "contour_level": bound, "trajectories": n}, None)
    return 0


def cmd_margin(args) -> int:
    spec, problem_file = _problem(args)
    options = _run_options(args, problem_file)
    solver = get_solver(options.solver, options.solver_options)
    result = safety_margin(spec, _degree(args, problem_file), solver)
    document = asdict(result)
    document["problem"] = spec.name
    document["conclusion"] = (
        f"trajectories certified safe with margin {result.margin:.6g}"
        if result.safe
        else "no safety conclusion"
    )
    STDERR.print(document["conclusion"])
    emit(document, args.out)
    return 0


def cmd_export_sdp(args) -> int:
    spec, problem_file = _problem(args)
    program, _ = build_program(spec, _degree(args, problem_file), _run_options(args, problem_file))
    write_conic(to_standard_form(program), args.out)
    LOGGER.info("Wrote %s", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description=(
            "Certified lower bounds on the distance between trajectories of polynomial "
            "dynamical systems and an unsafe set, with sampled upper bounds, dual "
            "certificates and plot data."
        )
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Enable verbose logging",
    )
    parser.add_argument(
        "--log-file",
        help="Path to log file",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help, solve=True, degree=True):
        sub = subparsers.add_parser(name, help=help)
        sub.set_defaults(func=func)
        sub.add_argument("--problem", required=True, help="Problem file (JSON)")
        if degree:
            sub.add_argument("--degree", type=int, help="Relaxation degree")
        if solve:
            sub.add_argument("--sparse", choices=SPARSE_MODES, help="Correlative sparsity mode")
            sub.add_argument("--solver", help=f"Solver: {', '.join(SOLVERS)} or cvxpy:BACKEND")
            sub.add_argument("--size-guard", type=int, help="Largest PSD block the solver accepts")
        return sub

    sub = command("solve", cmd_solve, "Solve one relaxation degree")
    sub.add_argument("--objective", choices=[k for k in OBJECTIVE_KINDS if k != "polynomial"])
    sub.add_argument("--no-certify", action="store_true", help="Skip certificate verification")
    sub.add_argument("--timings", action="store_true", help="Include solve times in the JSON")
    sub.add_argument("--out", help="Write the JSON result here instead of stdout")

    sub = command("sweep", cmd_sweep, "Solve a range of relaxation degrees", degree=False)
    sub.add_argument("--degrees", type=degree_range, help="Degree range A..B")
    sub.add_argument("--objective", choices=[k for k in OBJECTIVE_KINDS if k != "polynomial"])
    sub.add_argument("--jobs", type=int, default=1, help="Degrees solved concurrently")
    sub.add_argument("--csv", help="Write degree, bound and time rows here")
    sub.add_argument("--timings", action="store_true", help="Include solve times in the JSON")
    sub.add_argument("--out", help="Write the JSON result here instead of stdout")

    sub = command("sample", cmd_sample, "Sampled upper bound from simulated trajectories", solve=False, degree=False)
    sub.add_argument("--n", type=int, help="Number of trajectories")
    sub.add_argument("--seed", type=int, help="Random seed")
    sub.add_argument("--jobs", type=int, default=1, help="Trajectories simulated concurrently")
    sub.add_argument("--trajectories", help="Write the sampled trajectories as CSV here")
    sub.add_argument("--out", help="Write the JSON record here instead of stdout")

    sub = command("certify", cmd_certify, "Extract and verify the dual certificate")
    sub.add_argument("--samples", type=int, default=10_000, help="Sample points per condition")
    sub.add_argument("--out", help="Write the certificate JSON here instead of stdout")

    sub = command("export-plot", cmd_export_plot, "Write grid, trajectory and atom CSVs", solve=False, degree=False)
    sub.add_argument("--result", required=True, help="Result JSON from solve or sweep")
    sub.add_argument("--out-dir", default=".", help="Directory for the CSV files")
    sub.add_argument("--resolution", type=int, default=101, help="Grid nodes per axis")
    sub.add_argument("--n", type=int, help="Number of trajectories (0 for grids only)")
    sub.add_argument("--jobs", type=int, default=1, help="Trajectories simulated concurrently")

    sub = command("margin", cmd_margin, "Safety margin through peak programs")
    sub.add_argument("--out", help="Write the JSON result here instead of stdout")

    sub = command("export-sdp", cmd_export_sdp, "Write the conic program in sparse text format")
    sub.add_argument("--out", required=True, help="Output file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.log_file)

    try:
        return args.func(args)
    except SafetyDistanceError as exc:
        LOGGER.error("%s", exc)
        return exit_code(exc)
    except Exception as exc:
        LOGGER.error("Unexpected error: %s", exc, exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
