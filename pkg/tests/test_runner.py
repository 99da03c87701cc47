import json

import numpy as np
import pytest

from safety_distance.cli import safety_conclusion
from safety_distance.datatype import DistanceResult
from safety_distance.problem_file import ProblemOptions, loads_problem
from safety_distance.runner import RunOptions, check_monotone, run_degree, solve_degree, sweep
from safety_distance.solver import SolverOptions
from safety_distance.solver.conic import PSD

STALLED = RunOptions(sparse="off", solver_options=SolverOptions(max_iters=1))


def result(degree, raw, status="optimal"):
    return DistanceResult(
        problem="p",
        degree=degree,
        tilde_degree=degree,
        objective="l2sq",
        sparse=False,
        status=status,
        raw_bound=raw,
        bound=raw,
        dual_bound=raw,
        gap=0.0 if raw is not None else None,
        iterations=1,
        solve_time=0.0,
    )


def test_unfinished_solve_reports_no_bound(decay):
    solved = run_degree(decay, 1, STALLED)
    assert solved.result.status == "max-iter"
    assert solved.result.bound is None
    assert solved.result.raw_bound is None
    assert solved.result.dual_bound is None
    assert solved.result.gap is None
    assert solved.extraction is None
    assert safety_conclusion(solved.result) == "no safety conclusion"


def test_sweep_keeps_unfinished_degrees_out_of_the_bounds(decay):
    record = sweep(decay, range(1, 3), STALLED)
    assert [r.degree for r in record.results] == [1, 2]
    assert all(r.bound is None for r in record.results)
    assert record.monotone
    assert [row.bound for row in record.rows()] == [None, None]


def test_monotonicity_skips_degrees_without_bound():
    assert check_monotone([result(1, 0.1), result(2, None, "max-iter"), result(3, 0.2)]) == []
    [warning] = check_monotone([result(1, 0.1), result(2, None, "max-iter"), result(3, 0.05)])
    assert "degree 1" in warning and "degree 3" in warning


def test_monotonicity_tolerance():
    assert check_monotone([result(1, 0.1), result(2, 0.1 - 1e-9)]) == []
    assert len(check_monotone([result(2, 0.1), result(1, 0.2)])) == 1


def test_options_from_problem_file(monkeypatch):
    monkeypatch.delenv("SD_SOLVER_TOL", raising=False)
    monkeypatch.setenv("SD_SIZE_GUARD", "300")
    file_options = ProblemOptions(sparse="on", tolerance=1e-7, seed=4)
    options = RunOptions.from_problem_options(file_options, sparse="off", solver=None)
    assert options.sparse == "off"
    assert options.solver == "interior-point"
    assert options.seed == 4
    assert options.solver_options.gap_tol == pytest.approx(1e-7)
    assert options.solver_options.size_guard == 300


def test_moment_program_duals_are_positive_semidefinite(decay):
    solved = run_degree(decay, 2, RunOptions(sparse="off"))
    assert solved.solution.optimal
    blocks = [
        dual
        for cone, dual in zip(solved.conic.cones, solved.solution.cone_duals)
        if cone.kind == PSD
    ]
    assert blocks
    for dual in blocks:
        assert np.linalg.eigvalsh(dual)[0] >= -1e-8


def test_zero_uncertainty_matches_the_plain_bound(decay, decay_data):
    data = dict(decay_data, dynamics=["-x + h"])
    data["uncertainty"] = {"variables": ["h"], "set": {"box": [[0, 0]]}}
    uncertain = loads_problem(json.dumps(data)).spec
    options = RunOptions(sparse="off")
    plain = solve_degree(decay, 2, options)
    robust = solve_degree(uncertain, 2, options)
    assert plain.status == robust.status == "optimal"
    assert robust.bound == pytest.approx(plain.bound, abs=1e-3)


def test_point_body_matches_the_plain_bound(decay, decay_data):
    data = dict(decay_data)
    data["sets"] = dict(decay_data["sets"], unsafe={"inequalities": ["-z - 0.5"], "box": [[-1, 1]]})
    data["shape"] = {
        "body_variables": ["s"],
        "body": {"box": [[0, 0]]},
        "coordinates": ["z"],
        "space": {"box": [[-1, 1]]},
        "transform": ["x + s"],
    }
    shape = loads_problem(json.dumps(data)).spec
    options = RunOptions(sparse="off")
    plain = solve_degree(decay, 2, options)
    moved = solve_degree(shape, 2, options)
    assert plain.status == moved.status == "optimal"
    assert moved.bound == pytest.approx(plain.bound, abs=1e-3)
