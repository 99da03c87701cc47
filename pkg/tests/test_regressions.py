"""
Published distance bounds for the bundled problems. Each test solves full
relaxations with the built-in solver, so the module is marked slow; the
largest ones are also marked extended and deselected by default.
"""

from dataclasses import replace

import numpy as np
import pytest

from safety_distance.problem_file import load_problem
from safety_distance.program import ObjectiveSpec, safety_margin
from safety_distance.runner import RunOptions, check_monotone, run_degree, solve_degree, sweep
from safety_distance.sets import make_set
from safety_distance.sim import sample_trajectories, sample_upper_bound

pytestmark = pytest.mark.slow

GAP_TOL = 1e-6
DENSE = RunOptions(sparse="off")
SPARSE = RunOptions(sparse="on")


def load(problems_dir, name):
    return load_problem(problems_dir / f"{name}.json").spec


def assert_optimal(result):
    assert result.status == "optimal", result.status
    assert result.gap <= GAP_TOL


def bounds(problem, degrees, options=DENSE):
    record = sweep(problem, degrees, options)
    assert not record.failures
    assert record.monotone, record.warnings
    for result in record.results:
        assert_optimal(result)
    return [r.bound for r in sorted(record.results, key=lambda r: r.degree)]


@pytest.mark.parametrize("d", [4, 5])
def test_flow_half_circle(flow, d):
    result = solve_degree(flow, d, DENSE)
    assert_optimal(result)
    assert result.bound == pytest.approx(0.2831, abs=0.01)


def test_flow_masses_and_atoms(flow):
    solved = run_degree(flow, 4, DENSE)
    program = solved.program.with_solution(solved.solution.y)
    for name in ("mu0", "mup", "eta"):
        assert program.sequences[name].mass == pytest.approx(1.0, abs=1e-6)
    extraction = solved.extraction
    assert extraction.passed
    assert all(ratio < 1e-3 for ratio in extraction.ratios.values())
    np.testing.assert_allclose(extraction.atoms["x0"], [1.489, -0.3998], atol=0.05)
    np.testing.assert_allclose(extraction.atoms["xp"], [0.0, -0.2997], atol=0.05)
    np.testing.assert_allclose(extraction.atoms["y"], [-0.2002, -0.4998], atol=0.05)
    assert extraction.peak_time / flow.horizon == pytest.approx(0.6180, abs=0.05)


def test_flow_certificate(flow):
    solved = run_degree(flow, 5, replace(DENSE, certify=True))
    assert solved.solution.optimal
    assert solved.report.passed, solved.report.to_dict()
    assert solved.certificate.gamma == pytest.approx(solved.certificate.bound, abs=1e-4)


def test_flow_sandwich(flow):
    upper, _ = sample_upper_bound(flow, 500, seed=0)
    assert 0.2831 - 1e-3 <= upper <= 0.30
    lower = solve_degree(flow, 4, DENSE).bound
    assert lower <= upper + 1e-3


def test_flow_moon(problems_dir):
    values = bounds(load(problems_dir, "flow_moon"), range(1, 6))
    assert values[0] <= 1e-3 and values[1] <= 1e-3
    np.testing.assert_allclose(values[2:], [0.1501, 0.1592, 0.1592], atol=0.01)


def test_safety_margin(flow):
    result = safety_margin(flow, 4)
    assert result.margin <= -0.27
    assert result.margin == pytest.approx(-0.2831, abs=0.01)
    assert result.safe


def test_twist_sparse(problems_dir):
    twist = load(problems_dir, "twist")
    values = bounds(twist, range(2, 5), SPARSE)
    np.testing.assert_allclose(values, [0.0, 0.0311, 0.0424], atol=5e-3)
    dense = solve_degree(twist, 3, DENSE).bound
    assert dense == pytest.approx(values[1], abs=5e-3)


@pytest.mark.parametrize("d, expected", [(4, 0.1688), (5, 0.1691)])
def test_uncertain_flow(problems_dir, d, expected):
    result = solve_degree(load(problems_dir, "flow_uncertain"), d, DENSE)
    assert_optimal(result)
    assert result.bound == pytest.approx(expected, abs=0.01)


def test_l1_lift(problems_dir):
    result = solve_degree(load(problems_dir, "flow_l1"), 4, DENSE)
    assert_optimal(result)
    assert result.bound == pytest.approx(0.4003, abs=0.01)
    np.testing.assert_allclose(result.atoms["y"], [-0.1777, -0.5223], atol=0.05)


def test_objective_override_matches_l1_file(flow, problems_dir):
    overridden = solve_degree(replace(flow, objective=ObjectiveSpec("l1")), 4, DENSE)
    from_file = solve_degree(load(problems_dir, "flow_l1"), 4, DENSE)
    assert overridden.bound == pytest.approx(from_file.bound, abs=1e-6)


def test_shape_translation(problems_dir):
    result = solve_degree(load(problems_dir, "shape_translate"), 4, DENSE)
    assert_optimal(result)
    assert result.bound == pytest.approx(0.1465, abs=0.01)


def test_sweeps_are_monotone(flow):
    record = sweep(flow, range(1, 4), DENSE, jobs=2)
    assert check_monotone(record.results) == []


@pytest.mark.extended
def test_shape_rotation(problems_dir):
    options = replace(DENSE, solver_options=DENSE.solver_options.updated(size_guard=1000))
    result = solve_degree(load(problems_dir, "shape_rotate"), 3, options)
    assert_optimal(result)
    assert result.bound == pytest.approx(0.14255, abs=0.01)


@pytest.mark.extended
def test_twist_l4(problems_dir):
    values = bounds(load(problems_dir, "twist_l4"), range(2, 6), SPARSE)
    np.testing.assert_allclose(values, [0.0, 0.0298, 0.0408, 0.0413], atol=5e-3)


@pytest.mark.parametrize(
    "name, degrees, options",
    [
        ("flow_halfcircle", range(1, 5), DENSE),
        ("flow_moon", range(1, 5), DENSE),
        ("flow_l1", range(1, 5), DENSE),
        ("flow_uncertain", range(1, 5), DENSE),
        ("shape_translate", range(1, 5), DENSE),
        ("twist", range(2, 5), SPARSE),
        pytest.param("twist_l4", range(2, 5), SPARSE, marks=pytest.mark.extended),
    ],
)
def test_bounds_rise_and_stay_below_simulation(problems_dir, name, degrees, options):
    problem = load(problems_dir, name)
    values = bounds(problem, degrees, options)
    if problem.uncertainty is None:
        upper, _ = sample_upper_bound(problem, 500, seed=0)
        assert max(values) <= upper + 1e-3


def test_rescaled_unsafe_constraint_keeps_the_bound(flow):
    first, *rest = flow.unsafe.inequalities
    unsafe = make_set(flow.unsafe.variables, [first * 3.0, *rest], flow.unsafe.equalities)
    rescaled = replace(flow, unsafe=unsafe)
    plain, scaled = solve_degree(flow, 3, DENSE), solve_degree(rescaled, 3, DENSE)
    assert_optimal(scaled)
    assert scaled.bound == pytest.approx(plain.bound, abs=1e-5)


def test_sparse_matches_dense_in_the_plane(flow):
    dense, sparse = solve_degree(flow, 4, DENSE), solve_degree(flow, 4, SPARSE)
    assert sparse.sparse and not dense.sparse
    assert_optimal(sparse)
    assert sparse.bound == pytest.approx(dense.bound, abs=5e-3)


def test_no_sampled_trajectory_enters_a_certified_unsafe_set(flow):
    result = solve_degree(flow, 4, DENSE)
    assert result.bound > 0
    for sample in sample_trajectories(flow, 200, seed=1):
        assert not flow.unsafe.contains_many(sample.states).any()
