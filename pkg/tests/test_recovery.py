from dataclasses import replace

import numpy as np
import pytest

from safety_distance.moments import atomic_moments
from safety_distance.poly import Polynomial
from safety_distance.problem_file import load_problem
from safety_distance.program import build_distance_program
from safety_distance.recovery import (
    Certificate,
    certificate_to_json,
    extract_atoms,
    moment_corner,
    rank_one_check,
    verify_certificate,
)
from safety_distance.scaling import AffineMap

X0 = [1.489, -0.3998]
XP = [0.0, -0.2997]
Y = [-0.2002, -0.4998]
PEAK_TIME = 3.09


def test_moment_corner_in_original_units():
    seq = atomic_moments(("a", "b"), 2, [[0.5, -0.25]])
    transform = AffineMap(("a", "b"), (1.0, 2.0), (2.0, 4.0))
    z = np.array([1.0, 2.0, 1.0])
    np.testing.assert_allclose(moment_corner(seq, transform), np.outer(z, z), atol=1e-12)


def test_rank_one_check():
    ratio, ok = rank_one_check(atomic_moments(("a", "b"), 2, [[0.3, 0.1]]))
    assert ok and ratio < 1e-12
    spread = atomic_moments(("a", "b"), 2, [[0.5, 0.5], [-0.5, -0.2]], [0.5, 0.5])
    ratio, ok = rank_one_check(spread)
    assert not ok and ratio > 1e-2
    with pytest.raises(ValueError):
        rank_one_check(replace(spread, values=None))


def _dirac_solution(program, points):
    values = [
        atomic_moments(seq.variables, seq.degree, [points[name]]).values
        for name, seq in program.sequences.items()
    ]
    return program.with_solution(np.concatenate(values))


def test_extract_atoms_from_dirac_moments(flow):
    program = build_distance_program(flow, 1)
    scaled = {
        "mu0": np.divide(X0, 3.0),
        "mup": np.r_[PEAK_TIME / flow.horizon, np.divide(XP, 3.0)],
        "mu": np.r_[0.5, np.divide(X0, 3.0)],
        "eta": np.r_[np.divide(XP, 3.0), np.divide(Y, 3.0)],
    }
    report = extract_atoms(_dirac_solution(program, scaled))
    assert report.passed
    np.testing.assert_allclose(report.atoms["x0"], X0, atol=1e-9)
    np.testing.assert_allclose(report.atoms["xp"], XP, atol=1e-9)
    np.testing.assert_allclose(report.atoms["x"], XP, atol=1e-9)
    np.testing.assert_allclose(report.atoms["y"], Y, atol=1e-9)
    assert report.peak_time == pytest.approx(PEAK_TIME)
    assert report.residual == pytest.approx(0.0, abs=1e-9)
    assert set(report.ratios) == {"mu0", "mup", "eta"}


def test_extract_atoms_refuses_spread_measures(flow):
    program = build_distance_program(flow, 1)
    solved = _dirac_solution(
        program,
        {
            "mu0": [0.5, 0.0],
            "mup": [0.5, 0.0, -0.1],
            "mu": [0.5, 0.5, 0.0],
            "eta": [0.0, -0.1, -0.07, -0.17],
        },
    )
    mixed = atomic_moments(("x1", "x2"), 2, [[0.5, 0.0], [-0.5, 0.3]], [0.5, 0.5])
    sequences = dict(solved.sequences, mu0=replace(solved.sequences["mu0"], values=mixed.values))
    report = extract_atoms(replace(solved, sequences=sequences))
    assert not report.passed
    assert report.atoms is None
    assert report.ratios["mu0"] > report.threshold


def test_extract_atoms_needs_a_solution(flow):
    with pytest.raises(ValueError):
        extract_atoms(build_distance_program(flow, 1))


@pytest.fixture
def trivial_certificate(flow):
    return Certificate(
        gamma=0.0,
        w=Polynomial.zero(flow.coordinates),
        v=Polynomial.zero(("t",) + flow.states),
        cost=flow.cost(),
        degree=1,
        bound=0.0,
    )


def test_trivial_certificate_passes(flow, trivial_certificate):
    report = verify_certificate(trivial_certificate, flow, samples=500)
    assert report.passed
    assert set(report.conditions) == {"cost_minus_w", "w_minus_v", "lie_derivative", "initial"}
    assert all(check.samples > 0 for check in report.conditions.values())


def test_shifted_certificate_fails(flow, trivial_certificate):
    shifted = replace(trivial_certificate, w=trivial_certificate.w + 1.0)
    report = verify_certificate(shifted, flow, samples=500)
    assert not report.passed
    assert report.conditions["cost_minus_w"].worst < -0.5
    assert report.conditions["w_minus_v"].passed

    raised = replace(trivial_certificate, gamma=1.0)
    check = verify_certificate(raised, flow, samples=500).conditions["initial"]
    assert check.worst == pytest.approx(-1.0)


def test_verification_skipped_for_thin_sets(problems_dir, trivial_certificate):
    spec = load_problem(problems_dir / "shape_rotate.json").spec
    report = verify_certificate(trivial_certificate, spec, samples=10)
    assert not report.passed
    assert "state" in report.skipped
    assert report.to_dict()["conditions"] == {}


def test_certificate_json(flow, trivial_certificate):
    report = verify_certificate(trivial_certificate, flow, samples=100)
    document = certificate_to_json(trivial_certificate, report)
    assert document["w"] == {"variables": ["x1", "x2"], "terms": []}
    assert document["z"] is None
    assert document["verification"]["passed"]
    assert len(document["cost"]["terms"]) == len(flow.cost().terms)
