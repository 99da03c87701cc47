import math
from dataclasses import replace

import pytest

from safety_distance.errors import ModelError
from safety_distance.problem_file import load_problem
from safety_distance.sets import make_set
from safety_distance.sparsity import (
    CliqueDecomposition,
    build_sparse_distance_program,
    chordal_edge_count,
    csp_cliques,
    use_sparse,
    verify_coverage,
    verify_rip,
)


@pytest.fixture
def twist(problems_dir):
    return load_problem(problems_dir / "twist.json").spec


def test_cliques_for_three_states():
    decomp = csp_cliques(3, 2, 1)
    assert decomp.cliques == (
        ("x1", "x2", "x3", "y1"),
        ("x2", "x3", "y1", "y2"),
        ("x3", "y1", "y2", "y3"),
    )
    assert decomp.constraints == (("X0", "X1"), (), ("Xu0",))
    assert decomp.shared(0) == ("x2", "x3", "y1")
    assert decomp.variables == ("x1", "x2", "x3", "y1", "y2", "y3")


@pytest.mark.parametrize("n", range(2, 9))
def test_rip_and_coverage(n):
    decomp = csp_cliques(n)
    assert len(decomp) == n
    assert all(len(clique) == n + 1 for clique in decomp.cliques)
    assert verify_rip(decomp)
    states = [f"x{i}" for i in range(1, n + 1)]
    unsafe = [f"y{i}" for i in range(1, n + 1)]
    assert verify_coverage(decomp, states + unsafe, list(zip(states, unsafe)))


def test_rip_violation_detected():
    bad = CliqueDecomposition((("a", "b"), ("c", "d"), ("a", "c")), ((), (), ()))
    assert not verify_rip(bad)
    with pytest.raises(ValueError):
        CliqueDecomposition((("a",),), ())


def test_coverage_failures():
    decomp = csp_cliques(3)
    assert not verify_coverage(decomp, ["x1", "z"])
    assert not verify_coverage(decomp, ["x1"], [("x1", "y3")])


def test_chordal_edge_count():
    assert [chordal_edge_count(n) for n in (1, 2, 3, 4)] == [0, 1, 3, 6]


@pytest.mark.parametrize(
    "mode, n, d, expected",
    [
        ("auto", 3, 4, True),
        ("auto", 3, 3, False),
        ("auto", 2, 6, False),
        ("on", 2, 1, True),
        ("off", 5, 6, False),
    ],
)
def test_use_sparse(mode, n, d, expected):
    assert use_sparse(mode, n, d) is expected


def test_use_sparse_rejects_unknown_mode():
    with pytest.raises(ValueError):
        use_sparse("sometimes", 3, 4)
    with pytest.raises(ModelError):
        csp_cliques(1)


def test_sparse_program_structure(twist):
    program = build_sparse_distance_program(twist, 2)
    sizes = program.moment_matrix_sizes()
    assert {sizes[f"eta{i}"] for i in (1, 2, 3)} == {math.comb(4 + 2, 2)}
    assert "eta" not in program.sequences
    tags = [row.tag[0] for row in program.equalities]
    assert tags.count("overlap") == 2 * math.comb(3 + 4, 4)
    assert tags.count("marginal") == math.comb(3 + 4, 4)
    owners = {owner for _, owner, _ in program.objective}
    assert owners == {"eta1", "eta2", "eta3"}
    assert [pair[2] for pair in program.context.pairs] == ["eta1", "eta2", "eta3"]


def test_sparse_program_errors(twist, problems_dir):
    with pytest.raises(ModelError):
        build_sparse_distance_program(twist, 0)
    shape = load_problem(problems_dir / "shape_translate.json").spec
    with pytest.raises(ModelError):
        build_sparse_distance_program(shape, 2)


def test_sparse_program_needs_a_bounded_unsafe_set(twist):
    half_space = replace(twist, unsafe=make_set(twist.states, ["-x3"]))
    with pytest.raises(ModelError):
        build_sparse_distance_program(half_space, 2)
