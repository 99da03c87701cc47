import io

import numpy as np
import pytest
import scipy.sparse as sp

from safety_distance.errors import SizeGuardError
from safety_distance.solver import (
    ConeBlock,
    ConicProgram,
    SolverOptions,
    Status,
    get_solver,
)
from safety_distance.solver.conic import NONNEGATIVE, PSD, check_size_guard
from safety_distance.solver.interior_point import independent_rows
from safety_distance.solver.sparse_format import dumps_conic, loads_conic, read_conic, write_conic


def correlation_program() -> ConicProgram:
    """min y s.t. [[1, y], [y, 1]] >= 0, optimum -1."""
    phi = sp.csr_matrix(np.array([[0.0], [1.0], [1.0], [0.0]]))
    cone = ConeBlock(PSD, 2, phi, np.array([1.0, 0.0, 0.0, 1.0]), "corr")
    return ConicProgram(
        c=np.array([1.0]),
        eq_matrix=sp.csr_matrix((0, 1)),
        eq_rhs=np.zeros(0),
        cones=(cone,),
    )


def mixed_program() -> ConicProgram:
    """min y1 + 2 y2 + 1 s.t. y1 - y2 = 0 (twice), y >= 1, [[y1, 1], [1, y2]] >= 0."""
    eq = sp.csr_matrix(np.array([[1.0, -1.0], [2.0, -2.0]]))
    psd = ConeBlock(
        PSD,
        2,
        sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0]])),
        np.array([0.0, 1.0, 1.0, 0.0]),
        "psd",
    )
    lin = ConeBlock(NONNEGATIVE, 2, sp.identity(2, format="csr"), -np.ones(2), "inequalities")
    return ConicProgram(
        c=np.array([1.0, 2.0]),
        eq_matrix=eq,
        eq_rhs=np.zeros(2),
        cones=(psd, lin),
        offset=1.0,
    )


def test_correlation_sdp():
    solution = get_solver().solve(correlation_program())
    assert solution.status == Status.OPTIMAL
    assert solution.primal_objective == pytest.approx(-1.0, abs=1e-6)
    assert solution.dual_objective == pytest.approx(-1.0, abs=1e-6)
    assert solution.gap <= 1e-6
    dual = solution.cone_duals[0]
    assert np.linalg.eigvalsh(dual)[0] >= -1e-8


def test_mixed_cones_with_redundant_equalities():
    solution = get_solver().solve(mixed_program())
    assert solution.optimal
    np.testing.assert_allclose(solution.y, [1.0, 1.0], atol=1e-5)
    assert solution.primal_objective == pytest.approx(4.0, abs=1e-5)
    assert solution.eq_duals.shape == (2,)


def lp(c, phi, h) -> ConicProgram:
    """min c'y over the orthant rows phi y + h >= 0, no equalities."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    cone = ConeBlock(NONNEGATIVE, phi.shape[0], sp.csr_matrix(phi), np.asarray(h, dtype=float))
    return ConicProgram(
        c=np.asarray(c, dtype=float),
        eq_matrix=sp.csr_matrix((0, phi.shape[1])),
        eq_rhs=np.zeros(0),
        cones=(cone,),
    )


def test_scalar_moment_block():
    cone = ConeBlock(PSD, 1, sp.csr_matrix([[1.0]]), np.zeros(1), "m0")
    program = ConicProgram(
        c=np.array([1.0]),
        eq_matrix=sp.csr_matrix([[1.0]]),
        eq_rhs=np.array([1.0]),
        cones=(cone,),
    )
    solution = get_solver().solve(program)
    assert solution.optimal
    assert solution.primal_objective == pytest.approx(1.0, abs=1e-6)
    assert solution.gap <= 1e-6


def test_trace_with_unit_diagonal():
    # y = (a, b, c) fills [[a, b], [b, c]]
    phi = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0], [0, 0, 1.0]]))
    program = ConicProgram(
        c=np.array([1.0, 0.0, 1.0]),
        eq_matrix=sp.csr_matrix(np.array([[1.0, 0, 0], [0, 0, 1.0]])),
        eq_rhs=np.ones(2),
        cones=(ConeBlock(PSD, 2, phi, np.zeros(4), "trace"),),
    )
    solution = get_solver().solve(program)
    assert solution.optimal
    assert solution.primal_objective == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(solution.y, [1.0, 0.0, 1.0], atol=1e-5)
    assert np.linalg.eigvalsh(solution.cone_duals[0])[0] >= -1e-8


def test_contradictory_bounds_are_infeasible():
    # y >= 0 and -y - 1 >= 0
    solution = get_solver().solve(lp([1.0], [[1.0], [-1.0]], [0.0, -1.0]))
    assert solution.status == Status.INFEASIBLE
    assert solution.gap is None


def test_improving_ray_is_unbounded():
    # min -y over y >= 0
    solution = get_solver().solve(lp([-1.0], [[1.0]], [0.0]))
    assert solution.status == Status.UNBOUNDED
    assert solution.y[0] > 0
    assert solution.gap is None


def test_independent_rows_drops_duplicates():
    matrix = np.array([[1.0, -1.0], [2.0, -2.0], [0.0, 1.0]])
    assert len(independent_rows(matrix)) == 2


def test_inconsistent_equalities_are_infeasible():
    program = mixed_program()
    program = ConicProgram(
        c=program.c,
        eq_matrix=program.eq_matrix,
        eq_rhs=np.array([0.0, 1.0]),
        cones=program.cones,
    )
    assert get_solver().solve(program).status == Status.INFEASIBLE


def test_size_guard():
    solver = get_solver(options=SolverOptions(size_guard=1))
    with pytest.raises(SizeGuardError):
        solver.solve(correlation_program())
    check_size_guard((3, 2), 3)


def test_solver_options_validation(monkeypatch):
    with pytest.raises(TypeError):
        SolverOptions(max_iters=1.5)
    with pytest.raises(ValueError):
        SolverOptions(step=1.0)
    monkeypatch.setenv("SD_SOLVER_TOL", "1e-6")
    monkeypatch.setenv("SD_SIZE_GUARD", "50")
    options = SolverOptions.from_env(max_iters=20, gap_tol=None)
    assert options.gap_tol == options.feas_tol == 1e-6
    assert options.size_guard == 50
    assert options.max_iters == 20
    assert options.updated(step=0.9, size_guard=None).step == 0.9


def test_unknown_solver():
    with pytest.raises(ValueError):
        get_solver("simplex")


def test_sparse_format_reproduces_program(tmp_path):
    program = mixed_program()
    path = tmp_path / "mixed.conic"
    write_conic(program, path)
    again = read_conic(path)
    assert dumps_conic(again) == path.read_text()
    np.testing.assert_array_equal(again.c, program.c)
    assert (again.eq_matrix != program.eq_matrix).nnz == 0
    for a, b in zip(again.cones, program.cones):
        assert a.kind == b.kind and a.size == b.size
        np.testing.assert_array_equal(a.phi.toarray(), b.phi.toarray())
        np.testing.assert_array_equal(a.const, b.const)
    assert again.offset == 1.0


def test_sparse_format_writes_plain_numbers():
    lines = dumps_conic(mixed_program()).splitlines()
    c_at, h_at = lines.index("c 2"), lines.index("h 2")
    assert lines[c_at + 1 : c_at + 3] == ["1 1.0", "2 2.0"]
    assert lines[h_at + 1 : h_at + 3] == ["1 -1.0", "2 -1.0"]
    for line in lines:
        fields = line.split()
        if fields[0][0].isdigit():
            [float(field) for field in fields]


def test_sparse_format_solves_identically():
    buffer = io.StringIO()
    write_conic(correlation_program(), buffer)
    again = loads_conic(buffer.getvalue())
    assert get_solver().solve(again).primal_objective == pytest.approx(-1.0, abs=1e-6)


def test_sparse_format_rejects_bad_header():
    from safety_distance.errors import ProblemFileError

    with pytest.raises(ProblemFileError):
        loads_conic("CONIC 2\n")


def test_cvxpy_backend_agrees():
    pytest.importorskip("cvxpy")
    solution = get_solver("cvxpy").solve(mixed_program())
    assert solution.primal_objective == pytest.approx(4.0, abs=1e-4)
