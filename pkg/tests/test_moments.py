import numpy as np
import pytest
from hypothesis import given, strategies as st

from safety_distance.errors import DimensionMismatchError, ModelError
from safety_distance.moments import (
    AffineRow,
    MomentSequence,
    atomic_moments,
    equality_rows,
    expectation_terms,
    instantiate,
    localizing_matrix_spec,
    measure_block,
    moment_matrix_spec,
)
from safety_distance.poly import parse_polynomial
from safety_distance.sets import make_set

XY = ("x1", "x2")

atoms = st.lists(
    st.tuples(st.floats(-1, 1, allow_nan=False), st.floats(-1, 1, allow_nan=False)),
    min_size=1,
    max_size=6,
)


def test_halfcircle_block_sizes():
    halfcircle = make_set(
        XY, ["0.25 - x1^2 - (x2 + 0.7)^2", "-0.7071067811865476*(x1 + x2 + 0.7)"]
    )
    seq = MomentSequence("eta", XY, 4)
    blocks, rows = measure_block(seq, halfcircle, 2)
    assert [b.size for b in blocks] == [6, 3, 3]
    assert rows == []


def test_moment_matrix_of_dirac_is_rank_one():
    seq = atomic_moments(XY, 4, [(0.5, -0.25)])
    matrix = instantiate(moment_matrix_spec(seq, 2))
    eigenvalues = np.linalg.eigvalsh(matrix)
    assert eigenvalues[-2] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(seq.first_moments(), [0.5, -0.25])


@given(atoms)
def test_empirical_moment_matrix_is_psd(points):
    seq = atomic_moments(XY, 4, points)
    matrix = instantiate(moment_matrix_spec(seq, 2))
    assert np.allclose(matrix, matrix.T)
    assert np.linalg.eigvalsh(matrix)[0] >= -1e-9 * max(1.0, np.abs(matrix).max())


@given(atoms)
def test_localizing_matrix_psd_on_support(points):
    g = parse_polynomial("2 - x1^2 - x2^2", XY)
    seq = atomic_moments(XY, 4, points)
    matrix = instantiate(localizing_matrix_spec(seq, g, 2))
    assert matrix.shape == (3, 3)
    assert np.linalg.eigvalsh(matrix)[0] >= -1e-9 * max(1.0, np.abs(matrix).max())


def test_localizer_order_and_errors():
    seq = MomentSequence("m", XY, 4)
    cubic = parse_polynomial("x1^3", XY)
    assert localizing_matrix_spec(seq, cubic, 2).order == 0
    with pytest.raises(ModelError):
        localizing_matrix_spec(seq, parse_polynomial("x1^5", XY), 2)
    with pytest.raises(ModelError):
        moment_matrix_spec(seq, 3)


def test_expectation_terms_and_evaluation():
    seq = atomic_moments(XY, 2, [(1.0, 2.0), (-1.0, 0.0)], weights=[0.5, 0.5])
    p = parse_polynomial("x1^2 + 3*x2", XY)
    row = AffineRow(tuple(expectation_terms(p, seq)), 4.0)
    assert seq.expectation(p) == pytest.approx(1.0 + 3.0)
    assert row.evaluate({seq.name: seq}) == pytest.approx(0.0)
    with pytest.raises(ModelError):
        expectation_terms(parse_polynomial("x1^3", XY), seq)


def test_equality_rows_vanish_on_circle():
    g = parse_polynomial("x1^2 + x2^2 - 1", XY)
    angles = np.linspace(0, 2 * np.pi, 7)
    seq = atomic_moments(XY, 4, np.c_[np.cos(angles), np.sin(angles)])
    rows = equality_rows(seq, g, "circle")
    assert len(rows) == 6
    assert all(abs(row.evaluate({seq.name: seq})) < 1e-12 for row in rows)


def test_sequence_validation():
    with pytest.raises(DimensionMismatchError):
        MomentSequence("m", XY, 2, values=np.zeros(3))
    seq = MomentSequence("m", XY, 2)
    with pytest.raises(ModelError):
        seq.position((2, 1))
    with pytest.raises(ValueError):
        seq.value((0, 0))


def test_measure_block_support_mismatch():
    with pytest.raises(DimensionMismatchError):
        measure_block(MomentSequence("m", XY, 2), make_set(("x1",), []), 1)
