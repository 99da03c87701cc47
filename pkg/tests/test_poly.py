import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from safety_distance.errors import DimensionMismatchError, PolynomialParseError
from safety_distance.poly import (
    Polynomial,
    ceil_half,
    compile_polynomials,
    lie_derivative,
    monomial_basis,
    parse_polynomial,
)

XY = ("x", "y")

coefficients = st.integers(min_value=-5, max_value=5)
small_polys = st.dictionaries(
    st.tuples(st.integers(0, 3), st.integers(0, 3)), coefficients, max_size=5
).map(lambda terms: Polynomial(XY, terms))
points = st.tuples(
    st.floats(-2, 2, allow_nan=False), st.floats(-2, 2, allow_nan=False)
)


def test_monomial_basis_order():
    assert monomial_basis(2, 2) == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    assert len(monomial_basis(3, 4)) == math.comb(7, 3)


def test_monomial_basis_rejects_bad_arguments():
    with pytest.raises(ValueError):
        monomial_basis(0, 2)


def test_parse_flow_dynamics():
    p = parse_polynomial("-x - y + x^3/3", XY)
    assert p.coefficient((3, 0)) == pytest.approx(1 / 3)
    assert p.coefficient((1, 0)) == -1.0
    assert p.degree == 3
    assert p([3.0, 1.0]) == pytest.approx(-3 - 1 + 9)


def test_parse_accepts_double_star_and_parentheses():
    p = parse_polynomial("(x + 2*y)**2", XY)
    assert p == parse_polynomial("x^2 + 4*x*y + 4*y^2", XY)


@pytest.mark.parametrize(
    "text",
    ["x + z", "x^-1", "x^1.5", "1 / x", "x +", "(x + y", "x $ y", ""],
)
def test_parse_errors(text):
    with pytest.raises(PolynomialParseError):
        parse_polynomial(text, XY)


def test_parse_error_reports_position():
    with pytest.raises(PolynomialParseError) as info:
        parse_polynomial("x + z", XY)
    assert info.value.position == 4


@given(small_polys, small_polys, points)
def test_arithmetic_matches_evaluation(p, q, point):
    assert (p + q)(point) == pytest.approx(p(point) + q(point), abs=1e-6)
    assert (p * q)(point) == pytest.approx(p(point) * q(point), rel=1e-9, abs=1e-6)
    assert (p - p).is_zero


@given(small_polys)
def test_text_form_parses_back(p):
    assert parse_polynomial(p.to_string(), XY) == p


def test_embed_and_substitute():
    p = parse_polynomial("x*y + 1", XY)
    wide = p.embed(("t", "x", "y"))
    assert wide.variables == ("t", "x", "y")
    assert wide.coefficient((0, 1, 1)) == 1.0
    shifted = p.substitute({"x": parse_polynomial("2*x + 1", XY)}, XY)
    assert shifted == parse_polynomial("2*x*y + y + 1", XY)
    with pytest.raises(DimensionMismatchError):
        p.embed(("x",))


def test_derivative():
    p = parse_polynomial("x^3*y + 2*y", XY)
    assert p.derivative("x") == parse_polynomial("3*x^2*y", XY)
    assert p.derivative("t").is_zero


def test_lie_derivative_of_energy():
    variables = ("t", "x", "y")
    v = parse_polynomial("x^2 + y^2", variables)
    f = [parse_polynomial("y", variables), parse_polynomial("-x", variables)]
    assert lie_derivative(v, f, ("x", "y")).is_zero
    v = parse_polynomial("t*x", variables)
    assert lie_derivative(v, f, ("x", "y")) == parse_polynomial("x + t*y", variables)


def test_lie_derivative_dimension_check():
    v = parse_polynomial("x", XY)
    with pytest.raises(DimensionMismatchError):
        lie_derivative(v, [v], XY, time=None)


def test_compile_polynomials_shapes():
    evaluator = compile_polynomials(
        [parse_polynomial("x + y", XY), parse_polynomial("x*y", XY)], XY
    )
    values = evaluator(np.array([[1.0, 2.0], [3.0, -1.0]]))
    np.testing.assert_allclose(values, [[3.0, 2.0], [2.0, -3.0]])
    np.testing.assert_allclose(evaluator(np.array([1.0, 1.0])), [2.0, 1.0])


def test_evaluate_rejects_wrong_dimension():
    with pytest.raises(DimensionMismatchError):
        parse_polynomial("x", XY)([1.0, 2.0, 3.0])


@pytest.mark.parametrize("k, expected", [(0, 0), (1, 1), (2, 1), (3, 2), (4, 2)])
def test_ceil_half(k, expected):
    assert ceil_half(k) == expected


@pytest.mark.parametrize("n", range(1, 9))
def test_monomial_basis_counts(n):
    for d in range(7):
        basis = monomial_basis(n, d)
        assert len(basis) == math.comb(n + d, d)
        assert len(set(basis)) == len(basis)
        assert [sum(alpha) for alpha in basis] == sorted(sum(alpha) for alpha in basis)


FLOW = [parse_polynomial("y", XY), parse_polynomial("-x - y + x^3", XY)]


@given(small_polys, small_polys, coefficients, coefficients)
def test_lie_derivative_is_linear(p, q, a, b):
    def lie(v):
        return lie_derivative(v, FLOW, XY, time=None)

    assert lie(p * a + q * b).is_close(lie(p) * a + lie(q) * b, tol=1e-9)


@pytest.mark.parametrize("value", [0.0, 1.0, -2.5])
def test_lie_derivative_of_constant_vanishes(value):
    variables = ("t", "x", "y")
    f = [g.embed(variables) for g in FLOW]
    assert lie_derivative(Polynomial.constant(value, variables), f, XY).is_zero
    one = Polynomial.constant(1.0, variables)
    assert lie_derivative(Polynomial.variable("t", variables), f, XY) == one


def test_long_expression_with_trailing_space():
    text = " + ".join(["x*y"] * 2000) + "   \n"
    assert parse_polynomial(text, XY) == Polynomial(XY, {(1, 1): 2000.0})
    with pytest.raises(PolynomialParseError):
        parse_polynomial("   ", XY)
