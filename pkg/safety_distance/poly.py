"""
Sparse multivariate polynomials over named variables.

A polynomial stores its coefficients keyed by multi-index (one exponent per
variable). Terms are kept in graded lexicographic order, which is also the
order used for moment indices everywhere else in the package.
"""

from __future__ import annotations

import itertools
import math
import re
from functools import lru_cache
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DimensionMismatchError, PolynomialParseError

MultiIndex = tuple[int, ...]
Scalar = Union[int, float]

# points evaluated per chunk in vectorized evaluation
_EVAL_CHUNK = 200_000


def grlex_key(alpha: MultiIndex) -> tuple:
    return (sum(alpha), tuple(-a for a in alpha))


@lru_cache(maxsize=None)
def monomial_basis(n: int, d: int) -> tuple[MultiIndex, ...]:
    """All multi-indices in n variables of total degree <= d, graded-lex order."""
    if n < 1 or d < 0:
        raise ValueError(f"monomial basis needs n >= 1 and d >= 0, got n={n}, d={d}")
    basis = []
    for degree in range(d + 1):
        for combo in itertools.combinations_with_replacement(range(n), degree):
            exponents = [0] * n
            for i in combo:
                exponents[i] += 1
            basis.append(tuple(exponents))
    return tuple(basis)


@lru_cache(maxsize=None)
def basis_positions(n: int, d: int) -> Mapping[MultiIndex, int]:
    return MappingProxyType({alpha: i for i, alpha in enumerate(monomial_basis(n, d))})


def add_indices(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Immutable sparse polynomial; arithmetic aligns differing variable lists."""

    __slots__ = ("_variables", "_terms", "_hash")

    def __init__(
        self,
        variables: Iterable[str],
        terms: Mapping[MultiIndex, Scalar] | None = None,
    ):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ValueError(f"duplicate variable names in {variables}")
        clean: dict[MultiIndex, float] = {}
        for alpha, coef in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != len(variables):
                raise DimensionMismatchError(
                    f"multi-index {alpha} does not match variables {variables}"
                )
            if any(a < 0 for a in alpha):
                raise ValueError(f"negative exponent in {alpha}")
            clean[alpha] = clean.get(alpha, 0.0) + float(coef)
        ordered = sorted((a for a, c in clean.items() if c != 0.0), key=grlex_key)
        self._variables = variables
        self._terms = MappingProxyType({a: clean[a] for a in ordered})
        self._hash = None

    # construction helpers

    @classmethod
    def zero(cls, variables: Iterable[str]) -> Polynomial:
        return cls(variables)

    @classmethod
    def constant(cls, value: Scalar, variables: Iterable[str]) -> Polynomial:
        variables = tuple(variables)
        return cls(variables, {(0,) * len(variables): value})

    @classmethod
    def variable(cls, name: str, variables: Iterable[str]) -> Polynomial:
        variables = tuple(variables)
        if name not in variables:
            raise PolynomialParseError(f"undeclared identifier {name!r}")
        alpha = tuple(int(v == name) for v in variables)
        return cls(variables, {alpha: 1.0})

    @classmethod
    def monomial(
        cls, alpha: MultiIndex, variables: Iterable[str], coefficient: Scalar = 1.0
    ) -> Polynomial:
        return cls(variables, {tuple(alpha): coefficient})

    # accessors

    @property
    def variables(self) -> tuple[str, ...]:
        return self._variables

    @property
    def terms(self) -> Mapping[MultiIndex, float]:
        return self._terms

    @property
    def nvars(self) -> int:
        return len(self._variables)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def is_constant(self) -> bool:
        return all(sum(a) == 0 for a in self._terms)

    @property
    def constant_term(self) -> float:
        return self._terms.get((0,) * self.nvars, 0.0)

    def coefficient(self, alpha: MultiIndex) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def used_variables(self) -> tuple[str, ...]:
        return tuple(
            v for i, v in enumerate(self._variables) if any(a[i] for a in self._terms)
        )

    def degree_in(self, names: Iterable[str]) -> int:
        """Total degree counting only the exponents of `names`."""
        wanted = set(names)
        positions = [i for i, v in enumerate(self._variables) if v in wanted]
        return max((sum(a[i] for i in positions) for a in self._terms), default=0)

    # re-expression

    def embed(self, variables: Iterable[str]) -> Polynomial:
        """Same polynomial over another variable list containing every used variable."""
        variables = tuple(variables)
        if variables == self._variables:
            return self
        missing = set(self.used_variables()) - set(variables)
        if missing:
            raise DimensionMismatchError(
                f"variables {sorted(missing)} are not in {variables}"
            )
        position = {v: i for i, v in enumerate(self._variables)}
        terms = {}
        for alpha, coef in self._terms.items():
            terms[
                tuple(alpha[position[v]] if v in position else 0 for v in variables)
            ] = coef
        return Polynomial(variables, terms)

    def rename(self, mapping: Mapping[str, str]) -> Polynomial:
        return Polynomial((mapping.get(v, v) for v in self._variables), self._terms)

    def _aligned(self, other: Polynomial | Scalar) -> tuple[Polynomial, Polynomial]:
        if not isinstance(other, Polynomial):
            return self, Polynomial.constant(other, self._variables)
        if other._variables == self._variables:
            return self, other
        union = self._variables + tuple(
            v for v in other._variables if v not in self._variables
        )
        return self.embed(union), other.embed(union)

    # arithmetic

    def __add__(self, other: Polynomial | Scalar) -> Polynomial:
        if not isinstance(other, (Polynomial, int, float)):
            return NotImplemented
        a, b = self._aligned(other)
        terms = dict(a._terms)
        for alpha, coef in b._terms.items():
            terms[alpha] = terms.get(alpha, 0.0) + coef
        return Polynomial(a._variables, terms)

    __radd__ = __add__

    def __neg__(self) -> Polynomial:
        return Polynomial(self._variables, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other: Polynomial | Scalar) -> Polynomial:
        if not isinstance(other, (Polynomial, int, float)):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other: Scalar) -> Polynomial:
        return (-self) + other

    def __mul__(self, other: Polynomial | Scalar) -> Polynomial:
        if isinstance(other, (int, float)):
            return Polynomial(
                self._variables, {a: c * other for a, c in self._terms.items()}
            )
        if not isinstance(other, Polynomial):
            return NotImplemented
        a, b = self._aligned(other)
        terms: dict[MultiIndex, float] = {}
        for alpha, ca in a._terms.items():
            for beta, cb in b._terms.items():
                key = add_indices(alpha, beta)
                terms[key] = terms.get(key, 0.0) + ca * cb
        return Polynomial(a._variables, terms)

    __rmul__ = __mul__

    def __truediv__(self, other: Scalar) -> Polynomial:
        if not isinstance(other, (int, float)):
            return NotImplemented
        return self * (1.0 / other)

    def __pow__(self, exponent: int) -> Polynomial:
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError(f"non-natural exponent {exponent!r}")
        result = Polynomial.constant(1.0, self._variables)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            exponent >>= 1
            if exponent:
                base = base * base
        return result

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._variables == other._variables and dict(self._terms) == dict(
            other._terms
        )

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._variables, frozenset(self._terms.items())))
        return self._hash

    def is_close(self, other: Polynomial, tol: float = 1e-12) -> bool:
        a, b = self._aligned(other)
        diff = a - b
        scale = max([1.0] + [abs(c) for c in a._terms.values()])
        return all(abs(c) <= tol * scale for c in diff._terms.values())

    # calculus

    def derivative(self, name: str) -> Polynomial:
        if name not in self._variables:
            return Polynomial.zero(self._variables)
        k = self._variables.index(name)
        terms = {}
        for alpha, coef in self._terms.items():
            if alpha[k]:
                beta = alpha[:k] + (alpha[k] - 1,) + alpha[k + 1 :]
                terms[beta] = coef * alpha[k]
        return Polynomial(self._variables, terms)

    def substitute(
        self,
        replacements: Mapping[str, Polynomial | Scalar],
        variables: Iterable[str] | None = None,
    ) -> Polynomial:
        """
        Simultaneous substitution of variables by polynomials.

        Variables without a replacement are kept. The result lives on
        `variables` when given, otherwise on the union of the kept variables
        and the replacements' variables.
        """
        kept = tuple(v for v in self._variables if v not in replacements)
        if variables is None:
            union = list(kept)
            for rep in replacements.values():
                if isinstance(rep, Polynomial):
                    union.extend(v for v in rep.variables if v not in union)
            variables = tuple(union)
        variables = tuple(variables)

        factors: list[Polynomial] = []
        for v in self._variables:
            rep = replacements.get(v, None)
            if rep is None:
                factors.append(Polynomial.variable(v, variables))
            elif isinstance(rep, Polynomial):
                factors.append(rep.embed(variables))
            else:
                factors.append(Polynomial.constant(rep, variables))

        powers: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, e: int) -> Polynomial:
            if (i, e) not in powers:
                powers[(i, e)] = (
                    Polynomial.constant(1.0, variables)
                    if e == 0
                    else power(i, e - 1) * factors[i]
                )
            return powers[(i, e)]

        result = Polynomial.zero(variables)
        for alpha, coef in self._terms.items():
            term = Polynomial.constant(coef, variables)
            for i, e in enumerate(alpha):
                if e:
                    term = term * power(i, e)
            result = result + term
        return result

    # evaluation

    def evaluate(self, point) -> float | np.ndarray:
        """Value at one point (shape (n,)) or at many points (shape (k, n))."""
        pts = np.asarray(point, dtype=float)
        if pts.ndim == 0 or pts.shape[-1] != self.nvars:
            raise DimensionMismatchError(
                f"point of shape {pts.shape} for {self.nvars} variables"
            )
        if self.nvars == 0:
            value = self.constant_term
            return value if pts.ndim == 1 else np.full(pts.shape[:-1], value)
        values = _evaluate_terms(
            [self], self.nvars, pts.reshape(-1, self.nvars)
        )[:, 0]
        if pts.ndim == 1:
            return float(values[0])
        return values.reshape(pts.shape[:-1])

    __call__ = evaluate

    # text form

    def to_string(self) -> str:
        if not self._terms:
            return "0"
        pieces = []
        for alpha, coef in self._terms.items():
            factors = []
            for v, e in zip(self._variables, alpha):
                if e == 1:
                    factors.append(v)
                elif e > 1:
                    factors.append(f"{v}^{e}")
            magnitude = abs(coef)
            if not factors:
                body = repr(magnitude)
            elif magnitude == 1.0:
                body = "*".join(factors)
            else:
                body = "*".join([repr(magnitude)] + factors)
            if not pieces:
                pieces.append(f"-{body}" if coef < 0 else body)
            else:
                pieces.append(f"- {body}" if coef < 0 else f"+ {body}")
        return " ".join(pieces)

    def __str__(self) -> str:
        return self.to_string()

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()!r}, variables={self._variables})"


def _evaluate_terms(
    polys: Sequence[Polynomial], nvars: int, points: np.ndarray
) -> np.ndarray:
    """Values of several polynomials sharing `nvars` variables at (k, n) points."""
    out = np.zeros((points.shape[0], len(polys)))
    if not any(p.terms for p in polys):
        return out
    max_degree = max(p.degree for p in polys)
    for start in range(0, points.shape[0], _EVAL_CHUNK):
        chunk = points[start : start + _EVAL_CHUNK]
        # table[k, i, e] = chunk[k, i] ** e
        table = np.ones((chunk.shape[0], nvars, max_degree + 1))
        for e in range(1, max_degree + 1):
            table[:, :, e] = table[:, :, e - 1] * chunk
        for j, p in enumerate(polys):
            if not p.terms:
                continue
            exponents = np.array(list(p.terms.keys()), dtype=int)
            coefs = np.fromiter(p.terms.values(), dtype=float)
            monomials = np.ones((chunk.shape[0], exponents.shape[0]))
            for i in range(nvars):
                monomials *= table[:, i, exponents[:, i]]
            out[start : start + chunk.shape[0], j] = monomials @ coefs
    return out


def compile_polynomials(
    polys: Sequence[Polynomial], variables: Sequence[str]
) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized evaluator of a polynomial vector: (k, n) or (n,) -> (k, m) or (m,)."""
    variables = tuple(variables)
    embedded = [p.embed(variables) for p in polys]
    n = len(variables)

    def evaluate(points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, n)
        values = _evaluate_terms(embedded, n, flat)
        if pts.ndim == 1:
            return values[0]
        return values.reshape(pts.shape[:-1] + (len(embedded),))

    return evaluate


def evaluate(p: Polynomial, point) -> float | np.ndarray:
    return p.evaluate(point)


def lie_derivative(
    v: Polynomial,
    f: Sequence[Polynomial],
    states: Sequence[str],
    time: str | None = "t",
) -> Polynomial:
    """L_f v = dv/dt + sum_i f_i dv/dx_i."""
    if len(f) != len(states):
        raise DimensionMismatchError(
            f"{len(f)} dynamics components for {len(states)} states"
        )
    result = v.derivative(time) if time is not None else Polynomial.zero(v.variables)
    for fi, xi in zip(f, states):
        partial = v.derivative(xi)
        if not partial.is_zero:
            result = result + fi * partial
    return result


# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.text = text
        self.variables = variables
        self.tokens: list[tuple[str, str, int]] = []
        pos, end = 0, len(text.rstrip())
        while pos < end:
            match = _TOKEN.match(text, pos)
            if match is None or match.end() == pos:
                raise PolynomialParseError("unexpected character", text, pos)
            kind = match.lastgroup
            self.tokens.append((kind, match.group(kind), match.start(kind)))
            pos = match.end()
        self.index = 0

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.index] if self.index < len(self.tokens) else None

    def take(self) -> tuple[str, str, int]:
        token = self.peek()
        if token is None:
            raise PolynomialParseError("unexpected end of expression", self.text, len(self.text))
        self.index += 1
        return token

    def parse(self) -> Polynomial:
        if not self.tokens:
            raise PolynomialParseError("empty expression", self.text, 0)
        result = self.expression()
        token = self.peek()
        if token is not None:
            raise PolynomialParseError(f"unexpected {token[1]!r}", self.text, token[2])
        return result

    def expression(self) -> Polynomial:
        result = self.term()
        while (token := self.peek()) is not None and token[1] in "+-":
            self.take()
            rhs = self.term()
            result = result + rhs if token[1] == "+" else result - rhs
        return result

    def term(self) -> Polynomial:
        result = self.factor()
        while (token := self.peek()) is not None and token[1] in ("*", "/"):
            self.take()
            rhs = self.factor()
            if token[1] == "*":
                result = result * rhs
            else:
                if not rhs.is_constant:
                    raise PolynomialParseError(
                        "division by a non-constant", self.text, token[2]
                    )
                if rhs.constant_term == 0.0:
                    raise PolynomialParseError("division by zero", self.text, token[2])
                result = result / rhs.constant_term
        return result

    def factor(self) -> Polynomial:
        token = self.peek()
        if token is not None and token[1] in ("+", "-"):
            self.take()
            operand = self.factor()
            return -operand if token[1] == "-" else operand
        return self.power()

    def power(self) -> Polynomial:
        base = self.atom()
        token = self.peek()
        if token is not None and token[1] in ("^", "**"):
            self.take()
            exponent = self.take()
            if exponent[0] != "number" or not exponent[1].isdigit():
                raise PolynomialParseError(
                    f"non-natural exponent {exponent[1]!r}", self.text, exponent[2]
                )
            return base ** int(exponent[1])
        return base

    def atom(self) -> Polynomial:
        kind, value, position = self.take()
        if kind == "number":
            return Polynomial.constant(float(value), self.variables)
        if kind == "name":
            if value not in self.variables:
                raise PolynomialParseError(
                    f"undeclared identifier {value!r}", self.text, position
                )
            return Polynomial.variable(value, self.variables)
        if value == "(":
            inner = self.expression()
            closing = self.take()
            if closing[1] != ")":
                raise PolynomialParseError("expected ')'", self.text, closing[2])
            return inner
        raise PolynomialParseError(f"unexpected {value!r}", self.text, position)


def parse_polynomial(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse `+ - * / ^` expressions with natural exponents over the given variables."""
    if not isinstance(text, str):
        raise PolynomialParseError(f"expected a string, got {type(text).__name__}")
    return _Parser(text, tuple(variables)).parse()


def ceil_half(k: int) -> int:
    return math.ceil(k / 2)
