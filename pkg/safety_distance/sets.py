"""
Basic semialgebraic sets {g_k >= 0, h_j = 0} over a named variable block.

A declared box is kept as bounds (used for scaling, grids and sampling) and
enters the description as per-coordinate constraints (hi - x)(x - lo) >= 0;
a degenerate side lo == hi becomes the equality x - lo = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DimensionMismatchError
from .poly import Polynomial, compile_polynomials, parse_polynomial

Box = tuple[tuple[float, float], ...]
ConstraintLike = Union[str, Polynomial]


@dataclass(frozen=True)
class SemialgebraicSet:
    variables: tuple[str, ...]
    inequalities: tuple[Polynomial, ...] = ()
    equalities: tuple[Polynomial, ...] = ()
    box: Box | None = None
    ball_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        for g in (*self.inequalities, *self.equalities):
            extra = set(g.used_variables()) - set(self.variables)
            if extra:
                raise DimensionMismatchError(
                    f"constraint {g} uses undeclared variables {sorted(extra)}"
                )
        object.__setattr__(
            self, "inequalities", tuple(g.embed(self.variables) for g in self.inequalities)
        )
        object.__setattr__(
            self, "equalities", tuple(g.embed(self.variables) for g in self.equalities)
        )
        if self.box is not None:
            box = tuple((float(lo), float(hi)) for lo, hi in self.box)
            if len(box) != len(self.variables):
                raise DimensionMismatchError(
                    f"box has {len(box)} sides for {len(self.variables)} variables"
                )
            for lo, hi in box:
                if lo > hi:
                    raise ValueError(f"empty box side [{lo}, {hi}]")
            object.__setattr__(self, "box", box)
        if self.ball_radius is not None and self.ball_radius <= 0:
            raise ValueError(f"ball radius must be positive, got {self.ball_radius}")

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def _coordinate(self, i: int) -> Polynomial:
        return Polynomial.variable(self.variables[i], self.variables)

    @property
    def box_constraints(self) -> tuple[Polynomial, ...]:
        if self.box is None:
            return ()
        return tuple(
            (hi - self._coordinate(i)) * (self._coordinate(i) - lo)
            for i, (lo, hi) in enumerate(self.box)
            if lo < hi
        )

    @property
    def box_equalities(self) -> tuple[Polynomial, ...]:
        if self.box is None:
            return ()
        return tuple(
            self._coordinate(i) - lo for i, (lo, hi) in enumerate(self.box) if lo == hi
        )

    @property
    def ball_constraint(self) -> Polynomial | None:
        if self.ball_radius is None:
            return None
        squares = sum(
            (self._coordinate(i) ** 2 for i in range(self.dimension)),
            Polynomial.zero(self.variables),
        )
        return self.ball_radius**2 - squares

    @property
    def constraints(self) -> tuple[Polynomial, ...]:
        """Every g >= 0 of the description: declared, box-derived, then ball."""
        ball = self.ball_constraint
        return self.inequalities + self.box_constraints + (() if ball is None else (ball,))

    @property
    def all_equalities(self) -> tuple[Polynomial, ...]:
        return self.equalities + self.box_equalities

    def bounds(self, fallback: Box | None = None) -> Box:
        if self.box is not None:
            return self.box
        if fallback is None:
            raise ValueError(f"set over {self.variables} has no declared box")
        return tuple(fallback)

    def contains(self, point, tol: float = 1e-9) -> bool:
        return bool(self.contains_many(np.atleast_2d(np.asarray(point, float)), tol)[0])

    def contains_many(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dimension:
            raise DimensionMismatchError(
                f"points of shape {points.shape} for {self.dimension} variables"
            )
        inside = np.ones(points.shape[:-1], dtype=bool)
        if self.box is not None:
            lo = np.array([b[0] for b in self.box])
            hi = np.array([b[1] for b in self.box])
            inside &= np.all((points >= lo - tol) & (points <= hi + tol), axis=-1)
        if self.inequalities or self.ball_radius is not None:
            ineq = list(self.inequalities)
            if self.ball_radius is not None:
                ineq.append(self.ball_constraint)
            values = compile_polynomials(ineq, self.variables)(points)
            inside &= np.all(values >= -tol, axis=-1)
        if self.equalities:
            values = compile_polynomials(self.equalities, self.variables)(points)
            inside &= np.all(np.abs(values) <= tol, axis=-1)
        return inside

    def rename(self, mapping: Mapping[str, str]) -> SemialgebraicSet:
        variables = tuple(mapping.get(v, v) for v in self.variables)
        return replace(
            self,
            variables=variables,
            inequalities=tuple(g.rename(mapping) for g in self.inequalities),
            equalities=tuple(g.rename(mapping) for g in self.equalities),
        )

    def transformed(
        self, replacements: Mapping[str, Polynomial], box: Box | None
    ) -> SemialgebraicSet:
        """
        Same set written in substituted coordinates (used for unit-box scaling).

        A ball constraint is carried over as an ordinary inequality.
        """
        ball = self.ball_constraint
        inequalities = self.inequalities + (() if ball is None else (ball,))
        return replace(
            self,
            inequalities=tuple(
                g.substitute(replacements, self.variables) for g in inequalities
            ),
            equalities=tuple(
                g.substitute(replacements, self.variables) for g in self.equalities
            ),
            box=box,
            ball_radius=None,
        )


def _as_polynomial(g: ConstraintLike, variables: Sequence[str]) -> Polynomial:
    if isinstance(g, Polynomial):
        return g
    return parse_polynomial(g, variables)


def make_set(
    variables: Iterable[str],
    inequalities: Iterable[ConstraintLike] = (),
    equalities: Iterable[ConstraintLike] = (),
    box: Sequence[Sequence[float]] | None = None,
    ball: float | str | None = None,
) -> SemialgebraicSet:
    """
    Build a set from constraint strings or polynomials.

    `ball` is a Euclidean radius, or "auto" for the circumscribing ball of the box.
    """
    variables = tuple(variables)
    result = SemialgebraicSet(
        variables=variables,
        inequalities=tuple(_as_polynomial(g, variables) for g in inequalities),
        equalities=tuple(_as_polynomial(g, variables) for g in equalities),
        box=None if box is None else tuple(tuple(side) for side in box),
    )
    if ball == "auto":
        return add_ball(result, circumscribing_radius(result.bounds()))
    if ball is not None:
        return add_ball(result, float(ball))
    return result


def box_set(variables: Iterable[str], bounds: Sequence[Sequence[float]]) -> SemialgebraicSet:
    return make_set(variables, box=bounds)


def circumscribing_radius(box: Box) -> float:
    return math.sqrt(sum(max(lo * lo, hi * hi) for lo, hi in box))


def add_ball(s: SemialgebraicSet, radius: float) -> SemialgebraicSet:
    """Append the redundant constraint R^2 - |x|^2 >= 0."""
    if not radius > 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    return replace(s, ball_radius=float(radius))


def contains(s: SemialgebraicSet, point, tol: float = 1e-9) -> bool:
    return s.contains(point, tol)


def product(a: SemialgebraicSet, b: SemialgebraicSet) -> SemialgebraicSet:
    """Cartesian product over the concatenated variable block."""
    collision = set(a.variables) & set(b.variables)
    if collision:
        raise ValueError(f"variable name collision {sorted(collision)}")
    variables = a.variables + b.variables
    if a.box is not None and b.box is not None:
        # box constraints are re-derived from the combined box
        box = a.box + b.box
        inequalities = a.inequalities + b.inequalities
        inequalities += tuple(g for g in (a.ball_constraint, b.ball_constraint) if g is not None)
        equalities = a.equalities + b.equalities
    else:
        box = None
        inequalities = a.constraints + b.constraints
        equalities = a.all_equalities + b.all_equalities
    return SemialgebraicSet(
        variables=variables,
        inequalities=tuple(g.embed(variables) for g in inequalities),
        equalities=tuple(g.embed(variables) for g in equalities),
        box=box,
    )


def sample_points(
    s: SemialgebraicSet,
    count: int,
    rng: np.random.Generator,
    fallback: Box | None = None,
    batch: int = 100_000,
    max_draws: int = 50_000_000,
) -> np.ndarray:
    """
    Rejection sampling inside the set's box (or `fallback`).

    Returns fewer than `count` rows only when the draw budget runs out.
    """
    bounds = np.array(s.bounds(fallback), dtype=float)
    accepted: list[np.ndarray] = []
    found = 0
    drawn = 0
    while found < count and drawn < max_draws:
        points = rng.uniform(bounds[:, 0], bounds[:, 1], size=(batch, s.dimension))
        drawn += batch
        keep = points[s.contains_many(points)]
        accepted.append(keep)
        found += keep.shape[0]
    if not accepted:
        return np.zeros((0, s.dimension))
    return np.concatenate(accepted)[:count]


def _ball_of(g: Polynomial) -> tuple[tuple[float, ...], float] | None:
    """Centre and radius when g = r^2 - a |x - c|^2 with a > 0 over every variable."""
    n = g.nvars
    if g.degree != 2 or n == 0:
        return None
    squares = [g.coefficient(tuple(2 if k == i else 0 for k in range(n))) for i in range(n)]
    a = -squares[0]
    if a <= 0 or any(not math.isclose(-q, a) for q in squares):
        return None
    if any(sum(alpha) == 2 and max(alpha) == 1 for alpha in g.terms):
        return None
    center = tuple(g.coefficient(tuple(int(k == i) for k in range(n))) / (2 * a) for i in range(n))
    r2 = (g.constant_term + a * sum(c * c for c in center)) / a
    if r2 < 0:
        return None
    return center, math.sqrt(r2)


def outer_box(s: SemialgebraicSet) -> Box | None:
    """
    A box containing `s`: the declared box, intersected with the sides of its
    ball and of every ball-shaped inequality. None when nothing bounds the set.
    """
    boxes = [] if s.box is None else [s.box]
    if s.ball_radius is not None:
        boxes.append(((-s.ball_radius, s.ball_radius),) * s.dimension)
    for g in s.inequalities:
        ball = _ball_of(g)
        if ball is not None:
            center, radius = ball
            boxes.append(tuple((c - radius, c + radius) for c in center))
    if not boxes:
        return None
    return tuple((max(lo for lo, _ in sides), min(hi for _, hi in sides)) for sides in zip(*boxes))
