"""
Affine rescaling of variable blocks to the unit box.

Programs are assembled in scaled coordinates x~ with x = center + scale * x~
(time t = T * t~). Substituting the maps into a polynomial leaves its values
unchanged, so objective values need no correction; points and certificate
polynomials are mapped back at report time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError
from .poly import Polynomial
from .sets import Box, SemialgebraicSet


@dataclass(frozen=True)
class AffineMap:
    variables: tuple[str, ...]
    center: tuple[float, ...]
    scale: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        if not len(self.variables) == len(self.center) == len(self.scale):
            raise DimensionMismatchError("affine map with inconsistent lengths")
        if any(s <= 0 for s in self.scale):
            raise ValueError(f"non-positive scale in {self.scale}")

    @classmethod
    def identity(cls, variables: Sequence[str]) -> AffineMap:
        n = len(variables)
        return cls(tuple(variables), (0.0,) * n, (1.0,) * n)

    @classmethod
    def from_box(cls, variables: Sequence[str], box: Box) -> AffineMap:
        """Map [lo, hi] onto [-1, 1]; a zero-width side keeps unit scale."""
        center = [(lo + hi) / 2 for lo, hi in box]
        scale = [(hi - lo) / 2 if hi > lo else 1.0 for lo, hi in box]
        return cls(tuple(variables), tuple(center), tuple(scale))

    def renamed(self, variables: Sequence[str]) -> AffineMap:
        return AffineMap(tuple(variables), self.center, self.scale)

    def forward_substitution(self) -> dict[str, Polynomial]:
        """x -> center + scale * x~, for rewriting original polynomials in scaled variables."""
        result = {}
        for v, c, s in zip(self.variables, self.center, self.scale):
            result[v] = s * Polynomial.variable(v, (v,)) + c
        return result

    def inverse_substitution(self) -> dict[str, Polynomial]:
        """x~ -> (x - center) / scale, for mapping scaled polynomials back."""
        result = {}
        for v, c, s in zip(self.variables, self.center, self.scale):
            result[v] = (Polynomial.variable(v, (v,)) - c) / s
        return result

    def to_scaled(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.array(self.center)) / np.array(self.scale)

    def to_original(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) * np.array(self.scale) + np.array(self.center)

    def scaled_box(self, box: Box) -> Box:
        return tuple(
            ((lo - c) / s, (hi - c) / s)
            for (lo, hi), c, s in zip(box, self.center, self.scale)
        )


def compose(*maps: AffineMap) -> AffineMap:
    """Concatenate maps over disjoint variable blocks."""
    variables, center, scale = [], [], []
    for m in maps:
        variables.extend(m.variables)
        center.extend(m.center)
        scale.extend(m.scale)
    return AffineMap(tuple(variables), tuple(center), tuple(scale))


def scale_polynomial(p: Polynomial, affine: AffineMap) -> Polynomial:
    """Rewrite p(x) as a polynomial in the scaled variables of `affine`."""
    return p.substitute(affine.forward_substitution(), p.variables)


def unscale_polynomial(p: Polynomial, affine: AffineMap) -> Polynomial:
    """Rewrite a polynomial in scaled variables back in original ones."""
    return p.substitute(affine.inverse_substitution(), p.variables)


def scale_set(s: SemialgebraicSet, affine: AffineMap) -> SemialgebraicSet:
    """The same set written in the scaled coordinates of `affine`."""
    relevant = {v: r for v, r in affine.forward_substitution().items() if v in s.variables}
    box = None
    if s.box is not None:
        sub = affine_restricted(affine, s.variables)
        box = sub.scaled_box(s.box)
    return s.transformed(relevant, box)


def affine_restricted(affine: AffineMap, variables: Sequence[str]) -> AffineMap:
    position = {v: i for i, v in enumerate(affine.variables)}
    missing = [v for v in variables if v not in position]
    if missing:
        raise DimensionMismatchError(f"no scaling known for {missing}")
    idx = [position[v] for v in variables]
    return AffineMap(
        tuple(variables),
        tuple(affine.center[i] for i in idx),
        tuple(affine.scale[i] for i in idx),
    )


def scale_dynamics(
    dynamics: Sequence[Polynomial],
    states: AffineMap,
    horizon: float,
    others: Mapping[str, Polynomial] | None = None,
    time: str = "t",
) -> tuple[Polynomial, ...]:
    """f~_i = (T / s_i) f_i(T t~, c + s x~, ...)."""
    replacements: dict[str, Polynomial] = dict(states.forward_substitution())
    replacements[time] = horizon * Polynomial.variable(time, (time,))
    if others:
        replacements.update(others)
    scaled = []
    for f, s in zip(dynamics, states.scale):
        scaled.append(f.substitute(replacements, f.variables) * (horizon / s))
    return tuple(scaled)
