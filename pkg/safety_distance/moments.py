"""
Moment sequences, moment/localizing matrix specs and affine moment rows.

Blocks are kept symbolic: an entry (i, j) of a block references moments of a
single sequence, m_{b_i + b_j + gamma} weighted by the multiplier coefficient
g_gamma. Numeric matrices are produced by `instantiate` once values exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, ModelError
from .poly import (
    MultiIndex,
    Polynomial,
    add_indices,
    basis_positions,
    ceil_half,
    monomial_basis,
)
from .sets import SemialgebraicSet

SCALAR_OWNER = "@scalars"


def index_keys(alphas: np.ndarray, base: int) -> np.ndarray:
    """Injective integer key of each multi-index row (entries must be < base)."""
    alphas = np.asarray(alphas, dtype=np.int64)
    weights = base ** np.arange(alphas.shape[-1], dtype=np.int64)
    return alphas @ weights


@dataclass(frozen=True)
class MomentSequence:
    """
    Truncated moment sequence of one measure.

    `degree` is the truncation order 2d; `values` is aligned with `basis`
    (graded-lex) and stays None until a solution is attached.
    """

    name: str
    variables: tuple[str, ...]
    degree: int
    values: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        if self.degree < 0:
            raise ValueError(f"negative truncation degree for {self.name}")
        if self.values is not None:
            values = np.asarray(self.values, dtype=float)
            if values.shape != (len(self.basis),):
                raise DimensionMismatchError(
                    f"{self.name}: {values.shape} values for {len(self.basis)} moments"
                )
            object.__setattr__(self, "values", values)

    @property
    def nvars(self) -> int:
        return len(self.variables)

    @property
    def basis(self) -> tuple[MultiIndex, ...]:
        return monomial_basis(self.nvars, self.degree)

    def __len__(self) -> int:
        return len(self.basis)

    @property
    def solved(self) -> bool:
        return self.values is not None

    def with_values(self, values: np.ndarray) -> MomentSequence:
        return replace(self, values=values)

    def position(self, alpha: MultiIndex) -> int:
        try:
            return basis_positions(self.nvars, self.degree)[tuple(alpha)]
        except KeyError:
            raise ModelError(
                f"moment {tuple(alpha)} exceeds the truncation {self.degree} of {self.name}"
            ) from None

    @cached_property
    def _sorted_keys(self) -> tuple[np.ndarray, np.ndarray]:
        keys = index_keys(np.array(self.basis).reshape(-1, self.nvars), self.degree + 1)
        order = np.argsort(keys)
        return keys[order], order

    def positions(self, alphas: np.ndarray) -> np.ndarray:
        """Vectorized `position` for an (k, nvars) integer array."""
        alphas = np.asarray(alphas, dtype=np.int64).reshape(-1, self.nvars)
        if alphas.size and (alphas.sum(axis=1).max() > self.degree):
            raise ModelError(
                f"block references moments beyond the truncation {self.degree} of {self.name}"
            )
        keys, order = self._sorted_keys
        wanted = index_keys(alphas, self.degree + 1)
        found = np.searchsorted(keys, wanted)
        return order[found]

    def _require_values(self) -> np.ndarray:
        if self.values is None:
            raise ValueError(f"moment sequence {self.name} has no values")
        return self.values

    def value(self, alpha: MultiIndex) -> float:
        return float(self._require_values()[self.position(alpha)])

    @property
    def mass(self) -> float:
        return self.value((0,) * self.nvars)

    def expectation(self, p: Polynomial) -> float:
        """<p, measure> = sum_alpha p_alpha m_alpha."""
        p = p.embed(self.variables)
        values = self._require_values()
        return float(sum(c * values[self.position(a)] for a, c in p.terms.items()))

    def first_moments(self) -> np.ndarray:
        """Mean of each variable, normalized by the mass."""
        mass = self.mass
        eye = np.eye(self.nvars, dtype=int)
        raw = np.array([self.value(tuple(e)) for e in eye])
        return raw / mass if mass > 0 else raw


@dataclass(frozen=True)
class PsdBlockSpec:
    """
    Symbolic localizing matrix M[g m] of degree `order`.

    With multiplier 1 this is the moment matrix M_order(m).
    """

    label: str
    sequence: MomentSequence
    order: int
    multiplier: Polynomial

    @property
    def basis(self) -> tuple[MultiIndex, ...]:
        return monomial_basis(self.sequence.nvars, self.order)

    @property
    def size(self) -> int:
        return len(self.basis)

    def entry(self, i: int, j: int) -> tuple[tuple[float, MultiIndex], ...]:
        base = add_indices(self.basis[i], self.basis[j])
        return tuple(
            (coef, add_indices(base, gamma)) for gamma, coef in self.multiplier.terms.items()
        )

    @property
    def entries(self) -> dict[tuple[int, int], tuple[tuple[float, MultiIndex], ...]]:
        """Full symmetric entry map (row, col) -> ((coefficient, moment index), ...)."""
        size = self.size
        return {(i, j): self.entry(i, j) for i in range(size) for j in range(size)}

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (flat entry, moment position, coefficient) arrays over the row-major
        flattening of the block; repeated (entry, position) pairs are summed
        by the consumer.
        """
        seq = self.sequence
        basis = np.array(self.basis, dtype=np.int64).reshape(-1, seq.nvars)
        pair_sums = (basis[:, None, :] + basis[None, :, :]).reshape(-1, seq.nvars)
        flat = np.arange(pair_sums.shape[0])
        rows, cols, vals = [], [], []
        for gamma, coef in self.multiplier.terms.items():
            rows.append(flat)
            cols.append(seq.positions(pair_sums + np.array(gamma, dtype=np.int64)))
            vals.append(np.full(flat.shape[0], coef))
        if not rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@dataclass(frozen=True)
class AffineRow:
    """
    sum coef * moment(owner, alpha) compared with rhs.

    Equality rows read `== rhs`, inequality rows read `>= rhs`. Scalar
    variables use owner SCALAR_OWNER and alpha (index,).
    """

    terms: tuple[tuple[float, str, MultiIndex], ...]
    rhs: float = 0.0
    tag: tuple = ()

    def evaluate(self, lookup: Mapping[str, MomentSequence], scalars=None) -> float:
        total = 0.0
        for coef, owner, alpha in self.terms:
            if owner == SCALAR_OWNER:
                total += coef * float(scalars[alpha[0]])
            else:
                total += coef * lookup[owner].value(alpha)
        return total - self.rhs


def expectation_terms(
    p: Polynomial, sequence: MomentSequence, coefficient: float = 1.0
) -> list[tuple[float, str, MultiIndex]]:
    """Row terms of coefficient * <p, sequence>."""
    p = p.embed(sequence.variables)
    if p.degree > sequence.degree:
        raise ModelError(
            f"polynomial of degree {p.degree} exceeds the truncation "
            f"{sequence.degree} of {sequence.name}"
        )
    return [(coefficient * c, sequence.name, a) for a, c in p.terms.items()]


def moment_matrix_spec(seq: MomentSequence, d: int) -> PsdBlockSpec:
    if 2 * d > seq.degree:
        raise ModelError(
            f"moment matrix of degree {d} needs moments up to {2 * d}, "
            f"{seq.name} is truncated at {seq.degree}"
        )
    one = Polynomial.constant(1.0, seq.variables)
    return PsdBlockSpec(f"{seq.name}:moment", seq, d, one)


def localizing_matrix_spec(
    seq: MomentSequence, g: Polynomial, d: int, label: str | None = None
) -> PsdBlockSpec:
    """M[g m] of degree d - ceil(deg g / 2)."""
    g = g.embed(seq.variables)
    order = d - ceil_half(g.degree)
    if g.degree > 2 * d or order < 0:
        raise ModelError(f"localizer {g} of degree {g.degree} exceeds the relaxation degree {d}")
    if 2 * d > seq.degree:
        raise ModelError(f"localizer of degree {d} exceeds the truncation of {seq.name}")
    return PsdBlockSpec(label or f"{seq.name}:localizer", seq, order, g)


def equality_rows(
    seq: MomentSequence, g: Polynomial, label: str
) -> list[AffineRow]:
    """<g x^alpha> = 0 for every alpha with deg(g x^alpha) within the truncation."""
    g = g.embed(seq.variables)
    rows = []
    if g.degree > seq.degree:
        raise ModelError(f"equality {g} exceeds the truncation of {seq.name}")
    for alpha in monomial_basis(seq.nvars, seq.degree - g.degree):
        terms = tuple(
            (coef, seq.name, add_indices(alpha, gamma)) for gamma, coef in g.terms.items()
        )
        rows.append(AffineRow(terms, 0.0, ("equality", label, alpha)))
    return rows


def measure_block(
    seq: MomentSequence, support: SemialgebraicSet, d: int
) -> tuple[list[PsdBlockSpec], list[AffineRow]]:
    """Moment matrix, one localizer per inequality, and equality rows."""
    if tuple(support.variables) != seq.variables:
        raise DimensionMismatchError(
            f"support over {support.variables} for {seq.name} over {seq.variables}"
        )
    blocks = [moment_matrix_spec(seq, d)]
    for k, g in enumerate(support.constraints):
        blocks.append(localizing_matrix_spec(seq, g, d, f"{seq.name}:localizer{k}"))
    rows: list[AffineRow] = []
    for k, g in enumerate(support.all_equalities):
        rows.extend(equality_rows(seq, g, f"{seq.name}:equality{k}"))
    return blocks, rows


def instantiate(block: PsdBlockSpec, values: np.ndarray | None = None) -> np.ndarray:
    """Numeric matrix of a block from the sequence values (or `values`)."""
    if values is None:
        values = block.sequence._require_values()
    rows, cols, coefs = block.triplets()
    flat = np.zeros(block.size * block.size)
    np.add.at(flat, rows, coefs * np.asarray(values)[cols])
    return flat.reshape(block.size, block.size)


def atomic_moments(
    variables: Sequence[str],
    degree: int,
    atoms: Iterable[Sequence[float]],
    weights: Iterable[float] | None = None,
    name: str = "atomic",
) -> MomentSequence:
    """Moments of sum_i c_i delta_{z_i}."""
    atoms = np.atleast_2d(np.asarray(list(atoms), dtype=float))
    weights = (
        np.ones(atoms.shape[0]) if weights is None else np.asarray(list(weights), float)
    )
    seq = MomentSequence(name, tuple(variables), degree)
    exponents = np.array(seq.basis, dtype=float).reshape(-1, seq.nvars)
    powers = np.prod(atoms[:, None, :] ** exponents[None, :, :], axis=2)
    return seq.with_values(weights @ powers)
