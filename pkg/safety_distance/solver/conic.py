"""
Standard conic form of a moment program.

    minimize    c' y + offset
    subject to  B y = b
                Phi_k y + h_k  in  K_k

with K_k either the PSD cone of an n x n block (rows are the row-major
flattening of the matrix) or the nonnegative orthant. Each scalar variable
is one distinct moment (or free scalar), so the Hankel symmetry of moment
matrices is deduplicated by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        __str__ = str.__str__
        __format__ = str.__format__
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from ..errors import SizeGuardError
from ..moments import SCALAR_OWNER, AffineRow

if TYPE_CHECKING:
    from ..program import MomentProgram

LOGGER = logging.getLogger(__name__)


class Status(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max-iter"
    ILL_CONDITIONED = "ill-conditioned"


PSD = "s"
NONNEGATIVE = "l"


@dataclass(frozen=True)
class ConeBlock:
    kind: str
    size: int
    phi: sp.csr_matrix
    const: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.size * self.size if self.kind == PSD else self.size

    def affine(self, y: np.ndarray) -> np.ndarray:
        """Slack Phi y + h, as a matrix for PSD blocks and a vector otherwise."""
        value = self.phi @ y + self.const
        return value.reshape(self.size, self.size) if self.kind == PSD else value


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    cones: tuple[ConeBlock, ...]
    offset: float = 0.0
    # (owner, multi-index) of every variable, used to map solutions back
    variables: tuple[tuple[str, tuple[int, ...]], ...] = ()
    eq_tags: tuple = ()
    # +1 when the moment program minimizes, -1 when it maximizes
    sense: int = 1

    def __post_init__(self):
        n = self.c.shape[0]
        if self.eq_matrix.shape != (self.eq_rhs.shape[0], n):
            raise ValueError(
                f"equality matrix {self.eq_matrix.shape} for {n} variables "
                f"and {self.eq_rhs.shape[0]} rows"
            )
        for cone in self.cones:
            if cone.phi.shape != (cone.dim, n):
                raise ValueError(f"cone {cone.label} has map {cone.phi.shape}")

    @property
    def nvars(self) -> int:
        return self.c.shape[0]

    @property
    def neq(self) -> int:
        return self.eq_rhs.shape[0]

    @property
    def psd_sizes(self) -> tuple[int, ...]:
        return tuple(c.size for c in self.cones if c.kind == PSD)

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y + self.offset)


@dataclass
class ConicSolution:
    """
    Solver output; objectives are in the conic (minimization) sense.

    `eq_duals` holds one multiplier per equality row, `cone_duals` one dual
    matrix (PSD) or vector (orthant) per cone.
    """

    status: Status
    y: np.ndarray
    eq_duals: np.ndarray
    cone_duals: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    solver: str = ""
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def gap(self) -> float | None:
        return duality_gap(self)


def duality_gap(sol: ConicSolution) -> float | None:
    """|primal - dual| / max(1, |primal|); None unless the solve is optimal."""
    if sol.status != Status.OPTIMAL:
        return None
    p, d = sol.primal_objective, sol.dual_objective
    return abs(p - d) / max(1.0, abs(p))


def _row_matrix(
    rows: list[AffineRow], offsets: dict[str, int], positions, nvars: int
) -> tuple[sp.csr_matrix, np.ndarray]:
    r, c, v = [], [], []
    for i, row in enumerate(rows):
        for coef, owner, alpha in row.terms:
            r.append(i)
            c.append(offsets[owner] + positions(owner, alpha))
            v.append(coef)
    matrix = sp.coo_matrix((v, (r, c)), shape=(len(rows), nvars)).tocsr()
    matrix.sum_duplicates()
    return matrix, np.array([row.rhs for row in rows], dtype=float)


def to_standard_form(mp: MomentProgram) -> ConicProgram:
    """
    One variable per moment of every sequence (graded-lex within a
    sequence, sequences in declaration order), then the free scalars.
    """
    offsets: dict[str, int] = {}
    variables: list[tuple[str, tuple[int, ...]]] = []
    for name, seq in mp.sequences.items():
        offsets[name] = len(variables)
        variables.extend((name, alpha) for alpha in seq.basis)
    offsets[SCALAR_OWNER] = len(variables)
    variables.extend((SCALAR_OWNER, (i,)) for i in range(len(mp.scalars)))
    nvars = len(variables)

    def positions(owner: str, alpha) -> int:
        if owner == SCALAR_OWNER:
            return alpha[0]
        return mp.sequences[owner].position(alpha)

    c = np.zeros(nvars)
    for coef, owner, alpha in mp.objective:
        c[offsets[owner] + positions(owner, alpha)] += mp.sign * coef

    eq_matrix, eq_rhs = _row_matrix(list(mp.equalities), offsets, positions, nvars)

    cones = []
    for block in mp.blocks:
        rows, cols, vals = block.triplets()
        cols = cols + offsets[block.sequence.name]
        dim = block.size * block.size
        phi = sp.coo_matrix((vals, (rows, cols)), shape=(dim, nvars)).tocsr()
        phi.sum_duplicates()
        phi.eliminate_zeros()
        cones.append(ConeBlock(PSD, block.size, phi, np.zeros(dim), block.label))
    if mp.inequalities:
        g, rhs = _row_matrix(list(mp.inequalities), offsets, positions, nvars)
        cones.append(ConeBlock(NONNEGATIVE, g.shape[0], g, -rhs, "inequalities"))

    LOGGER.debug(
        "Standard form: %i variables, %i equalities, %i PSD blocks (largest %i)",
        nvars,
        eq_rhs.shape[0],
        len(mp.blocks),
        max((b.size for b in mp.blocks), default=0),
    )
    return ConicProgram(
        c=c,
        eq_matrix=eq_matrix,
        eq_rhs=eq_rhs,
        cones=tuple(cones),
        offset=mp.sign * mp.objective_constant,
        variables=tuple(variables),
        eq_tags=tuple(row.tag for row in mp.equalities),
        sense=mp.sign,
    )


def check_size_guard(sizes, limit: int) -> None:
    """Refuse PSD blocks larger than `limit`."""
    largest = max(sizes, default=0)
    if largest > limit:
        raise SizeGuardError(
            f"PSD block of size {largest} exceeds the size guard {limit}; "
            "use --sparse on or a lower degree (or raise --size-guard)"
        )
