"""
Correlative sparsity for separable distance costs.

The joint measure eta over (x, y) is split into n clique measures over

    I_i = (x_i, ..., x_n, y_1, ..., y_i)

which satisfy the running intersection property. Consecutive cliques agree
on the moments of their shared variables, eta_1 carries every state (and so
links to the peak measure), eta_n carries every unsafe coordinate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

from .errors import ModelError
from .moments import AffineRow, MomentSequence, measure_block
from .poly import monomial_basis
from .program import (
    MomentProgram,
    ProblemSpec,
    complete_objective,
    dynamics_part,
    marginal_rows,
    scaled_context,
)
from .sets import SemialgebraicSet, box_set, outer_box, product

LOGGER = logging.getLogger(__name__)

SPARSE_MODES = ("auto", "on", "off")


@dataclass(frozen=True)
class CliqueDecomposition:
    """Cliques I_j and the constraint groups J_j assigned to them."""

    cliques: tuple[tuple[str, ...], ...]
    constraints: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "cliques", tuple(tuple(c) for c in self.cliques))
        object.__setattr__(self, "constraints", tuple(tuple(c) for c in self.constraints))
        if len(self.constraints) != len(self.cliques):
            raise ValueError("one constraint group per clique is required")

    def __len__(self) -> int:
        return len(self.cliques)

    @property
    def variables(self) -> tuple[str, ...]:
        seen: list[str] = []
        for clique in self.cliques:
            seen.extend(v for v in clique if v not in seen)
        return tuple(seen)

    def shared(self, i: int) -> tuple[str, ...]:
        """Variables of clique i also in clique i + 1, in clique i's order."""
        following = set(self.cliques[i + 1])
        return tuple(v for v in self.cliques[i] if v in following)


def csp_cliques(
    n: int,
    state_constraints: int = 0,
    unsafe_constraints: int = 0,
    states: Sequence[str] | None = None,
    unsafe: Sequence[str] | None = None,
) -> CliqueDecomposition:
    if n < 2:
        raise ModelError(f"correlative sparsity needs at least two states, got {n}")
    states = tuple(states) if states is not None else tuple(f"x{i}" for i in range(1, n + 1))
    unsafe = tuple(unsafe) if unsafe is not None else tuple(f"y{i}" for i in range(1, n + 1))
    if len(states) != n or len(unsafe) != n:
        raise ValueError(f"expected {n} state and unsafe names")
    cliques = [states[i:] + unsafe[: i + 1] for i in range(n)]
    groups: list[tuple[str, ...]] = [() for _ in range(n)]
    groups[0] = tuple(f"X{k}" for k in range(state_constraints))
    groups[-1] = tuple(f"Xu{k}" for k in range(unsafe_constraints))
    return CliqueDecomposition(tuple(cliques), tuple(groups))


def verify_rip(decomp: CliqueDecomposition) -> bool:
    """I_{k+1} and the union of I_1..I_k intersect inside a single earlier clique."""
    union: set[str] = set()
    for k, clique in enumerate(decomp.cliques):
        if k:
            overlap = set(clique) & union
            if not any(overlap <= set(decomp.cliques[s]) for s in range(k)):
                return False
        union |= set(clique)
    return True


def verify_coverage(
    decomp: CliqueDecomposition,
    variables: Sequence[str],
    cost_pairs: Sequence[tuple[str, str]] = (),
) -> bool:
    """Every variable lies in some clique and every cost pair shares one."""
    if set(variables) - set(decomp.variables):
        return False
    return all(
        any(x in clique and y in clique for clique in decomp.cliques) for x, y in cost_pairs
    )


def chordal_edge_count(n: int) -> int:
    """Fill edges added by the chordal extension of the x/y interaction graph."""
    return (n - 1) * n // 2


def use_sparse(mode: str, n: int, d: int) -> bool:
    """`auto` switches to cliques for n >= 3 at d >= 4."""
    if mode not in SPARSE_MODES:
        raise ValueError(f"unknown sparse mode {mode!r}, expected one of {SPARSE_MODES}")
    if mode == "on":
        return True
    if mode == "off":
        return False
    return n >= 3 and d >= 4


def _embed(beta, names: Sequence[str], target: Sequence[str]) -> tuple[int, ...]:
    exponent = dict(zip(names, beta))
    return tuple(exponent.get(v, 0) for v in target)


def _clique_support(
    i: int,
    clique: tuple[str, ...],
    n: int,
    state_set: SemialgebraicSet,
    unsafe_set: SemialgebraicSet,
    bounds: dict[str, tuple[float, float]],
) -> SemialgebraicSet:
    if i == 0:
        return product(state_set, box_set(clique[-1:], [bounds[clique[-1]]]))
    if i == n - 1:
        return product(box_set(clique[:1], [bounds[clique[0]]]), unsafe_set)
    return box_set(clique, [bounds[v] for v in clique])


def build_sparse_distance_program(problem: ProblemSpec, d: int) -> MomentProgram:
    """Degree-d relaxation with eta replaced by the clique measures eta_1..eta_n."""
    if problem.shape is not None:
        raise ModelError("the sparse program does not support shape mode")
    if d < 1:
        raise ModelError(f"relaxation degree must be at least 1, got {d}")
    n = len(problem.states)
    ctx = scaled_context(problem, "sparse")
    state_set, unsafe_set = ctx.sets["X"], ctx.sets["Xu"]
    decomp = csp_cliques(
        n,
        len(state_set.constraints),
        len(unsafe_set.constraints),
        problem.states,
        problem.unsafe_variables,
    )
    if not verify_rip(decomp):
        raise ModelError("clique ordering violates the running intersection property")

    bounds = dict(zip(problem.states, state_set.bounds()))
    unsafe_box = outer_box(problem.unsafe)
    if unsafe_box is None:
        raise ModelError(
            "the sparse relaxation needs a box, a ball or a ball-shaped inequality "
            "bounding the unsafe set"
        )
    bounds.update(zip(problem.unsafe_variables, ctx.unsafe.scaled_box(unsafe_box)))

    sequences, blocks, rows, dt = dynamics_part(ctx, d)
    names = [f"eta{i + 1}" for i in range(n)]
    for i, clique in enumerate(decomp.cliques):
        seq = MomentSequence(names[i], clique, 2 * d)
        sequences[names[i]] = seq
        support = _clique_support(i, clique, n, state_set, unsafe_set, bounds)
        b, r = measure_block(seq, support, d)
        blocks.extend(b)
        rows.extend(r)

    for i in range(n - 1):
        shared = decomp.shared(i)
        left, right = decomp.cliques[i], decomp.cliques[i + 1]
        for beta in monomial_basis(len(shared), 2 * d):
            rows.append(
                AffineRow(
                    (
                        (1.0, names[i], _embed(beta, shared, left)),
                        (-1.0, names[i + 1], _embed(beta, shared, right)),
                    ),
                    0.0,
                    ("overlap", i + 1, beta),
                )
            )
    rows.extend(marginal_rows(d, n, eta=names[0], trailing=1))

    pairs = tuple(
        (x, y, names[i]) for i, (x, y) in enumerate(zip(problem.states, problem.unsafe_variables))
    )
    ctx = replace(ctx, pairs=pairs)
    program = MomentProgram(
        sequences=sequences,
        equalities=tuple(rows),
        blocks=tuple(blocks),
        degree=d,
        tilde_degree=dt,
        context=ctx,
    )
    program = complete_objective(program, problem.objective)
    LOGGER.debug(
        "Sparse program d=%i with %i cliques: moment matrices %s",
        d,
        n,
        program.moment_matrix_sizes(),
    )
    return program
