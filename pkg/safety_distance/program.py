"""
Moment programs for distance, peak, safety-margin, uncertain and shape problems.

Measures and their moment sequences:

    mu0   initial measure on X0                       over x
    mup   peak measure on [0, 1] x X                  over (t, x)
    mu    occupation measure on [0, 1] x X [x H]      over (t, x[, h])
    eta   joint measure on X x Xu                     over (x, y)
    mus   shape measure on S x Omega                  over (s, omega)

Everything is assembled in unit-box coordinates (see `scaling`). Objectives
are attached last so polynomial costs and polyhedral lifts share the same
constraint skeleton.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatchError, ModelError, SizeGuardError
from .moments import (
    SCALAR_OWNER,
    AffineRow,
    MomentSequence,
    PsdBlockSpec,
    expectation_terms,
    measure_block,
)
from .poly import MultiIndex, Polynomial, ceil_half, lie_derivative, monomial_basis
from .scaling import (
    AffineMap,
    compose,
    scale_dynamics,
    scale_polynomial,
    scale_set,
)
from .sets import SemialgebraicSet, make_set, product

LOGGER = logging.getLogger(__name__)

TIME = "t"
MU0, MUP, MU, ETA, MUS = "mu0", "mup", "mu", "eta", "mus"

EVEN_KINDS = {"l2sq": 2, "l4": 4}
LIFTED_KINDS = {"l1": 1, "linf": 1, "l3": 3}
OBJECTIVE_KINDS = ("l2sq", "l4", "l1", "linf", "l3", "polynomial")


@dataclass(frozen=True)
class ObjectiveSpec:
    """
    Distance objective. `l2sq`/`l4` are solved as polynomial costs and
    reported through the p-th root; `l1`/`linf`/`l3` go through slack lifts;
    `polynomial` takes an arbitrary cost c(x, y).
    """

    kind: str = "l2sq"
    cost: Polynomial | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ModelError(f"unknown objective kind {self.kind!r}, expected one of {OBJECTIVE_KINDS}")
        if self.kind == "polynomial" and self.cost is None:
            raise ModelError("polynomial objective needs a cost")

    @property
    def lifted(self) -> bool:
        return self.kind in LIFTED_KINDS

    @property
    def power(self) -> int:
        return {"l2sq": 2, "l4": 4, "l3": 3}.get(self.kind, 1)

    def slack_count(self, n: int) -> int:
        if self.kind == "linf":
            return 1
        return n if self.lifted else 0

    def report(self, value: float) -> float:
        """Bound in distance units (root of the solved quantity for power costs)."""
        if value is None or not math.isfinite(value):
            return value
        if self.kind in EVEN_KINDS:
            return max(value, 0.0) ** (1.0 / self.power)
        if self.kind == "l3":
            return float(np.cbrt(value))
        return value


@dataclass(frozen=True)
class ShapeSpec:
    """
    A rigid body S moved by the orientation state omega.

    In shape mode the problem's states, initial set, state set and dynamics
    describe the orientation (omega, Omega0, Omega, f(t, omega)). `space` is
    the coordinate set X in which the body points A(s; omega) are compared
    with the unsafe set.
    """

    body: SemialgebraicSet
    space: SemialgebraicSet
    transform: tuple[Polynomial, ...]

    def __post_init__(self):
        object.__setattr__(self, "transform", tuple(self.transform))
        if len(self.transform) != self.space.dimension:
            raise DimensionMismatchError(
                f"transform has {len(self.transform)} components for "
                f"{self.space.dimension} coordinates"
            )

    @property
    def kappa(self) -> int:
        return max((a.degree for a in self.transform), default=1) or 1


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    states: tuple[str, ...]
    dynamics: tuple[Polynomial, ...]
    horizon: float
    initial: SemialgebraicSet
    state_set: SemialgebraicSet
    unsafe: SemialgebraicSet
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    uncertainty: SemialgebraicSet | None = None
    shape: ShapeSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if TIME in self.states or TIME in self.parameters:
            raise ModelError(f"{TIME!r} is reserved for time")
        if not self.horizon > 0:
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        if len(self.dynamics) != len(self.states):
            raise DimensionMismatchError(
                f"{len(self.dynamics)} dynamics components for {len(self.states)} states"
            )
        for label, s in (("initial", self.initial), ("state", self.state_set)):
            if s.variables != self.states:
                raise DimensionMismatchError(
                    f"{label} set over {s.variables}, states are {self.states}"
                )
        if self.unsafe.variables != self.coordinates:
            raise DimensionMismatchError(
                f"unsafe set over {self.unsafe.variables}, expected {self.coordinates}"
            )
        allowed = self.dynamic_variables
        object.__setattr__(
            self, "dynamics", tuple(f.embed(allowed) for f in self.dynamics)
        )
        if self.objective.cost is not None:
            object.__setattr__(
                self,
                "objective",
                replace(self.objective, cost=self.objective.cost.embed(self.cost_variables)),
            )

    @property
    def parameters(self) -> tuple[str, ...]:
        return self.uncertainty.variables if self.uncertainty is not None else ()

    @property
    def dynamic_variables(self) -> tuple[str, ...]:
        return (TIME,) + self.states + self.parameters

    @property
    def coordinates(self) -> tuple[str, ...]:
        return self.shape.space.variables if self.shape is not None else self.states

    @property
    def coordinate_set(self) -> SemialgebraicSet:
        return self.shape.space if self.shape is not None else self.state_set

    @property
    def unsafe_variables(self) -> tuple[str, ...]:
        reserved = self.states + self.parameters
        if self.shape is not None:
            reserved += self.shape.body.variables
        return unsafe_names(self.coordinates, reserved)

    @property
    def cost_variables(self) -> tuple[str, ...]:
        return self.coordinates + self.unsafe_variables

    @property
    def dynamics_degree(self) -> int:
        return max((f.degree for f in self.dynamics), default=1)

    @property
    def mode(self) -> str:
        if self.shape is not None:
            return "shape"
        if self.uncertainty is not None:
            return "uncertain"
        return "distance"

    def cost(self) -> Polynomial | None:
        if self.objective.kind == "polynomial":
            return self.objective.cost
        return objective_cost(self.objective.kind, self.coordinates, self.unsafe_variables)


def unsafe_names(coordinates: Sequence[str], reserved: Sequence[str] = ()) -> tuple[str, ...]:
    """Names of the unsafe-point copy of the coordinates: y1, y2, ... unless taken."""
    taken = set(coordinates) | set(reserved) | {TIME}
    names = []
    for i, name in enumerate(coordinates, start=1):
        candidate = f"y{i}"
        if candidate in taken:
            candidate = f"{name}_y"
        while candidate in taken:
            candidate += "_"
        taken.add(candidate)
        names.append(candidate)
    return tuple(names)


def objective_cost(
    kind: str, states: Sequence[str], unsafe: Sequence[str] | None = None
) -> Polynomial | None:
    """sum (x_i - y_i)^p for the even kinds; None for lifted kinds."""
    if kind not in EVEN_KINDS:
        return None
    states = tuple(states)
    unsafe = tuple(unsafe) if unsafe is not None else unsafe_names(states)
    variables = states + unsafe
    total = Polynomial.zero(variables)
    for x, y in zip(states, unsafe):
        diff = Polynomial.variable(x, variables) - Polynomial.variable(y, variables)
        total = total + diff ** EVEN_KINDS[kind]
    return total


@dataclass(frozen=True, eq=False)
class ProgramContext:
    """Scaling data and scaled sets needed to interpret a solved program."""

    problem: ProblemSpec
    kind: str
    horizon: float
    states: AffineMap
    coordinates: AffineMap
    unsafe: AffineMap
    parameters: AffineMap | None
    body: AffineMap | None
    dynamics: tuple[Polynomial, ...]
    sets: Mapping[str, SemialgebraicSet]
    # (x name, y name, owning sequence) per coordinate pair
    pairs: tuple[tuple[str, str, str], ...] = ()

    @property
    def cost_map(self) -> AffineMap:
        return compose(self.coordinates, self.unsafe)

    def affine_map(self, variables: Sequence[str]) -> AffineMap:
        """Scaling of any block of program variables; time maps [0, 1] onto [0, T]."""
        known: dict[str, tuple[float, float]] = {TIME: (0.0, self.horizon)}
        for m in (self.states, self.coordinates, self.unsafe, self.parameters, self.body):
            if m is not None:
                for v, c, s in zip(m.variables, m.center, m.scale):
                    known.setdefault(v, (c, s))
        missing = [v for v in variables if v not in known]
        if missing:
            raise DimensionMismatchError(f"no scaling known for {missing}")
        return AffineMap(
            tuple(variables),
            tuple(known[v][0] for v in variables),
            tuple(known[v][1] for v in variables),
        )


@dataclass(frozen=True, eq=False)
class MomentProgram:
    sequences: Mapping[str, MomentSequence]
    equalities: tuple[AffineRow, ...]
    blocks: tuple[PsdBlockSpec, ...]
    inequalities: tuple[AffineRow, ...] = ()
    objective: tuple[tuple[float, str, MultiIndex], ...] = ()
    objective_constant: float = 0.0
    sense: str = "min"
    scalars: tuple[str, ...] = ()
    scalar_values: np.ndarray | None = None
    degree: int = 1
    tilde_degree: int = 1
    context: ProgramContext | None = None

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ModelError(f"unknown objective sense {self.sense!r}")
        known = set(self.sequences) | {SCALAR_OWNER}
        for row in (*self.equalities, *self.inequalities):
            for _, owner, _ in row.terms:
                if owner not in known:
                    raise ModelError(f"row {row.tag} references unknown sequence {owner}")

    @property
    def sign(self) -> int:
        return 1 if self.sense == "min" else -1

    @property
    def solved(self) -> bool:
        return all(seq.solved for seq in self.sequences.values())

    @property
    def max_block_size(self) -> int:
        return max((b.size for b in self.blocks), default=0)

    def moment_matrix_sizes(self) -> dict[str, int]:
        """Size of the moment matrix of each sequence."""
        sizes = {}
        for block in self.blocks:
            if block.label.endswith(":moment"):
                sizes[block.sequence.name] = block.size
        return sizes

    def with_objective(
        self,
        terms,
        constant: float = 0.0,
        sense: str = "min",
        inequalities: tuple[AffineRow, ...] = (),
        scalars: tuple[str, ...] = (),
    ) -> MomentProgram:
        return replace(
            self,
            objective=tuple(terms),
            objective_constant=constant,
            sense=sense,
            inequalities=self.inequalities + tuple(inequalities),
            scalars=self.scalars + tuple(scalars),
        )

    def with_solution(self, y: np.ndarray) -> MomentProgram:
        """Attach a variable vector laid out as by `to_standard_form`."""
        y = np.asarray(y, dtype=float)
        sequences = {}
        offset = 0
        for name, seq in self.sequences.items():
            size = len(seq.basis)
            sequences[name] = seq.with_values(y[offset : offset + size])
            offset += size
        blocks = tuple(replace(b, sequence=sequences[b.sequence.name]) for b in self.blocks)
        return replace(
            self,
            sequences=sequences,
            blocks=blocks,
            scalar_values=y[offset : offset + len(self.scalars)],
        )

    def objective_value(self) -> float:
        total = self.objective_constant
        for coef, owner, alpha in self.objective:
            if owner == SCALAR_OWNER:
                total += coef * float(self.scalar_values[alpha[0]])
            else:
                total += coef * self.sequences[owner].value(alpha)
        return total


def tilde_degree(d: int, deg_f: int) -> int:
    """Truncation degree of the occupation measure: d + ceil(deg f / 2) - 1."""
    return d + ceil_half(max(deg_f, 1)) - 1


def liouville_rows(
    f: Sequence[Polynomial],
    horizon: float,
    d: int,
    states: Sequence[str],
    parameters: Sequence[str] = (),
    limit: int | None = None,
) -> list[AffineRow]:
    """
    <x^a>_mu0 [b = 0] + <L_f (t^b x^a)>_mu - <t^b x^a>_mup = 0 for |(b, a)| <= 2d.

    `f` is written in real time over (t, states, parameters); time is mapped
    to [0, 1] here, so the occupation measure carries the factor T. Test
    monomials whose Lie derivative exceeds `limit` (the occupation
    truncation) are left out; this only happens for even deg f.
    """
    states, parameters = tuple(states), tuple(parameters)
    variables = (TIME,) + states + parameters
    time = {TIME: horizon * Polynomial.variable(TIME, (TIME,))}
    scaled = [fi.embed(variables).substitute(time, variables) * horizon for fi in f]
    pad = (0,) * len(parameters)
    rows = []
    skipped = 0
    for index in monomial_basis(len(states) + 1, 2 * d):
        beta, alpha = index[0], index[1:]
        test = Polynomial.monomial(index + pad, variables)
        derivative = lie_derivative(test, scaled, states, TIME)
        if limit is not None and derivative.degree > limit:
            skipped += 1
            continue
        terms: list[tuple[float, str, MultiIndex]] = []
        if beta == 0:
            terms.append((1.0, MU0, alpha))
        terms.extend((c, MU, gamma) for gamma, c in derivative.terms.items())
        terms.append((-1.0, MUP, index))
        rows.append(AffineRow(tuple(terms), 0.0, ("liouville", index)))
    if skipped:
        LOGGER.debug("Dropped %i Liouville test monomials beyond degree %i", skipped, limit)
    return rows


def marginal_rows(
    d: int, n: int, eta: str = ETA, trailing: int | None = None
) -> list[AffineRow]:
    """<x^a>_eta = <x^a>_mup for |a| <= 2d (y and t marginalized out)."""
    pad = (0,) * (n if trailing is None else trailing)
    return [
        AffineRow(((1.0, eta, alpha + pad), (-1.0, MUP, (0,) + alpha)), 0.0, ("marginal", alpha))
        for alpha in monomial_basis(n, 2 * d)
    ]


def normalization_row(n: int) -> AffineRow:
    """mu0 is a probability measure."""
    return AffineRow(((1.0, MU0, (0,) * n),), 1.0, ("normalization",))


def scaled_context(problem: ProblemSpec, kind: str) -> ProgramContext:
    if problem.state_set.box is None:
        raise ModelError("the state set needs a box for scaling")
    states = AffineMap.from_box(problem.states, problem.state_set.box)
    parameters = None
    others = {}
    sets = {}
    if problem.uncertainty is not None:
        if problem.uncertainty.box is None:
            raise ModelError("the uncertainty set needs a box for scaling")
        parameters = AffineMap.from_box(problem.parameters, problem.uncertainty.box)
        others = parameters.forward_substitution()
        sets["H"] = scale_set(problem.uncertainty, parameters)
    body = None
    if problem.shape is not None:
        space = problem.shape.space
        if space.box is None or problem.shape.body.box is None:
            raise ModelError("shape mode needs boxes on the body and coordinate sets")
        coordinates = AffineMap.from_box(space.variables, space.box)
        body = AffineMap.from_box(problem.shape.body.variables, problem.shape.body.box)
        sets["S"] = scale_set(problem.shape.body, body)
    else:
        coordinates = states
    unsafe = coordinates.renamed(problem.unsafe_variables)
    rename = dict(zip(problem.coordinates, problem.unsafe_variables))
    sets["X0"] = scale_set(problem.initial, states)
    sets["X"] = scale_set(problem.state_set, states)
    sets["coordinates"] = scale_set(problem.coordinate_set, coordinates)
    sets["Xu"] = scale_set(problem.unsafe.rename(rename), unsafe)
    dynamics = scale_dynamics(problem.dynamics, states, 1.0, others)
    pairs = tuple((x, y, ETA) for x, y in zip(problem.coordinates, problem.unsafe_variables))
    return ProgramContext(
        problem=problem,
        kind=kind,
        horizon=problem.horizon,
        states=states,
        coordinates=coordinates,
        unsafe=unsafe,
        parameters=parameters,
        body=body,
        dynamics=dynamics,
        sets=sets,
        pairs=pairs,
    )


def time_set() -> SemialgebraicSet:
    return make_set((TIME,), box=[(0.0, 1.0)])


def dynamics_part(
    ctx: ProgramContext, d: int
) -> tuple[dict[str, MomentSequence], list[PsdBlockSpec], list[AffineRow], int]:
    """mu0, mup and mu with their blocks, Liouville rows and normalization."""
    problem = ctx.problem
    dt = tilde_degree(d, max(f.degree for f in ctx.dynamics) if ctx.dynamics else 1)
    states, params = problem.states, problem.parameters
    sequences = {
        MU0: MomentSequence(MU0, states, 2 * d),
        MUP: MomentSequence(MUP, (TIME,) + states, 2 * d),
        MU: MomentSequence(MU, (TIME,) + states + params, 2 * dt),
    }
    occupation_support = product(time_set(), ctx.sets["X"])
    if "H" in ctx.sets:
        occupation_support = product(occupation_support, ctx.sets["H"])
    blocks, rows = [], []
    for seq, support, degree in (
        (sequences[MU0], ctx.sets["X0"], d),
        (sequences[MUP], product(time_set(), ctx.sets["X"]), d),
        (sequences[MU], occupation_support, dt),
    ):
        b, r = measure_block(seq, support, degree)
        blocks.extend(b)
        rows.extend(r)
    rows.extend(liouville_rows(ctx.dynamics, ctx.horizon, d, states, params, limit=2 * dt))
    rows.append(normalization_row(len(states)))
    return sequences, blocks, rows, dt


def _distance_skeleton(problem: ProblemSpec, d: int) -> MomentProgram:
    if d < 1:
        raise ModelError(f"relaxation degree must be at least 1, got {d}")
    ctx = scaled_context(problem, problem.mode)
    sequences, blocks, rows, dt = dynamics_part(ctx, d)
    eta = MomentSequence(ETA, problem.coordinates + problem.unsafe_variables, 2 * d)
    sequences[ETA] = eta
    b, r = measure_block(eta, product(ctx.sets["coordinates"], ctx.sets["Xu"]), d)
    blocks.extend(b)
    rows.extend(r)
    rows.extend(marginal_rows(d, len(problem.states)))
    return MomentProgram(
        sequences=sequences,
        equalities=tuple(rows),
        blocks=tuple(blocks),
        degree=d,
        tilde_degree=dt,
        context=ctx,
    )


def complete_objective(program: MomentProgram, objective: ObjectiveSpec) -> MomentProgram:
    if objective.lifted:
        return apply_polyhedral_lift(program, objective.kind)
    return with_polynomial_objective(program, program.context.problem.cost())


def build_distance_program(problem: ProblemSpec, d: int) -> MomentProgram:
    """Dense degree-d relaxation of the distance program."""
    if problem.shape is not None:
        return build_shape_program(problem, d)
    program = complete_objective(_distance_skeleton(problem, d), problem.objective)
    LOGGER.debug(
        "Distance program d=%i (d~=%i): moment matrices %s",
        d,
        program.tilde_degree,
        program.moment_matrix_sizes(),
    )
    return program


def build_uncertain_program(problem: ProblemSpec, d: int) -> MomentProgram:
    """Distance program with the occupation measure also ranging over H."""
    if problem.uncertainty is None:
        raise ModelError("problem has no uncertainty set")
    return build_distance_program(problem, d)


def _objective_owner(program: MomentProgram, variables: set[str]) -> MomentSequence:
    owners = {owner for _, _, owner in program.context.pairs}
    for name in program.sequences:
        if name in owners and variables <= set(program.sequences[name].variables):
            return program.sequences[name]
    raise ModelError(
        f"cost term in {sorted(variables)} does not fit a single clique; "
        "the sparse program needs a separable cost"
    )


def with_polynomial_objective(program: MomentProgram, cost: Polynomial) -> MomentProgram:
    """Minimize <c(x, y), eta> (split across cliques for sparse programs)."""
    ctx = program.context
    if cost is None:
        raise ModelError(f"objective {ctx.problem.objective.kind} has no polynomial cost")
    scaled = scale_polynomial(cost.embed(ctx.problem.cost_variables), ctx.cost_map)
    terms = []
    for alpha, coef in scaled.terms.items():
        used = {v for v, e in zip(scaled.variables, alpha) if e}
        owner = _objective_owner(program, used)
        monomial = Polynomial.monomial(alpha, scaled.variables, coef)
        terms.extend(expectation_terms(monomial.embed(owner.variables), owner))
    return program.with_objective(terms)


def apply_polyhedral_lift(program: MomentProgram, kind: str) -> MomentProgram:
    """
    Slack lift: -q_i <= <(x_i - y_i)^p>_eta <= q_i, minimizing sum q_i
    (a single shared q for linf).
    """
    if kind not in LIFTED_KINDS:
        raise ModelError(f"no polyhedral lift for objective kind {kind!r}")
    ctx = program.context
    power = LIFTED_KINDS[kind]
    variables = ctx.problem.cost_variables
    count = 1 if kind == "linf" else len(ctx.pairs)
    scalars = tuple(f"q{i + 1}" for i in range(count)) if count > 1 else ("q",)
    offset = len(program.scalars)
    rows = []
    for i, (x, y, owner) in enumerate(ctx.pairs):
        diff = Polynomial.variable(x, variables) - Polynomial.variable(y, variables)
        seq = program.sequences[owner]
        scaled = scale_polynomial(diff**power, ctx.cost_map).embed(seq.variables)
        q = (1.0, SCALAR_OWNER, (offset + (0 if kind == "linf" else i),))
        for sign in (1.0, -1.0):
            rows.append(
                AffineRow(
                    (q,) + tuple(expectation_terms(scaled, seq, -sign)),
                    0.0,
                    ("lift", kind, i, int(sign)),
                )
            )
    objective = [(1.0, SCALAR_OWNER, (offset + j,)) for j in range(count)]
    return program.with_objective(objective, inequalities=tuple(rows), scalars=scalars)


def build_peak_program(
    problem: ProblemSpec, p: Polynomial, d: int, sense: str = "min"
) -> MomentProgram:
    """Optimize <p, mup>: extreme value of p along trajectories within [0, T]."""
    ctx = scaled_context(problem, "peak")
    p = p.embed(problem.states)
    if p.degree > 2 * d:
        raise ModelError(f"peak objective of degree {p.degree} exceeds 2d = {2 * d}")
    sequences, blocks, rows, dt = dynamics_part(ctx, d)
    scaled = scale_polynomial(p, ctx.states).embed((TIME,) + problem.states)
    program = MomentProgram(
        sequences=sequences,
        equalities=tuple(rows),
        blocks=tuple(blocks),
        degree=d,
        tilde_degree=dt,
        context=ctx,
    )
    return program.with_objective(expectation_terms(scaled, sequences[MUP]), sense=sense)


@dataclass(frozen=True)
class MarginResult:
    """Per-constraint upper bounds on max p_i along trajectories, and their minimum."""

    margin: float
    branches: tuple[float, ...]
    constraints: tuple[str, ...]
    statuses: tuple[str, ...]

    @property
    def safe(self) -> bool:
        return math.isfinite(self.margin) and self.margin < 0


def safety_margin(problem: ProblemSpec, d: int, solver=None) -> MarginResult:
    """
    Xu = {p_i >= 0 for all i} is avoided when some p_i stays negative, so each
    branch bounds max p_i from above and the margin is the smallest bound.
    """
    from .solver import get_solver, to_standard_form

    if problem.shape is not None:
        raise ModelError("the safety margin is defined for unsafe sets over the states")
    constraints = problem.unsafe.inequalities
    if not constraints:
        raise ModelError("the unsafe set has no inequality constraints")
    solver = solver or get_solver()
    branches, statuses = [], []
    for g in constraints:
        program = build_peak_program(problem, g, d, sense="max")
        conic = to_standard_form(program)
        solution = solver.solve(conic)
        value = conic.sense * solution.primal_objective
        LOGGER.info("Peak of %s: %.6g (%s)", g, value, solution.status)
        branches.append(value)
        statuses.append(str(solution.status))
    return MarginResult(
        margin=min(branches),
        branches=tuple(branches),
        constraints=tuple(str(g) for g in constraints),
        statuses=tuple(statuses),
    )


def _scaled_transform(ctx: ProgramContext) -> tuple[Polynomial, ...]:
    """A(s; omega) in scaled body/orientation variables, mapped to scaled coordinates."""
    shape = ctx.problem.shape
    variables = shape.body.variables + ctx.problem.states
    replacements = dict(ctx.body.forward_substitution())
    replacements.update(ctx.states.forward_substitution())
    result = []
    for a, c, s in zip(shape.transform, ctx.coordinates.center, ctx.coordinates.scale):
        a = a.embed(variables).substitute(replacements, variables)
        result.append((a - c) / s)
    return tuple(result)


def build_shape_program(
    problem: ProblemSpec, d: int, size_guard: int | None = None
) -> MomentProgram:
    """
    Distance from a moving body: omega-marginals of mup and mus agree, and the
    coordinate marginal of eta is the pushforward of mus through A.
    """
    if problem.shape is None:
        raise ModelError("problem has no shape block")
    if d < 1:
        raise ModelError(f"relaxation degree must be at least 1, got {d}")
    shape = problem.shape
    kappa = shape.kappa
    shape_vars = shape.body.variables + problem.states
    shape_size = math.comb(len(shape_vars) + kappa * d, kappa * d)
    if size_guard is not None and shape_size > size_guard:
        raise SizeGuardError(
            f"shape moment matrix of size {shape_size} (kappa={kappa}, d={d}) "
            f"exceeds the size guard {size_guard}"
        )
    ctx = scaled_context(problem, "shape")
    sequences, blocks, rows, dt = dynamics_part(ctx, d)

    eta = MomentSequence(ETA, problem.coordinates + problem.unsafe_variables, 2 * d)
    mus = MomentSequence(MUS, shape_vars, 2 * kappa * d)
    sequences[ETA] = eta
    sequences[MUS] = mus
    for seq, support, degree in (
        (eta, product(ctx.sets["coordinates"], ctx.sets["Xu"]), d),
        (mus, product(ctx.sets["S"], ctx.sets["X"]), kappa * d),
    ):
        b, r = measure_block(seq, support, degree)
        blocks.extend(b)
        rows.extend(r)

    n_body = len(shape.body.variables)
    for beta in monomial_basis(len(problem.states), 2 * d):
        rows.append(
            AffineRow(
                ((1.0, MUS, (0,) * n_body + beta), (-1.0, MUP, (0,) + beta)),
                0.0,
                ("omega_marginal", beta),
            )
        )

    transform = _scaled_transform(ctx)
    ncoords = len(problem.coordinates)
    powers: dict[MultiIndex, Polynomial] = {
        (0,) * ncoords: Polynomial.constant(1.0, shape_vars)
    }
    for alpha in monomial_basis(ncoords, 2 * d):
        if alpha not in powers:
            j = next(i for i, e in enumerate(alpha) if e)
            lower = alpha[:j] + (alpha[j] - 1,) + alpha[j + 1 :]
            powers[alpha] = powers[lower] * transform[j]
        terms = ((1.0, ETA, alpha + (0,) * ncoords),) + tuple(
            expectation_terms(powers[alpha], mus, -1.0)
        )
        rows.append(AffineRow(terms, 0.0, ("pushforward", alpha)))

    program = MomentProgram(
        sequences=sequences,
        equalities=tuple(rows),
        blocks=tuple(blocks),
        degree=d,
        tilde_degree=dt,
        context=ctx,
    )
    program = complete_objective(program, problem.objective)
    LOGGER.debug("Shape program d=%i: moment matrices %s", d, program.moment_matrix_sizes())
    return program
