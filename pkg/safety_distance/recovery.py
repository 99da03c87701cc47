"""
Reading solutions back: rank diagnostics, atom extraction and dual certificates.

Atoms are read as first moments once the order-2 corner of a moment matrix
is numerically rank one. Certificates are assembled from the equality
multipliers of the marginal, Liouville and normalization rows, mapped back
to original units, and checked by sampling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, SolverError
from .moments import MomentSequence, instantiate, moment_matrix_spec
from .poly import Polynomial, compile_polynomials, lie_derivative
from .program import MU0, MUP, MUS, TIME, MomentProgram, ProblemSpec
from .scaling import AffineMap, unscale_polynomial
from .sets import SemialgebraicSet, sample_points
from .solver.conic import NONNEGATIVE, PSD, ConicProgram, ConicSolution

LOGGER = logging.getLogger(__name__)

RANK_THRESHOLD = 1e-2


def moment_corner(seq: MomentSequence, transform: AffineMap | None = None) -> np.ndarray:
    """
    Degree-1 moment matrix (moments of order 0 to 2), optionally in
    original units: with x = c + s x~ the corner maps as T M T'.
    """
    corner = instantiate(moment_matrix_spec(seq, 1))
    if transform is None:
        return corner
    n = seq.nvars
    t = np.zeros((n + 1, n + 1))
    t[0, 0] = 1.0
    t[1:, 0] = transform.center
    t[1:, 1:] = np.diag(transform.scale)
    return t @ corner @ t.T


def rank_one_check(
    seq: MomentSequence,
    transform: AffineMap | None = None,
    threshold: float = RANK_THRESHOLD,
) -> tuple[float, bool]:
    """lambda_2 / lambda_1 of the order-2 corner and whether it is below `threshold`."""
    if not seq.solved:
        raise ValueError(f"moment sequence {seq.name} is not solved")
    eigenvalues = np.linalg.eigvalsh(moment_corner(seq, transform))[::-1]
    if eigenvalues[0] <= 0:
        return math.inf, False
    ratio = float(max(eigenvalues[1], 0.0) / eigenvalues[0]) if eigenvalues.size > 1 else 0.0
    return ratio, ratio < threshold


@dataclass
class ExtractionReport:
    ratios: dict[str, float]
    threshold: float = RANK_THRESHOLD
    atoms: dict[str, list[float]] | None = None
    peak_time: float | None = None
    residual: float | None = None

    @property
    def passed(self) -> bool:
        return self.atoms is not None

    def to_dict(self) -> dict:
        return {
            "ratios": self.ratios,
            "threshold": self.threshold,
            "atoms": self.atoms,
            "peak_time": self.peak_time,
            "residual": self.residual,
        }


def _joint_sequences(program: MomentProgram) -> list[MomentSequence]:
    owners = {owner for _, _, owner in program.context.pairs}
    return [seq for name, seq in program.sequences.items() if name in owners]


def _means(program: MomentProgram, *sequences: MomentSequence) -> dict[str, float]:
    """Original-unit means per variable; earlier sequences win on shared variables."""
    means: dict[str, float] = {}
    for seq in sequences:
        values = program.context.affine_map(seq.variables).to_original(seq.first_moments())
        for v, value in zip(seq.variables, values):
            means.setdefault(v, float(value))
    return means


def extract_atoms(program: MomentProgram, threshold: float = RANK_THRESHOLD) -> ExtractionReport:
    """
    Near-optimal points from near-rank-one moment matrices: x0* from mu0,
    (t_p*, x_p*) from mup and (x*, y*) from the joint measure(s).
    """
    if not program.solved:
        raise ValueError("program has no solution attached")
    ctx = program.context
    problem = ctx.problem
    checked = [program.sequences[MU0], program.sequences[MUP], *_joint_sequences(program)]
    if MUS in program.sequences:
        checked.append(program.sequences[MUS])
    ratios, passed = {}, True
    for seq in checked:
        ratio, ok = rank_one_check(seq, ctx.affine_map(seq.variables), threshold)
        ratios[seq.name] = ratio
        passed &= ok
    report = ExtractionReport(ratios=ratios, threshold=threshold)
    if not passed:
        LOGGER.warning(
            "Rank check failed (ratios %s above %.1e); no atoms extracted",
            {k: f"{v:.2e}" for k, v in ratios.items()},
            threshold,
        )
        return report

    def pick(means, names):
        return [means[v] for v in names]

    initial = _means(program, program.sequences[MU0])
    peak = _means(program, program.sequences[MUP])
    joint = _means(program, *_joint_sequences(program))
    atoms = {
        "x0": pick(initial, problem.states),
        "xp": pick(peak, problem.states),
        "x": pick(joint, problem.coordinates),
        "y": pick(joint, problem.unsafe_variables),
    }
    if MUS in program.sequences:
        atoms["s"] = pick(_means(program, program.sequences[MUS]), problem.shape.body.variables)
    else:
        report.residual = float(np.linalg.norm(np.subtract(atoms["xp"], atoms["x"])))
    report.atoms = atoms
    report.peak_time = peak[TIME]
    return report


@dataclass
class Certificate:
    """
    Dual functions in original units: v(t, x) <= w(x) <= c(x, y) along the
    chain, with L_f v >= 0 and v(0, .) >= gamma on X0. Shape programs add
    z(omega) with w(A(s; omega)) >= z(omega) >= v(t, omega).
    """

    gamma: float
    w: Polynomial
    v: Polynomial
    cost: Polynomial
    degree: int
    bound: float
    z: Polynomial | None = None
    gram: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _multiplier_polynomial(
    duals: np.ndarray, tags, kind: str, variables: tuple[str, ...], sign: float = 1.0
) -> Polynomial:
    terms: dict[tuple[int, ...], float] = {}
    for lam, tag in zip(duals, tags):
        if tag and tag[0] == kind:
            alpha = tuple(tag[1])
            terms[alpha] = terms.get(alpha, 0.0) + sign * float(lam)
    return Polynomial(variables, terms)


def _effective_cost(program: MomentProgram, solution: ConicSolution, conic: ConicProgram) -> Polynomial:
    """Cost the dual certifies: c itself, or sum (k+ - k-) (x_i - y_i)^p for lifts."""
    problem = program.context.problem
    if not program.inequalities:
        return problem.cost()
    duals = next(
        np.ravel(x) for cone, x in zip(conic.cones, solution.cone_duals) if cone.kind == NONNEGATIVE
    )
    variables = problem.cost_variables
    power = problem.objective.power
    cost = Polynomial.zero(variables)
    for kappa, row in zip(duals, program.inequalities):
        _, _, i, sign = row.tag
        x, y, _ = program.context.pairs[i]
        diff = Polynomial.variable(x, variables) - Polynomial.variable(y, variables)
        cost = cost + (diff**power) * (sign * float(kappa))
    return cost


def extract_certificate(
    solution: ConicSolution, program: MomentProgram, conic: ConicProgram
) -> Certificate:
    """Dual polynomials of a solved distance program, unscaled to original units."""
    if not solution.optimal:
        raise SolverError(f"certificate needs an optimal solve, status is {solution.status}")
    ctx = program.context
    if ctx.kind == "peak":
        raise ModelError("certificates are extracted from distance programs")
    problem = ctx.problem
    duals, tags = solution.eq_duals, conic.eq_tags
    flow_vars = (TIME,) + problem.states

    gamma = float(sum(lam for lam, tag in zip(duals, tags) if tag[:1] == ("normalization",)))
    v_scaled = _multiplier_polynomial(duals, tags, "liouville", flow_vars, sign=-1.0)
    if MUS in program.sequences:
        w_scaled = _multiplier_polynomial(duals, tags, "pushforward", problem.coordinates)
        z_scaled = _multiplier_polynomial(duals, tags, "omega_marginal", problem.states)
        z = unscale_polynomial(z_scaled, ctx.states)
    else:
        w_scaled = _multiplier_polynomial(duals, tags, "marginal", problem.coordinates)
        z = None
    gram = {
        cone.label: np.reshape(x, (cone.size, cone.size))
        for cone, x in zip(conic.cones, solution.cone_duals)
        if cone.kind == PSD
    }
    return Certificate(
        gamma=gamma,
        w=unscale_polynomial(w_scaled, ctx.coordinates),
        v=unscale_polynomial(v_scaled, ctx.affine_map(flow_vars)),
        cost=_effective_cost(program, solution, conic),
        degree=program.degree,
        bound=conic.sense * solution.primal_objective,
        z=z,
        gram=gram,
    )


@dataclass
class ConditionCheck:
    description: str
    worst: float
    samples: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "worst": self.worst,
            "samples": self.samples,
            "passed": self.passed,
        }


@dataclass
class CertificateReport:
    conditions: dict[str, ConditionCheck] = field(default_factory=dict)
    tolerance: float = 1e-6
    skipped: str | None = None

    @property
    def passed(self) -> bool:
        return self.skipped is None and all(c.passed for c in self.conditions.values())

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "skipped": self.skipped,
            "passed": self.passed,
            "conditions": {k: c.to_dict() for k, c in self.conditions.items()},
        }


def _sample(s: SemialgebraicSet, count: int, rng, fallback) -> np.ndarray:
    points = sample_points(s, count, rng, fallback)
    if points.shape[0] == 0:
        raise ModelError(f"could not sample the set over {s.variables}")
    return points


def _sets_with_equalities(problem: ProblemSpec) -> list[str]:
    named = {
        "initial": problem.initial,
        "state": problem.state_set,
        "unsafe": problem.unsafe,
        "coordinates": problem.coordinate_set,
    }
    if problem.uncertainty is not None:
        named["uncertainty"] = problem.uncertainty
    if problem.shape is not None:
        named["body"] = problem.shape.body
    return [k for k, s in named.items() if s.all_equalities]


def verify_certificate(
    cert: Certificate,
    problem: ProblemSpec,
    samples: int = 10_000,
    tol: float = 1e-6,
    seed: int = 0,
) -> CertificateReport:
    """
    Sampled check of the dual inequalities; each condition reports the worst
    (smallest) value found, which must stay above -tol.
    """
    report = CertificateReport(tolerance=tol)
    thin = _sets_with_equalities(problem)
    if thin:
        report.skipped = f"sets with equality constraints cannot be sampled: {', '.join(thin)}"
        LOGGER.info("Certificate verification skipped: %s", report.skipped)
        return report
    rng = np.random.default_rng(seed)
    states_box = problem.state_set.box
    coord_box = problem.coordinate_set.box

    def check(name: str, description: str, values: np.ndarray):
        worst = float(np.min(values)) if values.size else math.inf
        report.conditions[name] = ConditionCheck(description, worst, int(values.size), worst >= -tol)
        if worst < -tol:
            LOGGER.warning("Certificate condition %s violated by %.3e", name, -worst)

    coordinates = _sample(problem.coordinate_set, samples, rng, coord_box)
    unsafe = _sample(problem.unsafe, coordinates.shape[0], rng, coord_box)
    count = min(coordinates.shape[0], unsafe.shape[0])
    pairs = np.hstack([coordinates[:count], unsafe[:count]])
    check(
        "cost_minus_w",
        "c(x, y) - w(x) >= 0 on X x Xu",
        cert.cost(pairs) - cert.w.embed(problem.cost_variables)(pairs),
    )

    states = _sample(problem.state_set, samples, rng, states_box)
    times = rng.uniform(0.0, problem.horizon, size=(states.shape[0], 1))
    flow = np.hstack([times, states])
    upper = cert.z if cert.z is not None else cert.w
    check(
        "w_minus_v",
        ("z(w) - v(t, w)" if cert.z is not None else "w(x) - v(t, x)") + " >= 0 on [0, T] x X",
        upper.embed(problem.states)(states) - cert.v(flow),
    )

    variables = problem.dynamic_variables
    derivative = lie_derivative(cert.v.embed(variables), problem.dynamics, problem.states, TIME)
    if problem.uncertainty is not None:
        params = _sample(problem.uncertainty, flow.shape[0], rng, problem.uncertainty.box)
        count = min(flow.shape[0], params.shape[0])
        flow_points = np.hstack([flow[:count], params[:count]])
    else:
        flow_points = flow
    check("lie_derivative", "L_f v >= 0 on [0, T] x X" + (" x H" if problem.parameters else ""), derivative(flow_points))

    initial = _sample(problem.initial, samples, rng, states_box)
    at_zero = np.hstack([np.zeros((initial.shape[0], 1)), initial])
    check("initial", "v(0, x) - gamma >= 0 on X0", cert.v(at_zero) - cert.gamma)

    if problem.shape is not None and cert.z is not None:
        shape = problem.shape
        body = _sample(shape.body, samples, rng, shape.body.box)
        orientation = states[: body.shape[0]]
        count = min(body.shape[0], orientation.shape[0])
        points = np.hstack([body[:count], orientation[:count]])
        moved = compile_polynomials(shape.transform, shape.body.variables + problem.states)(points)
        check(
            "shape",
            "w(A(s; w)) - z(w) >= 0 on S x Omega",
            cert.w(moved) - cert.z(orientation[:count]),
        )
    return report


def _polynomial_json(p: Polynomial | None) -> dict | None:
    if p is None:
        return None
    return {
        "variables": list(p.variables),
        "terms": [[list(alpha), coef] for alpha, coef in p.terms.items()],
    }


def certificate_to_json(cert: Certificate, report: CertificateReport | None = None) -> dict:
    """Coefficient lists in graded-lex order, plus the verification report."""
    out = {
        "degree": cert.degree,
        "bound": cert.bound,
        "gamma": cert.gamma,
        "w": _polynomial_json(cert.w),
        "v": _polynomial_json(cert.v),
        "z": _polynomial_json(cert.z),
        "cost": _polynomial_json(cert.cost),
        "gram_min_eigenvalues": {
            label: float(np.linalg.eigvalsh((g + g.T) / 2)[0]) for label, g in cert.gram.items()
        },
    }
    if report is not None:
        out["verification"] = report.to_dict()
    return out
