"""
Trajectory simulation and sampled upper bounds on the distance.

Every distance reported here is attained by an actual pair (trajectory point,
unsafe point), so it bounds the true optimum from above and sandwiches the
moment lower bounds.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .datatype import Witness
from .errors import IntegrationError, ModelError, ResolutionError
from .poly import Polynomial, compile_polynomials
from .program import TIME, ObjectiveSpec, ProblemSpec
from .sets import Box, SemialgebraicSet, sample_points

LOGGER = logging.getLogger(__name__)

METRICS = {"l2sq": 2.0, "l4": 4.0, "l1": 1.0, "linf": math.inf, "l3": 3.0}


@dataclass(frozen=True)
class IntegrationControl:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    grid_points: int = 1001
    method: str = "RK45"

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError(f"grid_points must be at least 2, got {self.grid_points}")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("integration tolerances must be positive")


@dataclass(frozen=True)
class SamplingOptions:
    grid_per_dim: int = 200
    max_grid_points: int = 2_000_000
    descent_steps: int = 50
    switches: int = 20
    body_grid_per_dim: int = 9
    shape_time_points: int = 401
    batch: int = 100_000
    max_draws: int = 50_000_000


@dataclass
class TrajectorySample:
    x0: np.ndarray
    times: np.ndarray
    states: np.ndarray
    exited: bool = False
    distances: np.ndarray | None = None
    nearest: np.ndarray | None = None
    compared: np.ndarray | None = None
    body_points: np.ndarray | None = None

    @property
    def argmin(self) -> int:
        return int(np.argmin(self.distances))

    @property
    def min_distance(self) -> float:
        return float(self.distances[self.argmin])

    @property
    def argmin_time(self) -> float:
        return float(self.times[self.argmin])


def metric_for(objective: ObjectiveSpec) -> float | None:
    """Norm order matching the reported bound; None for a custom cost."""
    return METRICS.get(objective.kind)


def integrate(
    dynamics: Sequence[Polynomial],
    x0,
    horizon: float,
    ctrl: IntegrationControl | None = None,
    state_set: SemialgebraicSet | None = None,
    variables: Sequence[str] | None = None,
    parameters: Callable[[float], np.ndarray] | None = None,
) -> TrajectorySample:
    """
    Integrate x' = f(t, x[, h(t)]) on [0, T] with an adaptive RK45 scheme.

    Leaving the box of `state_set` stops the integration, and the record is
    cut at the first sample outside the set: exited segments never count.
    """
    ctrl = ctrl or IntegrationControl()
    x0 = np.asarray(x0, dtype=float)
    variables = tuple(variables) if variables is not None else dynamics[0].variables
    rhs_eval = compile_polynomials(dynamics, variables)

    def rhs(t, x):
        extra = parameters(t) if parameters is not None else ()
        return rhs_eval(np.concatenate(([t], x, extra)))

    events = None
    if state_set is not None and state_set.box is not None:
        bounds = np.array(state_set.box)

        def leave_box(t, x):
            return min(np.min(x - bounds[:, 0]), np.min(bounds[:, 1] - x))

        leave_box.terminal = True
        leave_box.direction = -1
        events = [leave_box]

    grid = np.linspace(0.0, horizon, ctrl.grid_points)
    solution = solve_ivp(
        rhs,
        (0.0, horizon),
        x0,
        method=ctrl.method,
        t_eval=grid,
        rtol=ctrl.rtol,
        atol=ctrl.atol,
        max_step=ctrl.max_step,
        events=events,
    )
    if solution.status == -1:
        raise IntegrationError(f"integration from {x0.tolist()} failed: {solution.message}")
    times, states = solution.t, solution.y.T
    exited = solution.status == 1
    if state_set is not None and times.size:
        inside = state_set.contains_many(states, tol=1e-7)
        if not inside.all():
            cut = int(np.argmin(inside))
            times, states = times[:cut], states[:cut]
            exited = True
    if exited:
        LOGGER.debug("Trajectory from %s left the state set at t=%.4g", x0, times[-1] if times.size else 0.0)
    return TrajectorySample(x0=x0, times=times, states=states, exited=exited)


def _pair_distance(x: np.ndarray, y: np.ndarray, metric: float) -> np.ndarray:
    return np.linalg.norm(x - y, ord=metric, axis=-1)


class PointSetDistance:
    """
    c(x; Xu) from a membership-filtered grid over the box of Xu, refined by
    coordinate descent. A norm metric uses a KD-tree; a custom cost c(x, y)
    is minimized by brute force over the grid.
    """

    def __init__(
        self,
        unsafe: SemialgebraicSet,
        metric: float | None = 2.0,
        options: SamplingOptions | None = None,
        fallback: Box | None = None,
        cost: Polynomial | None = None,
        variables: Sequence[str] | None = None,
    ):
        if metric is None and cost is None:
            raise ValueError("a metric or a cost is required")
        self.unsafe = unsafe
        self.metric = metric
        self.options = options or SamplingOptions()
        self.cost = None
        if metric is None:
            self.cost = compile_polynomials([cost], tuple(variables))
        bounds = np.array(unsafe.bounds(fallback), dtype=float)
        dim = unsafe.dimension
        per_dim = min(
            self.options.grid_per_dim,
            max(2, int(math.floor(self.options.max_grid_points ** (1.0 / dim)))),
        )
        axes = [np.linspace(lo, hi, per_dim) for lo, hi in bounds]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        self.points = mesh[unsafe.contains_many(mesh)]
        if self.points.shape[0] == 0:
            raise ResolutionError(
                f"no grid point of {per_dim} per dimension lies in the unsafe set; "
                "declare a tighter box for it"
            )
        self.spacing = (bounds[:, 1] - bounds[:, 0]) / (per_dim - 1)
        self.tree = cKDTree(self.points) if metric is not None else None
        LOGGER.debug("Unsafe grid with %i points (%i per dimension)", self.points.shape[0], per_dim)

    def _cost(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.metric is not None:
            return np.atleast_1d(_pair_distance(x, y, self.metric))
        x, y = np.broadcast_arrays(np.atleast_2d(x), np.atleast_2d(y))
        return self.cost(np.hstack([x, y]))[:, 0]

    def query(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Grid-level distances and nearest grid points for (k, n) points; 0 inside Xu."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.tree is not None:
            distances, index = self.tree.query(points, p=self.metric)
            nearest = self.points[index]
        else:
            distances = np.empty(points.shape[0])
            nearest = np.empty_like(points)
            for k, x in enumerate(points):
                values = self._cost(x, self.points)
                j = int(np.argmin(values))
                distances[k], nearest[k] = values[j], self.points[j]
        inside = self.unsafe.contains_many(points)
        if self.metric is not None and inside.any():
            distances = np.where(inside, 0.0, distances)
            nearest = np.where(inside[:, None], points, nearest)
        return np.asarray(distances, dtype=float), nearest

    def refine(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Coordinate descent on y within Xu, halving the step when stuck."""
        best = float(self._cost(x, y)[0])
        step = self.spacing.copy()
        y = np.array(y, dtype=float)
        for _ in range(self.options.descent_steps):
            improved = False
            for i in range(y.size):
                for sign in (1.0, -1.0):
                    candidate = y.copy()
                    candidate[i] += sign * step[i]
                    if not self.unsafe.contains(candidate):
                        continue
                    value = float(self._cost(x, candidate)[0])
                    if value < best:
                        best, y, improved = value, candidate, True
            if not improved:
                step /= 2
        return best, y

    def __call__(self, x) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        distances, nearest = self.query(x[None, :])
        if distances[0] == 0.0 and self.metric is not None:
            return 0.0, nearest[0]
        return self.refine(x, nearest[0])


def point_set_distance(
    x,
    unsafe: SemialgebraicSet,
    metric: float = 2.0,
    options: SamplingOptions | None = None,
    fallback: Box | None = None,
) -> float:
    """min over y in Xu of |x - y|_metric; an upper bound within grid resolution."""
    distance, _ = PointSetDistance(unsafe, metric, options, fallback)(x)
    return distance


def distance_oracle(problem: ProblemSpec, options: SamplingOptions | None = None) -> PointSetDistance:
    metric = metric_for(problem.objective)
    return PointSetDistance(
        problem.unsafe,
        metric,
        options,
        fallback=problem.coordinate_set.box,
        cost=problem.objective.cost if metric is None else None,
        variables=problem.cost_variables,
    )


def _parameter_schedule(problem: ProblemSpec, rng, options: SamplingOptions):
    """Piecewise-constant h(t) on `switches` equal segments, values drawn from H."""
    values = sample_points(
        problem.uncertainty, options.switches, rng, batch=1_000, max_draws=options.max_draws
    )
    if values.shape[0] < options.switches:
        raise ModelError("could not sample the uncertainty set")
    horizon = problem.horizon

    def schedule(t: float) -> np.ndarray:
        k = min(int(t / horizon * options.switches), options.switches - 1)
        return values[max(k, 0)]

    return schedule


def _body_grid(problem: ProblemSpec, options: SamplingOptions) -> np.ndarray:
    body = problem.shape.body
    axes = [np.linspace(lo, hi, options.body_grid_per_dim) for lo, hi in body.bounds()]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, body.dimension)
    return mesh[body.contains_many(mesh)]


def _measure(
    sample: TrajectorySample,
    problem: ProblemSpec,
    oracle: PointSetDistance,
    body: np.ndarray | None,
) -> TrajectorySample:
    """Distance to Xu at every recorded time (over the body grid in shape mode)."""
    if sample.times.size == 0:
        sample.distances = np.zeros(0)
        return sample
    if body is None:
        sample.compared = sample.states
        sample.distances, sample.nearest = oracle.query(sample.states)
        return sample
    shape = problem.shape
    transform = compile_polynomials(shape.transform, shape.body.variables + problem.states)
    k, m = sample.states.shape[0], body.shape[0]
    pairs = np.hstack([np.tile(body, (k, 1)), np.repeat(sample.states, m, axis=0)])
    moved = transform(pairs)
    distances, nearest = oracle.query(moved)
    best = distances.reshape(k, m).argmin(axis=1)
    rows = np.arange(k) * m + best
    sample.distances = distances[rows]
    sample.nearest = nearest[rows]
    sample.compared = moved[rows]
    sample.body_points = body[best]
    return sample


def sample_trajectories(
    problem: ProblemSpec,
    n: int,
    seed: int = 0,
    ctrl: IntegrationControl | None = None,
    options: SamplingOptions | None = None,
    jobs: int = 1,
) -> list[TrajectorySample]:
    """Trajectories from n initial points drawn in X0, with their distance profiles."""
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    options = options or SamplingOptions()
    ctrl = ctrl or IntegrationControl()
    rng = np.random.default_rng(seed)
    x0s = sample_points(
        problem.initial,
        n,
        rng,
        problem.state_set.box,
        batch=options.batch,
        max_draws=options.max_draws,
    )
    if x0s.shape[0] == 0:
        raise ModelError("no initial point could be sampled in X0")
    schedules = [
        _parameter_schedule(problem, rng, options) if problem.uncertainty is not None else None
        for _ in range(x0s.shape[0])
    ]
    oracle = distance_oracle(problem, options)
    body = None
    if problem.shape is not None:
        body = _body_grid(problem, options)
        ctrl = replace(ctrl, grid_points=options.shape_time_points)

    def run(k: int) -> TrajectorySample:
        sample = integrate(
            problem.dynamics,
            x0s[k],
            problem.horizon,
            ctrl,
            problem.state_set,
            problem.dynamic_variables,
            schedules[k],
        )
        return _measure(sample, problem, oracle, body)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(run, range(x0s.shape[0])))
    else:
        samples = [run(k) for k in range(x0s.shape[0])]
    LOGGER.info("Simulated %i trajectories of %s", len(samples), problem.name)
    return samples


def sample_upper_bound(
    problem: ProblemSpec,
    n: int,
    seed: int = 0,
    ctrl: IntegrationControl | None = None,
    options: SamplingOptions | None = None,
    samples: list[TrajectorySample] | None = None,
) -> tuple[float, Witness]:
    """
    Smallest simulated distance over n trajectories, refined at its minimizer.

    Deterministic per seed. In uncertain mode h(t) is sampled, so the value is
    empirical rather than a bound on the adversarial optimum.
    """
    options = options or SamplingOptions()
    if samples is None:
        samples = sample_trajectories(problem, n, seed, ctrl, options)
    candidates = [s for s in samples if s.times.size]
    if not candidates:
        raise ModelError("every sampled trajectory starts outside the state set")
    best = min(candidates, key=lambda s: s.min_distance)
    oracle = distance_oracle(problem, options)
    k = best.argmin
    distance, nearest = float(best.distances[k]), best.nearest[k]
    if distance > 0:
        distance, nearest = oracle.refine(best.compared[k], nearest)
    witness = Witness(
        x0=best.x0.tolist(),
        time=float(best.times[k]),
        state=best.states[k].tolist(),
        point=best.compared[k].tolist(),
        unsafe_point=np.asarray(nearest).tolist(),
        distance=distance,
        body_point=None if best.body_points is None else best.body_points[k].tolist(),
    )
    LOGGER.info("Sampled upper bound %.6g at t=%.4g", distance, witness.time)
    return distance, witness


def _plane_grid(problem: ProblemSpec, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Points over the first two coordinates of the box, the rest at its centre."""
    box = np.array(problem.coordinate_set.bounds(), dtype=float)
    if box.shape[0] < 2:
        raise ModelError("plot grids need at least two coordinates")
    xs = np.linspace(box[0, 0], box[0, 1], resolution)
    ys = np.linspace(box[1, 0], box[1, 1], resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.tile(box.mean(axis=1), (resolution * resolution, 1))
    points[:, 0], points[:, 1] = gx.ravel(), gy.ravel()
    return xs, ys, points


def distance_grid(
    problem: ProblemSpec, resolution: int = 101, options: SamplingOptions | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Point-set distance (grid level) over the coordinate box."""
    xs, ys, points = _plane_grid(problem, resolution)
    distances, _ = distance_oracle(problem, options).query(points)
    return xs, ys, distances.reshape(resolution, resolution)


def safety_grid(
    problem: ProblemSpec, resolution: int = 101, scales: Sequence[float] | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """min_i s_i p_i(x) over the coordinate box for Xu = {p_i >= 0}."""
    constraints = problem.unsafe.constraints
    if not constraints:
        raise ModelError("the unsafe set has no inequality constraints")
    scales = np.ones(len(constraints)) if scales is None else np.asarray(scales, dtype=float)
    if scales.shape != (len(constraints),) or np.any(scales <= 0):
        raise ValueError(f"need {len(constraints)} positive scales, got {scales}")
    xs, ys, points = _plane_grid(problem, resolution)
    values = compile_polynomials(constraints, problem.coordinates)(points) * scales
    return xs, ys, values.min(axis=1).reshape(resolution, resolution)


def write_trajectories_csv(
    samples: Sequence[TrajectorySample], path: str | Path, variables: Sequence[str]
) -> None:
    """Columns: sample, t, one per state, distance."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample", TIME, *variables, "distance"])
        for k, sample in enumerate(samples):
            distances = sample.distances if sample.distances is not None else np.full(sample.times.size, np.nan)
            for t, x, dist in zip(sample.times, sample.states, distances):
                writer.writerow([k, repr(float(t)), *(repr(float(v)) for v in x), repr(float(dist))])


def write_grid_csv(
    path: str | Path, xs: np.ndarray, ys: np.ndarray, values: np.ndarray, names: Sequence[str], label: str
) -> None:
    """Long format: one row per grid node (names[0], names[1], label)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([names[0], names[1], label])
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                writer.writerow([repr(float(x)), repr(float(y)), repr(float(values[i, j]))])
