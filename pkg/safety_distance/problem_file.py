"""
JSON problem files.

    {
      "name": "flow_halfcircle",
      "variables": ["x1", "x2"],
      "dynamics": ["x2", "-x1 - x2 + x1^3/3"],
      "horizon": 5,
      "sets": {
        "initial": {"inequalities": ["0.16 - (x1 - 1.5)^2 - x2^2"], "box": [[1.1, 1.9], [-0.4, 0.4]]},
        "state": {"box": [[-2.5, 2.5], [-2.5, 2.5]], "ball": "auto"},
        "unsafe": {"inequalities": ["..."]}
      },
      "objective": {"kind": "l2sq"},
      "options": {"degree": 4},
      "uncertainty": {"variables": ["h"], "set": {"box": [[-0.25, 0.25]]}},
      "shape": {
        "body_variables": ["s1", "s2"], "body": {"box": [[-0.1, 0.1], [-0.1, 0.1]]},
        "coordinates": ["x1", "x2"], "space": {"box": [[-3, 3], [-3, 3]]},
        "transform": ["...", "..."]
      }
    }

A set is {"inequalities": [g >= 0, ...], "equalities": [h = 0, ...],
"box": [[lo, hi], ...], "ball": radius | "auto"}, optionally with "vars"
repeating its variable block; "ineq" and "eq" are accepted for the two
lists. In shape mode the variables, dynamics, initial and state sets
describe the orientation, and the unsafe set is written over the shape
coordinates. A custom cost is written over the coordinates and their unsafe
copies y1, y2, ...
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import PolynomialParseError, ProblemFileError
from .poly import Polynomial, parse_polynomial
from .program import OBJECTIVE_KINDS, TIME, ObjectiveSpec, ProblemSpec, ShapeSpec, unsafe_names
from .sets import SemialgebraicSet, make_set
from .sparsity import SPARSE_MODES

LOGGER = logging.getLogger(__name__)

TOP_KEYS = {"name", "variables", "dynamics", "horizon", "sets", "objective", "options", "uncertainty", "shape"}
REQUIRED_KEYS = ("name", "variables", "dynamics", "horizon", "sets")
SET_KEYS = {"vars", "inequalities", "ineq", "equalities", "eq", "box", "ball"}
# short spellings accepted for the constraint lists
SET_ALIASES = {"ineq": "inequalities", "eq": "equalities"}
SETS = ("initial", "state", "unsafe")


@dataclass(frozen=True)
class ProblemOptions:
    """Defaults carried by a problem file; CLI flags override them."""

    degree: int = 4
    degrees: tuple[int, int] | None = None
    sparse: str = "auto"
    solver: str = "interior-point"
    tolerance: float | None = None
    size_guard: int | None = None
    samples: int = 500
    seed: int = 0

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value != f.default:
                out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class ProblemFile:
    spec: ProblemSpec
    options: ProblemOptions
    path: Path | None = None


def _require(mapping: dict, key: str, where: str) -> Any:
    if key not in mapping:
        raise ProblemFileError(f"{where}.{key}" if where else key, "missing required key")
    return mapping[key]


def _check_keys(mapping: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(mapping, dict):
        raise ProblemFileError(where, f"expected an object, got {type(mapping).__name__}")
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ProblemFileError(where or "<root>", f"unknown keys {unknown}")
    return mapping


def _names(value: Any, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) and v.isidentifier() for v in value):
        raise ProblemFileError(where, "expected a list of identifiers")
    if len(set(value)) != len(value):
        raise ProblemFileError(where, "duplicate names")
    if TIME in value:
        raise ProblemFileError(where, f"{TIME!r} is reserved for time")
    return tuple(value)


def _polynomial(text: Any, variables: tuple[str, ...], where: str) -> Polynomial:
    try:
        return parse_polynomial(text, variables)
    except PolynomialParseError as exc:
        raise ProblemFileError(where, str(exc)) from exc


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProblemFileError(where, f"expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ProblemFileError(where, f"expected an integer >= {minimum}, got {value!r}")
    return value


def parse_set(data: Any, variables: tuple[str, ...], where: str) -> SemialgebraicSet:
    data = dict(_check_keys(data, SET_KEYS, where))
    for short, name in SET_ALIASES.items():
        if short in data:
            if name in data:
                raise ProblemFileError(f"{where}.{short}", f"given together with {name!r}")
            data[name] = data.pop(short)
    names = data.pop("vars", None)
    if names is not None and (not isinstance(names, list) or tuple(names) != variables):
        raise ProblemFileError(f"{where}.vars", f"expected {list(variables)}")
    inequalities = [
        _polynomial(g, variables, f"{where}.inequalities[{i}]")
        for i, g in enumerate(data.get("inequalities", []))
    ]
    equalities = [
        _polynomial(h, variables, f"{where}.equalities[{i}]")
        for i, h in enumerate(data.get("equalities", []))
    ]
    box = data.get("box")
    if box is not None:
        if not isinstance(box, list) or len(box) != len(variables):
            raise ProblemFileError(f"{where}.box", f"expected {len(variables)} [lo, hi] pairs")
        sides = []
        for i, side in enumerate(box):
            if not isinstance(side, list) or len(side) != 2:
                raise ProblemFileError(f"{where}.box[{i}]", "expected [lo, hi]")
            lo, hi = (_number(v, f"{where}.box[{i}]") for v in side)
            if lo > hi:
                raise ProblemFileError(f"{where}.box[{i}]", f"empty side [{lo}, {hi}]")
            sides.append((lo, hi))
        box = sides
    ball = data.get("ball")
    if ball is not None and ball != "auto":
        ball = _number(ball, f"{where}.ball")
        if ball <= 0:
            raise ProblemFileError(f"{where}.ball", "radius must be positive")
    if ball == "auto" and box is None:
        raise ProblemFileError(f"{where}.ball", "'auto' needs a box")
    return make_set(variables, inequalities, equalities, box, ball)


def _objective(data: Any, cost_variables: tuple[str, ...]) -> ObjectiveSpec:
    data = _check_keys(data, {"kind", "cost"}, "objective")
    kind = data.get("kind", "l2sq")
    if kind not in OBJECTIVE_KINDS:
        raise ProblemFileError("objective.kind", f"expected one of {list(OBJECTIVE_KINDS)}, got {kind!r}")
    cost = None
    if "cost" in data:
        if kind != "polynomial":
            raise ProblemFileError("objective.cost", "a cost is only read for kind 'polynomial'")
        cost = _polynomial(data["cost"], cost_variables, "objective.cost")
    elif kind == "polynomial":
        raise ProblemFileError("objective.cost", "kind 'polynomial' needs a cost")
    return ObjectiveSpec(kind, cost)


def _options(data: Any) -> ProblemOptions:
    data = _check_keys(data, {f.name for f in fields(ProblemOptions)}, "options")
    values: dict[str, Any] = {}
    if "degree" in data:
        values["degree"] = _integer(data["degree"], "options.degree", 1)
    if "degrees" in data:
        degrees = data["degrees"]
        if not isinstance(degrees, list) or len(degrees) != 2:
            raise ProblemFileError("options.degrees", "expected [first, last]")
        first, last = (_integer(d, "options.degrees", 1) for d in degrees)
        if first > last:
            raise ProblemFileError("options.degrees", f"empty range {first}..{last}")
        values["degrees"] = (first, last)
    if "sparse" in data:
        if data["sparse"] not in SPARSE_MODES:
            raise ProblemFileError("options.sparse", f"expected one of {list(SPARSE_MODES)}")
        values["sparse"] = data["sparse"]
    if "solver" in data:
        if not isinstance(data["solver"], str):
            raise ProblemFileError("options.solver", "expected a solver name")
        values["solver"] = data["solver"]
    if "tolerance" in data:
        values["tolerance"] = _number(data["tolerance"], "options.tolerance")
    if "size_guard" in data:
        values["size_guard"] = _integer(data["size_guard"], "options.size_guard", 1)
    if "samples" in data:
        values["samples"] = _integer(data["samples"], "options.samples", 1)
    if "seed" in data:
        values["seed"] = _integer(data["seed"], "options.seed")
    return ProblemOptions(**values)


def parse_problem(data: Any) -> ProblemFile:
    """Validate a decoded problem file; errors name the offending field."""
    data = _check_keys(data, TOP_KEYS, "")
    for key in REQUIRED_KEYS:
        _require(data, key, "")
    name = data["name"]
    if not isinstance(name, str) or not name:
        raise ProblemFileError("name", "expected a non-empty string")
    states = _names(data["variables"], "variables")

    parameters: tuple[str, ...] = ()
    uncertainty = None
    if "uncertainty" in data:
        block = _check_keys(data["uncertainty"], {"variables", "set"}, "uncertainty")
        parameters = _names(_require(block, "variables", "uncertainty"), "uncertainty.variables")
        uncertainty = parse_set(_require(block, "set", "uncertainty"), parameters, "uncertainty.set")

    shape = None
    coordinates = states
    if "shape" in data:
        block = _check_keys(
            data["shape"], {"body_variables", "body", "coordinates", "space", "transform"}, "shape"
        )
        body_vars = _names(_require(block, "body_variables", "shape"), "shape.body_variables")
        coordinates = _names(_require(block, "coordinates", "shape"), "shape.coordinates")
        body = parse_set(_require(block, "body", "shape"), body_vars, "shape.body")
        space = parse_set(_require(block, "space", "shape"), coordinates, "shape.space")
        transform = _require(block, "transform", "shape")
        if not isinstance(transform, list) or len(transform) != len(coordinates):
            raise ProblemFileError("shape.transform", f"expected {len(coordinates)} expressions")
        shape = ShapeSpec(
            body,
            space,
            tuple(
                _polynomial(a, body_vars + states, f"shape.transform[{i}]")
                for i, a in enumerate(transform)
            ),
        )
    blocks = states + parameters
    if shape is not None:
        blocks += coordinates + shape.body.variables
    if len(set(blocks)) != len(blocks):
        raise ProblemFileError("variables", "variable blocks must use distinct names")

    dynamics = data["dynamics"]
    if not isinstance(dynamics, list) or len(dynamics) != len(states):
        raise ProblemFileError("dynamics", f"expected {len(states)} expressions")
    dynamic_vars = (TIME,) + states + parameters
    dynamics = tuple(
        _polynomial(f, dynamic_vars, f"dynamics[{i}]") for i, f in enumerate(dynamics)
    )
    horizon = _number(data["horizon"], "horizon")
    if horizon <= 0:
        raise ProblemFileError("horizon", "must be positive")

    sets = _check_keys(data["sets"], set(SETS), "sets")
    for key in SETS:
        _require(sets, key, "sets")
    initial = parse_set(sets["initial"], states, "sets.initial")
    state_set = parse_set(sets["state"], states, "sets.state")
    if state_set.box is None:
        raise ProblemFileError("sets.state.box", "the state set needs a box")
    unsafe = parse_set(sets["unsafe"], coordinates, "sets.unsafe")

    reserved = states + parameters + (shape.body.variables if shape is not None else ())
    cost_variables = coordinates + unsafe_names(coordinates, reserved)
    objective = _objective(data.get("objective", {}), cost_variables)
    options = _options(data.get("options", {}))

    spec = ProblemSpec(
        name=name,
        states=states,
        dynamics=dynamics,
        horizon=horizon,
        initial=initial,
        state_set=state_set,
        unsafe=unsafe,
        objective=objective,
        uncertainty=uncertainty,
        shape=shape,
    )
    return ProblemFile(spec, options)


def loads_problem(text: str) -> ProblemFile:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    return parse_problem(data)


def load_problem(path: str | Path) -> ProblemFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(str(path), exc.strerror or str(exc)) from exc
    problem = loads_problem(text)
    LOGGER.debug("Loaded problem %s from %s", problem.spec.name, path)
    return ProblemFile(problem.spec, problem.options, path)


def set_to_dict(s: SemialgebraicSet) -> dict:
    out: dict[str, Any] = {}
    if s.inequalities:
        out["inequalities"] = [g.to_string() for g in s.inequalities]
    if s.equalities:
        out["equalities"] = [h.to_string() for h in s.equalities]
    if s.box is not None:
        out["box"] = [list(side) for side in s.box]
    if s.ball_radius is not None:
        out["ball"] = s.ball_radius
    return out


def problem_to_dict(spec: ProblemSpec, options: ProblemOptions | None = None) -> dict:
    """Canonical form: parsing it back yields an equal ProblemSpec."""
    out: dict[str, Any] = {
        "name": spec.name,
        "variables": list(spec.states),
        "dynamics": [f.to_string() for f in spec.dynamics],
        "horizon": spec.horizon,
        "sets": {
            "initial": set_to_dict(spec.initial),
            "state": set_to_dict(spec.state_set),
            "unsafe": set_to_dict(spec.unsafe),
        },
        "objective": {"kind": spec.objective.kind},
    }
    if spec.objective.cost is not None:
        out["objective"]["cost"] = spec.objective.cost.to_string()
    if spec.uncertainty is not None:
        out["uncertainty"] = {
            "variables": list(spec.parameters),
            "set": set_to_dict(spec.uncertainty),
        }
    if spec.shape is not None:
        out["shape"] = {
            "body_variables": list(spec.shape.body.variables),
            "body": set_to_dict(spec.shape.body),
            "coordinates": list(spec.coordinates),
            "space": set_to_dict(spec.shape.space),
            "transform": [a.to_string() for a in spec.shape.transform],
        }
    if options is not None and options.to_dict():
        out["options"] = options.to_dict()
    return out


def dumps_problem(spec: ProblemSpec, options: ProblemOptions | None = None) -> str:
    return json.dumps(problem_to_dict(spec, options), indent=2) + "\n"
