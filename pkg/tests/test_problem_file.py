import copy
import json

import pytest

from safety_distance.errors import ProblemFileError
from safety_distance.problem_file import (
    ProblemOptions,
    dumps_problem,
    load_problem,
    loads_problem,
    parse_problem,
)

MINIMAL = {
    "name": "decay",
    "variables": ["x"],
    "dynamics": ["-x"],
    "horizon": 2,
    "sets": {
        "initial": {"box": [[0.5, 1.0]]},
        "state": {"box": [[-1, 1]]},
        "unsafe": {"inequalities": ["-x - 0.5"]},
    },
}


def with_changes(**changes):
    data = copy.deepcopy(MINIMAL)
    data.update(changes)
    return data


@pytest.mark.parametrize(
    "name",
    [
        "flow_halfcircle",
        "flow_l1",
        "flow_moon",
        "flow_uncertain",
        "twist",
        "twist_l4",
        "shape_translate",
        "shape_rotate",
    ],
)
def test_bundled_problems_load_and_round_trip(problems_dir, name):
    problem = load_problem(problems_dir / f"{name}.json")
    assert problem.spec.name == name
    assert problem.path.name == f"{name}.json"
    again = loads_problem(dumps_problem(problem.spec, problem.options))
    assert again.spec == problem.spec
    assert again.options == problem.options


def test_minimal_problem_defaults():
    problem = parse_problem(MINIMAL)
    assert problem.options == ProblemOptions()
    assert problem.spec.objective.kind == "l2sq"
    assert problem.spec.mode == "distance"
    assert problem.spec.initial.box == ((0.5, 1.0),)


def test_options_are_read():
    problem = parse_problem(
        with_changes(options={"degree": 3, "degrees": [1, 4], "sparse": "off", "size_guard": 50})
    )
    assert problem.options.degrees == (1, 4)
    assert problem.options.to_dict() == {
        "degree": 3,
        "degrees": [1, 4],
        "sparse": "off",
        "size_guard": 50,
    }


def test_short_set_keys():
    data = copy.deepcopy(MINIMAL)
    data["sets"]["unsafe"] = {"vars": ["x"], "ineq": ["-x - 0.5"]}
    data["sets"]["state"] = {"vars": ["x"], "eq": [], "box": [[-1, 1]]}
    assert parse_problem(data).spec == parse_problem(MINIMAL).spec


def test_custom_cost_uses_unsafe_names():
    data = with_changes(objective={"kind": "polynomial", "cost": "(x - y1)^2"})
    spec = parse_problem(data).spec
    assert spec.objective.cost.variables == ("x", "y1")


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"extra": 1}, "<root>"),
        ({"horizon": 0}, "horizon"),
        ({"horizon": "long"}, "horizon"),
        ({"variables": ["x", "x"]}, "variables"),
        ({"variables": ["t"]}, "variables"),
        ({"dynamics": ["-x", "x"]}, "dynamics"),
        ({"dynamics": ["-x +"]}, "dynamics[0]"),
        ({"dynamics": ["-z"]}, "dynamics[0]"),
        ({"objective": {"kind": "l7"}}, "objective.kind"),
        ({"objective": {"kind": "polynomial"}}, "objective.cost"),
        ({"objective": {"kind": "l2sq", "cost": "x"}}, "objective.cost"),
        ({"options": {"degree": 0}}, "options.degree"),
        ({"options": {"degrees": [4, 2]}}, "options.degrees"),
        ({"options": {"sparse": "maybe"}}, "options.sparse"),
        ({"options": {"verbose": True}}, "options"),
    ],
)
def test_field_errors(changes, field):
    with pytest.raises(ProblemFileError) as info:
        parse_problem(with_changes(**changes))
    assert info.value.field == field


@pytest.mark.parametrize(
    "sets, field",
    [
        ({"state": {}}, "sets.state.box"),
        ({"state": {"box": [[1, -1]]}}, "sets.state.box[0]"),
        ({"state": {"box": [[-1, 1], [0, 1]]}}, "sets.state.box"),
        ({"initial": {"ball": "auto"}}, "sets.initial.ball"),
        ({"initial": {"ball": -1}}, "sets.initial.ball"),
        ({"initial": {"shape": []}}, "sets.initial"),
        ({"unsafe": {"vars": ["y"], "ineq": ["-x"]}}, "sets.unsafe.vars"),
        ({"unsafe": {"vars": "x", "ineq": ["-x"]}}, "sets.unsafe.vars"),
        ({"unsafe": {"ineq": ["-x"], "inequalities": ["x"]}}, "sets.unsafe.ineq"),
    ],
)
def test_set_errors(sets, field):
    data = copy.deepcopy(MINIMAL)
    data["sets"].update(sets)
    with pytest.raises(ProblemFileError) as info:
        parse_problem(data)
    assert info.value.field == field


def test_missing_keys():
    data = copy.deepcopy(MINIMAL)
    del data["sets"]["unsafe"]
    with pytest.raises(ProblemFileError, match="sets.unsafe"):
        parse_problem(data)
    with pytest.raises(ProblemFileError, match="horizon"):
        parse_problem({k: v for k, v in MINIMAL.items() if k != "horizon"})


def test_json_syntax_error_position():
    text = json.dumps(MINIMAL, indent=2).replace('"horizon": 2', '"horizon": 2,,')
    with pytest.raises(ProblemFileError) as info:
        loads_problem(text)
    line = next(i for i, row in enumerate(text.splitlines(), start=1) if "horizon" in row)
    assert info.value.field.startswith(f"line {line} column")


def test_missing_file(tmp_path):
    with pytest.raises(ProblemFileError):
        load_problem(tmp_path / "absent.json")
