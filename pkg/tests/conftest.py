import json

import hypothesis
import numpy as np
import pytest

from safety_distance import PROBLEMS_DIR
from safety_distance.problem_file import load_problem, loads_problem

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")


@pytest.fixture
def problems_dir():
    return PROBLEMS_DIR


@pytest.fixture
def flow():
    return load_problem(PROBLEMS_DIR / "flow_halfcircle.json").spec


@pytest.fixture
def decay_data():
    """x' = -x from [0.5, 1] for two time units; the unsafe half-line x <= -0.5 is never reached."""
    return {
        "name": "decay",
        "variables": ["x"],
        "dynamics": ["-x"],
        "horizon": 2,
        "sets": {
            "initial": {"box": [[0.5, 1.0]]},
            "state": {"box": [[-1, 1]]},
            "unsafe": {"inequalities": ["-x - 0.5"], "box": [[-1, 1]]},
        },
        "options": {"degree": 1, "samples": 4},
    }


@pytest.fixture
def decay_file(tmp_path, decay_data):
    path = tmp_path / "decay.json"
    path.write_text(json.dumps(decay_data))
    return path


@pytest.fixture
def decay(decay_data):
    return loads_problem(json.dumps(decay_data)).spec
