import json

import numpy as np
import pytest

from jumpfilter.model import validate_model

M1_DOC = {
    "states": ["0", "1", "2"],
    "obs": ["a", "b"],
    "h": ["a", "a", "b"],
    "controls": ["u0", "u1"],
    "lambda": [
        [[0.0, 1.0, 1.0], [0.0, 2.0, 2.0]],
        [[0.5, 0.0, 0.5], [1.0, 0.0, 1.0]],
        [[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]],
    ],
    "f": [[0.0, 0.2], [1.0, 1.2], [2.0, 2.2]],
    "beta": 1.0,
}

# no transitions across faces anywhere: the label never changes
NO_EXIT_DOC = {
    "states": ["0", "1", "2"],
    "obs": ["a", "b"],
    "h": ["a", "a", "b"],
    "controls": ["u0"],
    "lambda": [
        [[0.0, 1.0, 0.0]],
        [[1.0, 0.0, 0.0]],
        [[0.0, 0.0, 0.0]],
    ],
    "f": [[1.0], [1.0], [1.0]],
    "beta": 1.0,
}


def m1_variant(**overrides):
    doc = {k: (v.copy() if isinstance(v, list) else v) for k, v in M1_DOC.items()}
    doc.update(overrides)
    return doc


@pytest.fixture(scope="session")
def m1():
    return validate_model(M1_DOC)


@pytest.fixture(scope="session")
def m1_doc():
    return M1_DOC


@pytest.fixture(scope="session")
def m1_const_cost():
    return validate_model(m1_variant(f=[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]))


@pytest.fixture(scope="session")
def m1_u0():
    return validate_model(m1_variant(
        controls=["u0"],
        **{"lambda": [[[0.0, 1.0, 1.0]], [[0.5, 0.0, 0.5]], [[1.0, 1.0, 0.0]]]},
        f=[[0.0], [1.0], [2.0]],
    ))


@pytest.fixture(scope="session")
def no_exit_model():
    return validate_model(NO_EXIT_DOC)


@pytest.fixture()
def m1_file(tmp_path):
    path = tmp_path / "m1.json"
    path.write_text(json.dumps(M1_DOC))
    return path


def tv(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())
