import json

import numpy as np
import pytest

from vvclab.gridflow import case_path, load_case, network_from_dict
from vvclab.scenario import generate_profiles, load_devices

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def case33():
    return load_case("case33")


@pytest.fixture(scope="session")
def devices33():
    return load_devices(case_path("case33"))


@pytest.fixture(scope="session")
def scenario33(case33, devices33):
    return generate_profiles(case33, devices33, days=2, seed=11)


def two_bus_dict(r=0.5, x=0.8, load_p=1.0, load_q=0.6, devices=()):
    return {
        "base_mva": 10.0,
        "base_kv": 12.66,
        "slack_bus": 0,
        "buses": [
            {"id": 0, "load_p_mw": 0.0, "load_q_mvar": 0.0},
            {"id": 1, "load_p_mw": load_p, "load_q_mvar": load_q},
        ],
        "branches": [{"from": 0, "to": 1, "r_ohm": r, "x_ohm": x}],
        "devices": list(devices),
    }


@pytest.fixture
def two_bus():
    return network_from_dict(two_bus_dict())


def write_case(tmp_path, obj, name="net.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
