import json
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
DATA = Path(__file__).resolve().parent / "data"


def scenario_dict(name="sin_flat"):
    return json.loads((SCENARIOS / f"{name}.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sin_flat():
    from avgctl.model import load_scenario

    return load_scenario(SCENARIOS / "sin_flat.json")


def random_controllable(rng, m, k):
    from avgctl.linops import kalman_rank

    while True:
        A = rng.normal(size=(m, m))
        B = rng.normal(size=(m, k))
        if kalman_rank(A, B) == m:
            return A, B
