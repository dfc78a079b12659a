import json
import math

import numpy as np
import pytest

from avgctl.errors import BoundViolation, DimensionError, RankError, SchemaError
from avgctl.expression import ExpressionSyntaxError, UnknownIdentifier
from avgctl.model import (
    Box,
    FastSystem,
    SlowDynamics,
    eval_g,
    load_scenario,
    scenario_from_dict,
    validate_declared_bounds,
)

from conftest import DATA, SCENARIOS, scenario_dict


def slow(g, M_g=1.0, L_z=0.0, L_y=1.0, y_box=(-3.0, 3.0)):
    return SlowDynamics(
        tuple(g) if isinstance(g, list) else (g,),
        k=1,
        m=1,
        M_g=M_g,
        L_z=L_z,
        L_y=L_y,
        u_box=Box([-1.0], [1.0]),
        y_box=Box([y_box[0]], [y_box[1]]),
    )


def test_eval_g_examples():
    assert eval_g(slow("tanh(y1)"), [0], [0], [0])[0] == 0.0
    assert eval_g(slow("sin(y1)"), [0], [math.pi / 2], [0])[0] == 1.0
    assert eval_g(slow("sin(y1)-0.1*tanh(z1)", M_g=1.1, L_z=0.1), [0], [math.pi / 2], [0])[0] == 1.0


def test_eval_g_dimension_check():
    with pytest.raises(DimensionError):
        eval_g(slow("sin(y1)"), [0], [0, 1], [0])


def test_validation_passes_for_tanh():
    rep = validate_declared_bounds(slow("tanh(y1)"), samples=2000, seed=1)
    assert rep.passed
    assert rep.max_norm <= 1.0
    assert 0.99 < rep.max_quotient_y <= 1.0 + 1e-6


def test_validation_catches_small_M_g():
    with pytest.raises(BoundViolation) as info:
        validate_declared_bounds(slow("tanh(y1)", M_g=0.5), samples=2000, seed=1)
    assert info.value.quantity == "M_g"
    assert abs(info.value.witness["y"][0]) > 0.5
    assert info.value.observed > 0.5


def test_validation_catches_doubled_sine():
    with pytest.raises(BoundViolation) as info:
        validate_declared_bounds(slow("2*sin(y1)", L_y=2.0), samples=2000, seed=0)
    assert info.value.quantity == "M_g"
    assert info.value.observed == pytest.approx(2.0, abs=1e-3)


@pytest.mark.parametrize(
    "g, L_y, L_z, quantity",
    [("sin(3*y1)", 1.0, 0.0, "L_y"), ("sin(y1) * 0 + 0.5*tanh(z1)", 1.0, 0.1, "L_z")],
)
def test_validation_catches_lipschitz(g, L_y, L_z, quantity):
    with pytest.raises(BoundViolation) as info:
        validate_declared_bounds(slow(g, L_y=L_y, L_z=L_z), samples=2000, seed=2)
    assert info.value.quantity == quantity


def test_validation_without_raise_reports():
    rep = validate_declared_bounds(slow("tanh(y1)", M_g=0.5), samples=1000, seed=1, raise_on_fail=False)
    assert not rep.passed
    assert rep.violations[0].quantity == "M_g"


def test_validation_sample_floor():
    with pytest.raises(SchemaError):
        validate_declared_bounds(slow("tanh(y1)"), samples=10)


def test_fast_system_checks():
    with pytest.raises(SchemaError, match="epsilon must be > 0"):
        FastSystem(0.0, [[0.0]], [[1.0]], [0.0])
    with pytest.raises(RankError, match="rank 1 < 2"):
        FastSystem(1.0, np.zeros((2, 2)), [[1.0], [0.0]], [0.0, 0.0])
    with pytest.raises(DimensionError):
        FastSystem(1.0, [[0.0]], [[1.0]], [0.0, 1.0])


@pytest.mark.parametrize("name", ["sin_flat", "sin_z", "double_integrator", "sin_atoms", "sin_relaxed"])
def test_golden_scenarios_load(name):
    sc = load_scenario(SCENARIOS / f"{name}.json")
    assert sc.S <= sc.T / sc.epsilon
    round_trip = scenario_from_dict(json.loads(json.dumps(sc.to_dict())), validate=False)
    assert round_trip.to_dict() == sc.to_dict()


MALFORMED = {
    "epsilon_zero": (SchemaError, "epsilon must be > 0"),
    "rank_deficient": (RankError, "rank condition fails: rank 1 < 2"),
    "unknown_key": (SchemaError, "unknown keys"),
    "missing_key": (SchemaError, "missing keys"),
    "syntax_error": (ExpressionSyntaxError, "offset 6"),
    "unknown_identifier": (UnknownIdentifier, "offset 0"),
    "inverted_box": (SchemaError, "degenerate box"),
    "window_too_long": (SchemaError, "S must satisfy"),
    "missing_reference_file": (SchemaError, "reference file not found"),
    "bound_violation": (BoundViolation, "M_g"),
    "not_json": (SchemaError, "invalid JSON"),
}


@pytest.mark.parametrize("name", sorted(MALFORMED))
def test_malformed_scenarios_rejected(name):
    kind, text = MALFORMED[name]
    with pytest.raises(kind, match=text):
        load_scenario(DATA / "malformed" / f"{name}.json")


def test_missing_file():
    with pytest.raises(SchemaError):
        load_scenario(DATA / "does_not_exist.json")


def test_relaxed_reference_checks():
    d = scenario_dict("sin_relaxed")
    d["reference"]["pieces"][0]["weights"] = [0.7, 0.4]
    with pytest.raises(SchemaError, match="simplex"):
        scenario_from_dict(d, validate=False)
    d = scenario_dict("sin_relaxed")
    d["reference"]["pieces"][-1]["t_end"] = 0.9
    with pytest.raises(SchemaError, match="end at T"):
        scenario_from_dict(d, validate=False)


def test_file_reference_resolves_relative_to_scenario(tmp_path):
    d = scenario_dict()
    d["reference"] = {"type": "file", "path": "ref.csv"}
    (tmp_path / "ref.csv").write_text("t,z_1\n0,0\n1,0.2\n")
    (tmp_path / "s.json").write_text(json.dumps(d))
    sc = load_scenario(tmp_path / "s.json")
    assert sc.reference.path == str(tmp_path / "ref.csv")


def test_tolerances_block():
    d = scenario_dict()
    d["tolerances"] = {"h_fast": 1e-3, "tau_min": 1e-6}
    sc = scenario_from_dict(d, validate=False)
    assert sc.fast_step() == 1e-3 and sc.tau_min == 1e-6
    d["tolerances"] = {"rk4": 1}
    with pytest.raises(SchemaError):
        scenario_from_dict(d, validate=False)
