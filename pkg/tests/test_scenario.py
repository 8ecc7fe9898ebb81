import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstaclelab.errors import ScenarioError
from obstaclelab.expressions import Expression, ExpressionError
from obstaclelab.harness.experiments import BUILTIN_SCENARIOS
from obstaclelab.harness.scenario import (
    load_scenario,
    load_shipped,
    parse_scenario,
    serialize_scenario,
)

MINIMAL = """
# minimal 2-D scenario
dimension = 2
box = [[0, 1], [0, 1]]
atoms = [[0.5, 0.5, -1]]
obstacle = -1
levels = [3, 4, 5]
"""


def test_minimal_defaults():
    scn = parse_scenario(MINIMAL)
    assert scn.rho is None
    assert scn.levels == (3, 4, 5)
    assert scn.method == "activeset" and scn.q == 1.1
    assert scn.obstacle.kind == "constant" and scn.obstacle.value == -1.0
    np.testing.assert_array_equal(scn.obstacle.values(scn.grid(3)), -1.0)
    assert scn.measure().atoms == (((0.5, 0.5), -1.0),)


def test_green_pole_needs_rho():
    text = MINIMAL.replace("obstacle = -1", "obstacle = green-pole [0.5, 0.5]")
    with pytest.raises(ScenarioError, match="dominating measure required"):
        parse_scenario(text)
    scn = parse_scenario(text + "rho_atoms = [[0.5, 0.5, 1]]\n")
    assert scn.rho_measure().atoms == (((0.5, 0.5), 1.0),)


def test_positive_expression_obstacle_needs_rho():
    with pytest.raises(ScenarioError, match="dominating measure required"):
        parse_scenario(MINIMAL.replace("obstacle = -1", "obstacle = x-0.5"))
    parse_scenario(MINIMAL.replace("obstacle = -1", "obstacle = -x"))


@pytest.mark.parametrize("name", sorted(BUILTIN_SCENARIOS))
def test_shipped_equals_builtin(name):
    assert load_shipped(name) == BUILTIN_SCENARIOS[name]


@pytest.mark.parametrize("name", sorted(BUILTIN_SCENARIOS))
def test_serialize_round_trip(name, tmp_path):
    scn = BUILTIN_SCENARIOS[name]
    path = tmp_path / "s.scn"
    path.write_text(serialize_scenario(scn))
    back = load_scenario(path)
    assert back == scn
    assert back.hash == scn.hash


@pytest.mark.parametrize("text,line,field", [
    ("dimension = 2\nbox = [[0, 1], [0, 1]]\nlevels = [3, 3]\n", 3, "levels"),
    ("dimension = 2\nbox = [[0, 1]]\nlevels = [3]\n", 2, "box"),
    ("dimension = 4\nbox = [[0, 1]]\nlevels = [3]\n", 1, "dimension"),
    ("dimension = 1\nbox = [[0, 1]]\nlevels = [3]\ncolour = red\n", 4, "colour"),
    ("dimension = 1\nbox = [[0, 1]]\nlevels = [3]\nlevels = [4]\n", 4, "levels"),
    ("dimension = 1\nbox = [[0, 1]]\nlevels = [3]\natoms = [[0.5]]\n", 4, "atoms"),
    ("dimension = 1\nbox = [[0, 1]]\nlevels = [3]\ndensity = import(os)\n", 4, "density"),
    ("dimension = 1\nbox = [[0, 1]]\nlevels = [3]\ntol = tiny\n", 4, "tol"),
])
def test_errors_carry_line_and_field(text, line, field):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == line
    assert info.value.field == field


def test_missing_key_and_bad_line():
    with pytest.raises(ScenarioError) as info:
        parse_scenario("dimension = 1\nbox = [[0, 1]]\n")
    assert info.value.field == "levels"
    with pytest.raises(ScenarioError) as info:
        parse_scenario("dimension = 1\nnonsense\n")
    assert info.value.line == 2


def test_overrides_and_hash():
    scn = parse_scenario(MINIMAL)
    other = scn.with_overrides(method="psor", tol=None, levels=[4, 6])
    assert other.method == "psor" and other.tol == scn.tol and other.levels == (4, 6)
    assert other.hash != scn.hash
    assert other.vi_config().method == "psor"


def test_expression_whitelist():
    with pytest.raises(ExpressionError):
        Expression("__import__('os')", 1)
    with pytest.raises(ExpressionError):
        Expression("z", 2)
    f = Expression("where(x < 0.5, 1, 2) + max(y, 0)", 2)
    np.testing.assert_allclose(f(np.array([[0.25, 0.75], [-1.0, 3.0]])), [1.0, 5.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=5, unique=True),
       st.floats(-2, 0), st.sampled_from(["psor", "activeset"]))
def test_round_trip_random(levels, value, method):
    scn = parse_scenario(MINIMAL).with_overrides(levels=sorted(levels), method=method)
    scn = scn.with_overrides()
    text = serialize_scenario(scn).replace("obstacle = -1.0", f"obstacle = {value!r}")
    back = parse_scenario(text)
    assert back.levels == tuple(sorted(levels))
    assert back.obstacle.value == value
    assert parse_scenario(serialize_scenario(back)) == back
