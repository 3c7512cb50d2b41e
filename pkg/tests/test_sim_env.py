import json

import pytest

from evoforge.actions import Action, ActionType
from evoforge.errors import DanglingReference, EpisodeExhausted, SchemaError
from evoforge.sim_env import Goal, OracleJudge, fixture_path, load_env, oracle_judge, parse_env
from helpers import click, play


def _raw(name="paint-lite"):
    return json.loads(fixture_path(name).read_text())


def test_fixtures_load(paint, editor):
    assert paint.name == "paint-lite" and editor.name == "editor-lite"
    assert not paint.warnings and not editor.warnings
    for env in (paint, editor):
        for t in env.tasks:
            assert env.start_distance(t.goal) <= t.max_steps


def test_click_moves_to_menu(paint):
    s = paint.step(paint.reset(), click(paint, "canvas", "shapes"))
    assert s.screen == "shape_menu" and s.step == 1


def test_noop_actions(paint):
    s0 = paint.reset()
    for a in (Action(ActionType.CLICK, point=(0, 0)), Action(ActionType.WAIT)):
        s = paint.step(s0, a)
        assert s.key == s0.key and s.step == 1


def test_horizon(paint):
    s = paint.reset(max_steps=1)
    s = paint.step(s, Action(ActionType.WAIT))
    with pytest.raises(EpisodeExhausted):
        paint.step(s, Action(ActionType.WAIT))


def test_observe_is_deterministic(paint):
    s = paint.reset()
    assert paint.observe(s).caption == paint.observe(s).caption
    assert paint.state_of(paint.observe(s)).key == s.key


def test_dangling_reference():
    raw = _raw()
    raw["transitions"][0]["on"]["widget"] = "nope"
    with pytest.raises(DanglingReference):
        parse_env(raw)


def test_schema_error_lists_diagnostics():
    raw = _raw()
    del raw["start_screen"]
    with pytest.raises(SchemaError) as err:
        parse_env(raw)
    assert err.value.diagnostics


def test_unreachable_goal_warns():
    raw = _raw()
    raw["tasks"].append({"id": "never", "instruction": "x", "goal": {"vars": {"shape": "hexagon"}},
                         "max_steps": 5})
    env = parse_env(raw)
    assert any("never" in w for w in env.warnings)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.env"
    p.write_text("{ nope")
    with pytest.raises(SchemaError):
        load_env(p)


def test_oracle_shortest_path_success(paint):
    traj = play(paint, [click(paint, "canvas", "shapes"), click(paint, "shape_menu", "rect")], "rectangle")
    j = oracle_judge(paint, traj)
    assert (j.correctness, j.redundant_from, j.first_error_step) == (True, None, None)


def test_oracle_redundant_noop(paint):
    acts = [click(paint, "canvas", "shapes"), Action(ActionType.WAIT), click(paint, "shape_menu", "rect")]
    j = oracle_judge(paint, play(paint, acts, "rectangle"))
    assert (j.correctness, j.redundant_from) == (True, 1)


def test_oracle_step_away(paint):
    acts = [click(paint, "canvas", "fill"), Action(ActionType.WAIT)]
    j = oracle_judge(paint, play(paint, acts, "rectangle"))
    assert (j.correctness, j.first_error_step) == (False, 0)


def test_oracle_error_at_step_two(paint):
    acts = [click(paint, "canvas", "shapes"), click(paint, "shape_menu", "rect"), click(paint, "canvas", "shapes"),
            click(paint, "shape_menu", "ellipse")]
    j = oracle_judge(paint, play(paint, acts, "rectangle"))
    assert (j.correctness, j.first_error_step) == (False, 2)


def test_oracle_all_wait(paint):
    j = oracle_judge(paint, play(paint, [Action(ActionType.WAIT)] * 8, "rectangle"))
    assert (j.correctness, j.first_error_step) == (False, 0)


def test_oracle_deterministic(paint):
    acts = [click(paint, "canvas", "fill"), click(paint, "color_menu", "green")]
    traj = play(paint, acts, "green")
    assert OracleJudge(paint).judge(traj) == OracleJudge(paint).judge(traj)
    assert oracle_judge(paint, traj).correctness


def test_goal_roundtrip():
    g = Goal.from_dict({"vars": {"b": 1, "a": "x"}, "screen": "s"})
    assert Goal.from_dict(g.to_dict()) == g
