import pytest
from hypothesis import given, settings, strategies as st

from evoforge.errors import InconsistentJudgment, IndexOutOfRange, MalformedModelOutput
from evoforge.judgment import (Judgment, StateObservation, Trajectory, Widget, describe_change,
                               diff_observations, label_steps, parse_judgment)


def test_parse_examples():
    j = parse_judgment('reasoning... {"Correctness":true,"Redundant":false}')
    assert (j.correctness, j.redundant_from, j.first_error_step) == (True, None, None)
    j = parse_judgment('{"Correctness":false,"FirstErrorStep":3}')
    assert (j.correctness, j.redundant_from, j.first_error_step) == (False, None, 3)
    with pytest.raises(InconsistentJudgment):
        parse_judgment('{"Correctness":true,"FirstErrorStep":1}')


def test_parse_takes_last_object():
    text = 'draft {"Correctness": false, "FirstErrorStep": 0} final {"Correctness": true}'
    assert parse_judgment(text).correctness


def test_parse_rejects_garbage():
    with pytest.raises(MalformedModelOutput):
        parse_judgment("no json here")
    with pytest.raises(MalformedModelOutput):
        parse_judgment('{"Redundant": 2}')


def test_parse_checks_length():
    with pytest.raises(InconsistentJudgment):
        parse_judgment('{"Correctness":false,"FirstErrorStep":7}', n_steps=3)


def test_parse_confidence():
    assert parse_judgment('{"Correctness":true,"Confidence":0.7}').confidence == 0.7
    with pytest.raises(InconsistentJudgment):
        parse_judgment('{"Correctness":true,"Confidence":1.5}')


def test_label_examples():
    labels = label_steps(5, Judgment(True))
    assert labels.positive == {0, 1, 2, 3, 4} and not labels.negative and not labels.ignored
    labels = label_steps(5, Judgment(True, redundant_from=3))
    assert labels.positive == {0, 1, 2} and labels.ignored == {3, 4} and not labels.negative
    labels = label_steps(5, Judgment(False, first_error_step=2))
    assert labels.positive == {0, 1} and labels.negative == {2} and labels.ignored == {3, 4}


def test_label_out_of_range():
    with pytest.raises(IndexOutOfRange):
        label_steps(3, Judgment(False, first_error_step=3))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30), st.booleans(), st.data())
def test_labels_partition_steps(n, ok, data):
    k = data.draw(st.one_of(st.none(), st.integers(0, n - 1))) if ok else data.draw(st.integers(0, n - 1))
    j = Judgment(True, redundant_from=k) if ok else Judgment(False, first_error_step=k)
    lab = label_steps(n, j)
    assert lab.positive | lab.negative | lab.ignored == set(range(n))
    assert not (lab.positive & lab.negative or lab.positive & lab.ignored or lab.negative & lab.ignored)
    assert len(lab.negative) == (0 if ok else 1)


def _obs(widgets=(), variables=(), sid="s"):
    return StateObservation(sid, "cap", tuple(widgets), tuple(variables))


def test_describe_examples():
    a = _obs()
    assert describe_change(a, a).description == "no visible change"
    b = _obs([Widget("rect1", "Rectangle", (0, 0, 5, 5))])
    d = describe_change(a, b).description
    assert "Rectangle" in d and "appeared" in d
    s1 = _obs([Widget("save", "Save", (0, 0, 5, 5))])
    s2 = _obs([Widget("save", "Saved", (0, 0, 5, 5))])
    d = diff_observations(s1, s2)
    assert "'Save'" in d and "'Saved'" in d


def test_trajectory_roundtrip(paint):
    from helpers import click, play

    traj = play(paint, [click(paint, "canvas", "shapes"), click(paint, "shape_menu", "rect")], "rectangle")
    assert Trajectory.from_dict(traj.to_dict()) == traj
