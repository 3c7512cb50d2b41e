import pytest
from hypothesis import given, settings, strategies as st

from evoforge.actions import (Action, ActionType, Direction, Family, VOCAB, detokenize, grammar,
                              parse_action, serialize_action, tokenize_action)
from evoforge.errors import MalformedPayload, OutOfRangeCoordinate, UnknownActionName


def test_parse_examples():
    assert parse_action("click(point=(120,340))") == Action(ActionType.CLICK, point=(120, 340))
    assert parse_action("drag(box=(0,0,10,10))") == Action(ActionType.DRAG, box=(0, 0, 10, 10))
    assert parse_action("type(text='hello')") == Action(ActionType.TYPE_TEXT, text="hello")
    with pytest.raises(UnknownActionName):
        parse_action("jump(point=(1,2))")


def test_serialize_examples():
    assert serialize_action(Action(ActionType.WAIT)) == "wait()"
    assert serialize_action(Action(ActionType.HOTKEY, keys="ctrl+c")) == "hotkey(keys='ctrl+c')"
    assert serialize_action(Action(ActionType.SCROLL, direction=Direction.DOWN)) == "scroll(direction=down)"


def test_tokenize_examples():
    seq = tokenize_action(Action(ActionType.WAIT))
    assert [VOCAB.tokens[t] for t in seq.tokens] == ["wait", "(", ")"]
    a = tokenize_action(Action(ActionType.CLICK, point=(1, 2))).tokens
    b = tokenize_action(Action(ActionType.CLICK, point=(1, 3))).tokens
    assert len(a) == len(b)
    assert sum(x != y for x, y in zip(a, b)) == 1


def test_payload_must_match_family():
    with pytest.raises(MalformedPayload):
        Action(ActionType.CLICK, text="x")
    with pytest.raises(MalformedPayload):
        Action(ActionType.DRAG, box=(10, 0, 0, 10))


def test_out_of_range_coordinate():
    with pytest.raises(OutOfRangeCoordinate):
        parse_action("click(point=(-3,1))")


def test_double_click_aliases_left_double():
    assert ActionType.DOUBLE_CLICK.canonical is ActionType.LEFT_DOUBLE


def test_finish_task_alias():
    assert parse_action("finish_task()").kind is ActionType.FINISHED


texts = st.text(alphabet=st.characters(min_codepoint=0x20, max_codepoint=0x7E), max_size=12)
coords = st.integers(0, 9999)


@st.composite
def actions(draw):
    kind = draw(st.sampled_from(list(ActionType)))
    fam = kind.family
    if fam is Family.POINT:
        return Action(kind, point=(draw(coords), draw(coords)))
    if fam is Family.BOX:
        x1, x2 = sorted((draw(coords), draw(coords)))
        y1, y2 = sorted((draw(coords), draw(coords)))
        return Action(kind, box=(x1, y1, x2, y2))
    if fam is Family.TEXT:
        return Action(kind, text=draw(texts))
    if fam is Family.KEYS:
        keys = draw(st.lists(st.sampled_from(["ctrl", "shift", "a", "c", "enter", "7"]), min_size=1,
                             max_size=1 if kind is ActionType.PRESS else 4))
        return Action(kind, keys="+".join(keys))
    if fam is Family.DIRECTION:
        return Action(kind, direction=draw(st.sampled_from(list(Direction))))
    return Action(kind)


@settings(max_examples=300, deadline=None)
@given(actions())
def test_roundtrip(a):
    text = serialize_action(a)
    assert parse_action(text) == a
    seq = tokenize_action(a)
    assert detokenize(seq) == text
    assert seq.action() == a


@settings(max_examples=300, deadline=None)
@given(actions())
def test_grammar_accepts_tokenization(a):
    assert grammar().accepts(tokenize_action(a).tokens)


def test_grammar_rejects_truncation():
    toks = tokenize_action(Action(ActionType.CLICK, point=(5, 6))).tokens
    assert not grammar().accepts(toks[:-1])
