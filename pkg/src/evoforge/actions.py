"""GUI action vocabulary, its textual DSL, and token serialization.

The wire format is ``name(arg=value)``::

    click(point=(120,340))
    drag(box=(0,0,10,10))
    type(text='hello')
    hotkey(keys='ctrl+c')
    scroll(direction=down)
    wait()

Coordinates are non-negative integers without leading zeros. Strings are
single-quoted on output (``\\'`` and ``\\\\`` escape); double quotes are also
accepted on input.
"""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import MalformedPayload, OutOfRangeCoordinate, UnknownActionName


class ActionType(str, enum.Enum):
    CLICK = "click"
    LEFT_SINGLE = "left_single"
    RIGHT_SINGLE = "right_single"
    HOVER = "hover"
    LEFT_DOUBLE = "left_double"
    DOUBLE_CLICK = "double_click"
    DRAG = "drag"
    SELECT = "select"
    TYPE_TEXT = "type_text"
    HOTKEY = "hotkey"
    PRESS = "press"
    SCROLL = "scroll"
    MOVE_MOUSE = "move_mouse"
    HIGHLIGHT = "highlight"
    COPY = "copy"
    PASTE = "paste"
    WAIT = "wait"
    FINISHED = "finished"

    @property
    def dsl_name(self) -> str:
        return "type" if self is ActionType.TYPE_TEXT else self.value

    @property
    def family(self) -> "Family":
        return _FAMILY[self]

    @property
    def canonical(self) -> "ActionType":
        """Kind used for the type-match indicator (``double_click`` == ``left_double``)."""
        return ActionType.LEFT_DOUBLE if self is ActionType.DOUBLE_CLICK else self


class Family(str, enum.Enum):
    POINT = "point"
    BOX = "box"
    TEXT = "text"
    KEYS = "keys"
    DIRECTION = "direction"
    NONE = "none"


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"


_FAMILY = {
    ActionType.CLICK: Family.POINT,
    ActionType.LEFT_SINGLE: Family.POINT,
    ActionType.RIGHT_SINGLE: Family.POINT,
    ActionType.HOVER: Family.POINT,
    ActionType.LEFT_DOUBLE: Family.POINT,
    ActionType.DOUBLE_CLICK: Family.POINT,
    ActionType.MOVE_MOUSE: Family.POINT,
    ActionType.DRAG: Family.BOX,
    ActionType.SELECT: Family.BOX,
    ActionType.HIGHLIGHT: Family.BOX,
    ActionType.TYPE_TEXT: Family.TEXT,
    ActionType.COPY: Family.TEXT,
    ActionType.PASTE: Family.TEXT,
    ActionType.HOTKEY: Family.KEYS,
    ActionType.PRESS: Family.KEYS,
    ActionType.SCROLL: Family.DIRECTION,
    ActionType.WAIT: Family.NONE,
    ActionType.FINISHED: Family.NONE,
}

_BY_DSL_NAME = {kind.dsl_name: kind for kind in ActionType}
_ALIASES = {"finish_task": ActionType.FINISHED}

PRINTABLE = tuple(chr(c) for c in range(0x20, 0x7F))
NAMED_KEYS = (
    "ctrl", "alt", "shift", "cmd", "win", "enter", "tab", "esc", "space",
    "backspace", "delete", "insert", "home", "end", "pageup", "pagedown",
    "up", "down", "left", "right",
) + tuple(f"f{i}" for i in range(1, 13))
KEY_NAMES = frozenset(NAMED_KEYS) | frozenset(string.ascii_lowercase) | frozenset(string.digits)

MAX_DIGITS = 4
MAX_TEXT = 32
MAX_KEYS = 4


@dataclass(frozen=True)
class Action:
    """One parsed GUI action. Payload fields must match the kind's family."""

    kind: ActionType
    point: tuple[int, int] | None = None
    box: tuple[int, int, int, int] | None = None
    text: str | None = None
    keys: str | None = None
    direction: Direction | None = None

    def __post_init__(self):
        kind = ActionType(self.kind)
        object.__setattr__(self, "kind", kind)
        family = kind.family
        present = {
            Family.POINT: self.point is not None,
            Family.BOX: self.box is not None,
            Family.TEXT: self.text is not None,
            Family.KEYS: self.keys is not None,
            Family.DIRECTION: self.direction is not None,
        }
        for fam, has in present.items():
            if has != (fam is family):
                raise MalformedPayload(
                    f"{kind.dsl_name} expects payload {family.value!r}, got fields "
                    f"{[f.value for f, h in present.items() if h]}"
                )
        if self.point is not None:
            pt = tuple(self.point)
            if len(pt) != 2:
                raise MalformedPayload("point needs 2 coordinates")
            object.__setattr__(self, "point", _coords(pt))
        if self.box is not None:
            bx = tuple(self.box)
            if len(bx) != 4:
                raise MalformedPayload("box needs 4 coordinates")
            bx = _coords(bx)
            if bx[0] > bx[2] or bx[1] > bx[3]:
                raise MalformedPayload(f"box {bx} must satisfy x1<=x2 and y1<=y2")
            object.__setattr__(self, "box", bx)
        if self.text is not None:
            bad = [c for c in self.text if c not in _PRINTABLE_SET]
            if bad:
                raise MalformedPayload(f"text contains non-printable characters {bad!r}")
        if self.keys is not None:
            object.__setattr__(self, "keys", _normalise_keys(self.keys, single=kind is ActionType.PRESS))
        if self.direction is not None:
            try:
                object.__setattr__(self, "direction", Direction(self.direction))
            except ValueError:
                raise MalformedPayload(f"unknown direction {self.direction!r}") from None

    @property
    def payload_string(self) -> str:
        """Canonical payload text compared by the string-distance rewards."""
        family = self.kind.family
        if family is Family.TEXT:
            return self.text
        if family is Family.KEYS:
            return self.keys
        if family is Family.DIRECTION:
            return self.direction.value
        raise TypeError(f"{self.kind.value} has no string payload")

    def __str__(self):
        return serialize_action(self)


_PRINTABLE_SET = frozenset(PRINTABLE)


def _coords(values):
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
            raise MalformedPayload(f"coordinate {v!r} is not an integer")
        if v < 0:
            raise OutOfRangeCoordinate(f"coordinate {v} is negative")
        out.append(int(v))
    return tuple(out)


def _normalise_keys(keys: str, single: bool) -> str:
    parts = [p.strip().lower() for p in keys.split("+")]
    if not parts or any(p not in KEY_NAMES for p in parts):
        raise MalformedPayload(f"unknown key in {keys!r}")
    if single and len(parts) != 1:
        raise MalformedPayload(f"press takes a single key, got {keys!r}")
    return "+".join(parts)


# --------------------------------------------------------------------------
# serialization / parsing


def _quote(s: str) -> str:
    return "'" + s.replace("\\", "\\\\").replace("'", "\\'") + "'"


def serialize_action(a: Action) -> str:
    name = a.kind.dsl_name
    family = a.kind.family
    if family is Family.NONE:
        return f"{name}()"
    if family is Family.POINT:
        return f"{name}(point=({a.point[0]},{a.point[1]}))"
    if family is Family.BOX:
        return f"{name}(box=({','.join(map(str, a.box))}))"
    if family is Family.TEXT:
        return f"{name}(text={_quote(a.text)})"
    if family is Family.KEYS:
        return f"{name}(keys={_quote(a.keys)})"
    return f"{name}(direction={a.direction.value})"


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self._skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            raise MalformedPayload(f"expected {ch!r} at offset {self.pos} in {self.text!r}")
        self.pos += 1

    def word(self) -> str:
        self._skip()
        start = self.pos
        while self.pos < len(self.text) and (self.text[self.pos].isalnum() or self.text[self.pos] == "_"):
            self.pos += 1
        return self.text[start:self.pos]

    def integer(self) -> int:
        self._skip()
        neg = False
        if self.peek() == "-":
            neg = True
            self.pos += 1
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in string.digits:
            self.pos += 1
        digits = self.text[start:self.pos]
        if not digits:
            raise MalformedPayload(f"expected integer at offset {start} in {self.text!r}")
        if len(digits) > 1 and digits[0] == "0":
            raise MalformedPayload(f"leading zero in {digits!r}")
        if neg:
            raise OutOfRangeCoordinate(f"coordinate -{digits} is negative")
        return int(digits)

    def tuple_of(self, n: int) -> tuple[int, ...]:
        self.expect("(")
        vals = [self.integer()]
        while self.peek() == ",":
            self.pos += 1
            vals.append(self.integer())
        self.expect(")")
        if len(vals) != n:
            raise MalformedPayload(f"expected {n} coordinates, got {len(vals)}")
        return tuple(vals)

    def quoted(self) -> str:
        q = self.peek()
        if q not in ("'", '"'):
            raise MalformedPayload(f"expected quoted string at offset {self.pos}")
        self.pos += 1
        out = []
        while True:
            if self.pos >= len(self.text):
                raise MalformedPayload("unterminated string")
            ch = self.text[self.pos]
            self.pos += 1
            if ch == "\\":
                if self.pos >= len(self.text) or self.text[self.pos] not in ("\\", "'", '"'):
                    raise MalformedPayload("bad escape sequence")
                out.append(self.text[self.pos])
                self.pos += 1
            elif ch == q:
                return "".join(out)
            else:
                out.append(ch)

    def at_end(self) -> bool:
        self._skip()
        return self.pos == len(self.text)


def parse_action(text: str, normalize_box: bool = False) -> Action:
    lex = _Lexer(text)
    name = lex.word()
    kind = _BY_DSL_NAME.get(name) or _ALIASES.get(name)
    if kind is None:
        raise UnknownActionName(f"unknown action {name!r}" if name else f"no action name in {text!r}")
    lex.expect("(")
    family = kind.family
    fields = {}
    if family is not Family.NONE:
        arg = lex.word()
        if arg != family.value:
            raise MalformedPayload(f"{name} expects argument {family.value!r}, got {arg!r}")
        lex.expect("=")
        if family is Family.POINT:
            fields["point"] = lex.tuple_of(2)
        elif family is Family.BOX:
            x1, y1, x2, y2 = lex.tuple_of(4)
            if normalize_box:
                x1, x2 = sorted((x1, x2))
                y1, y2 = sorted((y1, y2))
            fields["box"] = (x1, y1, x2, y2)
        elif family is Family.TEXT:
            fields["text"] = lex.quoted()
        elif family is Family.KEYS:
            fields["keys"] = lex.quoted()
        else:
            word = lex.word()
            try:
                fields["direction"] = Direction(word)
            except ValueError:
                raise MalformedPayload(f"unknown direction {word!r}") from None
    lex.expect(")")
    if not lex.at_end():
        raise MalformedPayload(f"trailing input after action in {text!r}")
    return Action(kind, **fields)


# --------------------------------------------------------------------------
# tokens


class Vocabulary:
    """Fixed DSL alphabet. Index order is stable across processes."""

    def __init__(self):
        names = [k.dsl_name for k in ActionType]
        args = [f.value for f in Family if f is not Family.NONE]
        dirs = [d.value for d in Direction]
        items = names + args + dirs + list(NAMED_KEYS) + list(PRINTABLE)
        self.tokens: tuple[str, ...] = tuple(dict.fromkeys(items))
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, tok: str) -> int:
        return self.index[tok]


VOCAB = Vocabulary()


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]

    def __len__(self):
        return len(self.tokens)

    def text(self) -> str:
        return detokenize(self)

    def action(self) -> Action:
        """Decode to an Action; box corners are reordered so x1<=x2 and y1<=y2.

        The grammar automaton cannot express the corner ordering, so sampled
        boxes may come out reversed.
        """
        return parse_action(self.text(), normalize_box=True)


def _chars(s: str) -> list[str]:
    return list(s)


def tokenize_action(a: Action) -> TokenSequence:
    toks = [a.kind.dsl_name, "("]
    family = a.kind.family
    if family is not Family.NONE:
        toks += [family.value, "="]
        if family is Family.POINT or family is Family.BOX:
            values = a.point if family is Family.POINT else a.box
            toks.append("(")
            for i, v in enumerate(values):
                if i:
                    toks.append(",")
                toks += _chars(str(v))
            toks.append(")")
        elif family is Family.TEXT:
            toks.append("'")
            for ch in a.text:
                if ch in ("\\", "'"):
                    toks.append("\\")
                toks.append(ch)
            toks.append("'")
        elif family is Family.KEYS:
            toks.append("'")
            for i, key in enumerate(a.keys.split("+")):
                if i:
                    toks.append("+")
                toks.append(key)
            toks.append("'")
        else:
            toks.append(a.direction.value)
    toks.append(")")
    return TokenSequence(tuple(VOCAB[t] for t in toks))


def detokenize(seq: TokenSequence | list[int] | tuple[int, ...]) -> str:
    ids = seq.tokens if isinstance(seq, TokenSequence) else seq
    return "".join(VOCAB.tokens[int(i)] for i in ids)


# --------------------------------------------------------------------------
# grammar automaton used for constrained decoding


class GrammarDFA:
    """Token-level automaton accepting exactly the canonical tokenizations.

    ``next[s, tok]`` is the successor state or -1. Accepting states have no
    outgoing transitions, so decoding stops as soon as one is reached. Length
    limits (MAX_DIGITS, MAX_TEXT, MAX_KEYS) keep the automaton acyclic.
    """

    def __init__(self, kinds=None):
        self.kinds = tuple(ActionType(k) for k in (kinds or list(ActionType)))
        self._trans: list[dict[int, int]] = []
        self.start = self._new({})
        start_trans = {}
        for kind in self.kinds:
            first = self._build(self._elements(kind), {})
            start_trans[VOCAB[kind.dsl_name]] = self._new(first)
        self._trans[self.start] = start_trans
        n = len(self._trans)
        self.next = np.full((n, len(VOCAB)), -1, dtype=np.int32)
        for s, tr in enumerate(self._trans):
            for tok, dst in tr.items():
                self.next[s, tok] = dst
        self.accepting = np.array([not tr for tr in self._trans], dtype=np.uint8)
        self.max_len = self._longest(self.start)

    def _new(self, trans: dict[int, int]) -> int:
        self._trans.append(dict(trans))
        return len(self._trans) - 1

    @staticmethod
    def _elements(kind: ActionType):
        family = kind.family
        els = [("lit", "(")]
        if family is not Family.NONE:
            els += [("lit", family.value), ("lit", "=")]
            if family is Family.POINT:
                els += [("lit", "("), ("int",), ("lit", ","), ("int",), ("lit", ")")]
            elif family is Family.BOX:
                els += [("lit", "(")]
                for i in range(4):
                    if i:
                        els.append(("lit", ","))
                    els.append(("int",))
                els.append(("lit", ")"))
            elif family is Family.TEXT:
                els.append(("text",))
            elif family is Family.KEYS:
                els.append(("keys", 1 if kind is ActionType.PRESS else MAX_KEYS))
            else:
                els.append(("dir",))
        els.append(("lit", ")"))
        return els

    def _build(self, elements, follow: dict[int, int]) -> dict[int, int]:
        for el in reversed(elements):
            follow = getattr(self, "_el_" + el[0])(follow, *el[1:])
        return follow

    def _el_lit(self, follow, tok):
        return {VOCAB[tok]: self._new(follow)}

    def _el_int(self, follow):
        digits = [VOCAB[d] for d in string.digits]
        zero = self._new(follow)
        states = [None] * (MAX_DIGITS + 1)
        states[MAX_DIGITS] = self._new(follow)
        for n in range(MAX_DIGITS - 1, 0, -1):
            tr = dict(follow)
            tr.update({d: states[n + 1] for d in digits})
            states[n] = self._new(tr)
        first = {d: states[1] for d in digits[1:]}
        first[digits[0]] = zero
        return first

    def _el_text(self, follow):
        quote, slash = VOCAB["'"], VOCAB["\\"]
        plain = [VOCAB[c] for c in PRINTABLE if c not in ("'", "\\")]
        close = self._new(follow)
        inside = [None] * (MAX_TEXT + 1)
        inside[MAX_TEXT] = self._new({quote: close})
        for n in range(MAX_TEXT - 1, -1, -1):
            esc = self._new({quote: inside[n + 1], slash: inside[n + 1]})
            tr = {quote: close, slash: esc}
            tr.update({c: inside[n + 1] for c in plain})
            inside[n] = self._new(tr)
        return {quote: inside[0]}

    def _el_keys(self, follow, max_keys):
        quote, plus = VOCAB["'"], VOCAB["+"]
        keys = sorted(VOCAB[k] for k in KEY_NAMES)
        close = self._new(follow)
        after = [None] * (max_keys + 1)
        expect = [None] * (max_keys + 1)
        after[max_keys] = self._new({quote: close})
        for n in range(max_keys, 0, -1):
            if n < max_keys:
                after[n] = self._new({quote: close, plus: expect[n + 1]})
            expect[n] = self._new({k: after[n] for k in keys})
        return {quote: expect[1]}

    def _el_dir(self, follow):
        state = self._new(follow)
        return {VOCAB[d.value]: state for d in Direction}

    def _longest(self, start: int) -> int:
        # states are built back to front, so every edge except those leaving
        # the start state points at a lower index
        depth = [0] * len(self._trans)
        for s in range(len(self._trans)):
            if s != start:
                depth[s] = max((1 + depth[d] for d in self._trans[s].values()), default=0)
        return max((1 + depth[d] for d in self._trans[start].values()), default=0)

    def legal(self, state: int) -> np.ndarray:
        return np.flatnonzero(self.next[state] >= 0)

    def accepts(self, tokens) -> bool:
        s = self.start
        for t in tokens:
            s = int(self.next[s, int(t)])
            if s < 0:
                return False
        return bool(self.accepting[s])


@lru_cache(maxsize=None)
def grammar(kinds: tuple[ActionType, ...] | None = None) -> GrammarDFA:
    return GrammarDFA(kinds)
