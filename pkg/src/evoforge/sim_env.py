"""File-defined simulated software: screens, widgets, variables, transitions.

An environment is a finite state machine over (screen, variable values).
Actions that match no transition are no-ops. Because the reachable state
graph is small, exact BFS distances to any goal are available, which is what
the oracle judge uses.

Definition files are JSON::

    {
      "name": "paint-lite",
      "geometry": {"width": 100, "height": 100},
      "start_screen": "canvas",
      "screens": [{"id": "canvas", "title": "Canvas",
                   "widgets": [{"id": "shapes", "label": "Shapes",
                                "box": [10, 10, 29, 19], "kind": "button"}]}],
      "variables": {"shape": "none"},
      "transitions": [{"on": {"screen": "canvas", "widget": "shapes",
                              "action": ["click", "left_single"]},
                       "goto": "shape_menu"},
                      {"on": {"screen": "props", "action": "type_text",
                              "text": {"equals": "50"}},
                       "effects": {"transparency": "50"}, "goto": "canvas"}],
      "tasks": [{"id": "rect", "instruction": "Add a rectangle",
                 "goal": {"vars": {"shape": "rectangle"}}, "max_steps": 8}]
    }

``screen`` in a transition may be a list of screen ids. Payload predicates
(``text``, ``keys``, ``direction``) take one of ``equals``, ``contains``,
``nonempty`` or ``any``. Widget transitions match point actions whose point
lies in the widget box (edges included) and box actions whose centre does.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .actions import Action, ActionType, Direction, Family
from .errors import DanglingReference, EpisodeExhausted, GoalUnreachable, SchemaError
from .judgment import Judgment, StateObservation, Trajectory, Widget, diff_observations
from .rewards import ScreenGeometry

log = logging.getLogger(__name__)

FIXTURES = Path(__file__).parent / "fixtures"

_PREDICATE = {
    "type": "object",
    "minProperties": 1,
    "maxProperties": 1,
    "properties": {
        "equals": {"type": "string"},
        "contains": {"type": "string"},
        "nonempty": {"const": True},
        "any": {"const": True},
    },
    "additionalProperties": False,
}
_SCALAR = {"type": ["string", "integer"]}

SCHEMA = {
    "type": "object",
    "required": ["name", "geometry", "start_screen", "screens", "variables", "transitions", "tasks"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "geometry": {
            "type": "object",
            "required": ["width", "height"],
            "additionalProperties": False,
            "properties": {"width": {"type": "integer", "minimum": 1}, "height": {"type": "integer", "minimum": 1}},
        },
        "start_screen": {"type": "string"},
        "screens": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "widgets"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "title": {"type": "string"},
                    "widgets": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "label", "box"],
                            "additionalProperties": False,
                            "properties": {
                                "id": {"type": "string", "minLength": 1},
                                "label": {"type": "string", "minLength": 1},
                                "box": {"type": "array", "items": {"type": "integer", "minimum": 0},
                                        "minItems": 4, "maxItems": 4},
                                "kind": {"type": "string"},
                            },
                        },
                    },
                },
            },
        },
        "variables": {"type": "object", "additionalProperties": _SCALAR},
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["on"],
                "additionalProperties": False,
                "properties": {
                    "on": {
                        "type": "object",
                        "required": ["screen", "action"],
                        "additionalProperties": False,
                        "properties": {
                            "screen": {"oneOf": [{"type": "string"},
                                                 {"type": "array", "items": {"type": "string"}, "minItems": 1}]},
                            "widget": {"type": "string"},
                            "action": {"oneOf": [{"type": "string"},
                                                 {"type": "array", "items": {"type": "string"}, "minItems": 1}]},
                            "text": _PREDICATE,
                            "keys": _PREDICATE,
                            "direction": _PREDICATE,
                        },
                    },
                    "effects": {"type": "object", "additionalProperties": _SCALAR},
                    "goto": {"type": "string"},
                },
            },
        },
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "instruction", "goal", "max_steps"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "instruction": {"type": "string", "minLength": 1},
                    "goal": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "vars": {"type": "object", "additionalProperties": _SCALAR},
                            "screen": {"type": "string"},
                        },
                    },
                    "max_steps": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}


@dataclass(frozen=True)
class Screen:
    id: str
    title: str
    widgets: tuple[Widget, ...]

    def widget(self, wid: str) -> Widget | None:
        for w in self.widgets:
            if w.id == wid:
                return w
        return None


@dataclass(frozen=True)
class Transition:
    screens: tuple[str, ...]
    kinds: tuple[ActionType, ...]
    widget: str | None
    predicate: tuple[str, str, str | None] | None  # (payload field, op, operand)
    effects: tuple[tuple[str, str], ...]
    goto: str | None


@dataclass(frozen=True)
class Goal:
    vars: tuple[tuple[str, str], ...] = ()
    screen: str | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "Goal":
        d = d or {}
        return cls(tuple(sorted((k, str(v)) for k, v in d.get("vars", {}).items())), d.get("screen"))

    def to_dict(self) -> dict:
        out = {"vars": dict(self.vars)}
        if self.screen is not None:
            out["screen"] = self.screen
        return out


@dataclass(frozen=True)
class EnvTask:
    id: str
    instruction: str
    goal: Goal
    max_steps: int


@dataclass(frozen=True)
class EnvState:
    screen: str
    vars: tuple[str, ...]
    step: int = 0
    max_steps: int = 20

    @property
    def key(self):
        return (self.screen, self.vars)


@dataclass
class EnvDefinition:
    name: str
    geometry: ScreenGeometry
    start_screen: str
    screens: dict[str, Screen]
    var_names: tuple[str, ...]
    initial_vars: tuple[str, ...]
    transitions: tuple[Transition, ...]
    tasks: tuple[EnvTask, ...]
    source: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._var_index = {n: i for i, n in enumerate(self.var_names)}
        self._graph = None
        self._dist_cache: dict[Goal, dict] = {}

    # ---- episode mechanics

    def task(self, task_id: str) -> EnvTask:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(f"no task {task_id!r} in {self.name}")

    def reset(self, max_steps: int = 20) -> EnvState:
        return EnvState(self.start_screen, self.initial_vars, 0, max_steps)

    def step(self, state: EnvState, action: Action) -> EnvState:
        if state.step >= state.max_steps:
            raise EpisodeExhausted(f"episode already used {state.max_steps} steps")
        screen, values = self._apply(state.screen, state.vars, action)
        return EnvState(screen, values, state.step + 1, state.max_steps)

    def _apply(self, screen: str, values: tuple[str, ...], action: Action):
        tr = self.match(screen, action)
        if tr is None:
            return screen, values
        if tr.effects:
            values = list(values)
            for name, v in tr.effects:
                values[self._var_index[name]] = v
            values = tuple(values)
        return (tr.goto or screen), values

    def match(self, screen: str, action: Action) -> Transition | None:
        for tr in self.transitions:
            if screen in tr.screens and self._matches(tr, screen, action):
                return tr
        return None

    def _matches(self, tr: Transition, screen: str, action: Action) -> bool:
        if action.kind not in tr.kinds:
            return False
        if tr.widget is not None:
            box = self.screens[screen].widget(tr.widget).box
            if action.kind.family is Family.POINT:
                x, y = action.point
            elif action.kind.family is Family.BOX:
                x1, y1, x2, y2 = action.box
                x, y = (x1 + x2) / 2, (y1 + y2) / 2
            else:
                return False
            if not (box[0] <= x <= box[2] and box[1] <= y <= box[3]):
                return False
        if tr.predicate is not None:
            fam, op, operand = tr.predicate
            if action.kind.family.value != fam:
                return False
            value = action.payload_string
            if op == "equals":
                return value == operand
            if op == "contains":
                return operand in value
            if op == "nonempty":
                return value != ""
        return True

    def observe(self, state: EnvState) -> StateObservation:
        scr = self.screens[state.screen]
        parts = [f"screen {scr.id} ({scr.title})"]
        if scr.widgets:
            parts.append("widgets: " + ", ".join(
                f"'{w.label}' {w.kind} at ({w.box[0]},{w.box[1]},{w.box[2]},{w.box[3]})" for w in scr.widgets))
        else:
            parts.append("widgets: none")
        pairs = sorted(zip(self.var_names, state.vars))
        if pairs:
            parts.append("vars: " + ", ".join(f"{k}={v}" for k, v in pairs))
        return StateObservation(scr.id, "; ".join(parts), scr.widgets, tuple(pairs))

    def state_of(self, obs: StateObservation, step: int = 0, max_steps: int = 20) -> EnvState:
        """Recover the machine state behind an observation."""
        vm = obs.var_map
        return EnvState(obs.screen_id, tuple(vm[n] for n in self.var_names), step, max_steps)

    def goal_met(self, state: EnvState, goal: Goal) -> bool:
        if goal.screen is not None and state.screen != goal.screen:
            return False
        return all(state.vars[self._var_index[k]] == v for k, v in goal.vars)

    # ---- graph and distances

    def representative_actions(self, screen: str) -> list[Action]:
        """One concrete action per transition leaving ``screen`` (plus wait)."""
        out = []
        for tr in self.transitions:
            if screen not in tr.screens:
                continue
            for kind in tr.kinds:
                a = _representative(tr, kind, self.screens[screen])
                if a is not None:
                    out.append(a)
        return out

    def graph(self):
        """Reachable state graph from the start: dict key -> set of successor keys."""
        if self._graph is None:
            start = (self.start_screen, self.initial_vars)
            adj = {start: set()}
            queue = deque([start])
            reps = {s: self.representative_actions(s) for s in self.screens}
            while queue:
                key = queue.popleft()
                for a in reps[key[0]]:
                    nxt = self._apply(key[0], key[1], a)
                    if nxt != key:
                        adj[key].add(nxt)
                    if nxt not in adj:
                        adj[nxt] = set()
                        queue.append(nxt)
            self._graph = adj
        return self._graph

    def distances(self, goal: Goal) -> dict:
        """BFS distance from every reachable state to the nearest goal state."""
        if goal not in self._dist_cache:
            adj = self.graph()
            rev = {k: [] for k in adj}
            for k, succ in adj.items():
                for s in succ:
                    rev[s].append(k)
            dist = {}
            queue = deque()
            for k in sorted(adj):
                if self.goal_met(EnvState(k[0], k[1]), goal):
                    dist[k] = 0
                    queue.append(k)
            while queue:
                k = queue.popleft()
                for p in rev[k]:
                    if p not in dist:
                        dist[p] = dist[k] + 1
                        queue.append(p)
            self._dist_cache[goal] = dist
        return self._dist_cache[goal]

    def distance(self, state: EnvState | tuple, goal: Goal) -> float:
        key = state.key if isinstance(state, EnvState) else state
        return self.distances(goal).get(key, float("inf"))

    def start_distance(self, goal: Goal) -> float:
        return self.distance((self.start_screen, self.initial_vars), goal)

    def variable_values(self) -> dict[str, list[str]]:
        """All values each variable takes anywhere in the reachable graph."""
        seen = {n: [] for n in self.var_names}
        for _, values in sorted(self.graph()):
            for n, v in zip(self.var_names, values):
                if v not in seen[n]:
                    seen[n].append(v)
        return seen

    def widget_center(self, screen: str, wid: str) -> tuple[int, int]:
        b = self.screens[screen].widget(wid).box
        return (b[0] + b[2]) // 2, (b[1] + b[3]) // 2


def _representative(tr: Transition, kind: ActionType, screen: Screen) -> Action | None:
    family = kind.family
    if tr.widget is not None:
        b = screen.widget(tr.widget).box
        cx, cy = (b[0] + b[2]) // 2, (b[1] + b[3]) // 2
        if family is Family.POINT:
            return Action(kind, point=(cx, cy))
        if family is Family.BOX:
            return Action(kind, box=(b[0], b[1], b[2], b[3]))
        return None
    if family is Family.POINT:
        return Action(kind, point=(0, 0))
    if family is Family.BOX:
        return Action(kind, box=(0, 0, 1, 1))
    if family is Family.NONE:
        return Action(kind)
    operand = "x"
    if tr.predicate is not None and tr.predicate[1] in ("equals", "contains"):
        operand = tr.predicate[2]
    if family is Family.TEXT:
        return Action(kind, text=operand)
    if family is Family.KEYS:
        operand = operand if tr.predicate is not None and tr.predicate[1] in ("equals", "contains") else "enter"
        return Action(kind, keys=operand)
    operand = operand if operand in {d.value for d in Direction} else "down"
    return Action(kind, direction=Direction(operand))


# --------------------------------------------------------------------------
# loading and validation


def _kind_of(name: str) -> ActionType:
    if name == "type":
        return ActionType.TYPE_TEXT
    return ActionType(name)


def _schema_path(err) -> str:
    out = ""
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def parse_env(data: dict, source: str = "<memory>") -> EnvDefinition:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        diags = [f"{_schema_path(e)}: {e.message}" for e in errors]
        raise SchemaError(f"{source}: {len(diags)} schema error(s); first: {diags[0]}", diags)

    geom = ScreenGeometry(data["geometry"]["width"], data["geometry"]["height"])
    screens = {}
    diags = []
    for si, s in enumerate(data["screens"]):
        if s["id"] in screens:
            diags.append(f"screens[{si}].id: duplicate screen id {s['id']!r}")
        widgets = []
        for wi, w in enumerate(s["widgets"]):
            x1, y1, x2, y2 = w["box"]
            where = f"screens[{si}].widgets[{wi}]"
            if x1 > x2 or y1 > y2:
                diags.append(f"{where}.box: needs x1<=x2 and y1<=y2")
            if x2 > geom.width or y2 > geom.height:
                diags.append(f"{where}.box: outside the {geom.width}x{geom.height} screen")
            for other in widgets:
                if other.id == w["id"]:
                    diags.append(f"{where}.id: duplicate widget id {w['id']!r}")
                ob = other.box
                if not (x2 < ob[0] or ob[2] < x1 or y2 < ob[1] or ob[3] < y1):
                    diags.append(f"{where}.box: overlaps widget {other.id!r}")
            widgets.append(Widget(w["id"], w["label"], (x1, y1, x2, y2), w.get("kind", "button")))
        screens[s["id"]] = Screen(s["id"], s.get("title", s["id"]), tuple(widgets))
    if diags:
        raise SchemaError(f"{source}: {diags[0]}", diags)

    var_names = tuple(data["variables"])
    initial = tuple(str(data["variables"][n]) for n in var_names)
    dangling = []
    if data["start_screen"] not in screens:
        dangling.append(f"start_screen: unknown screen {data['start_screen']!r}")

    transitions = []
    seen_keys = {}
    for ti, t in enumerate(data["transitions"]):
        where = f"transitions[{ti}]"
        on = t["on"]
        scr = on["screen"] if isinstance(on["screen"], list) else [on["screen"]]
        for s in scr:
            if s not in screens:
                dangling.append(f"{where}.on.screen: unknown screen {s!r}")
        names = on["action"] if isinstance(on["action"], list) else [on["action"]]
        kinds = []
        for n in names:
            try:
                kinds.append(_kind_of(n))
            except ValueError:
                diags.append(f"{where}.on.action: unknown action {n!r}")
        wid = on.get("widget")
        if wid is not None:
            for s in scr:
                if s in screens and screens[s].widget(wid) is None:
                    dangling.append(f"{where}.on.widget: no widget {wid!r} on screen {s!r}")
            for k in kinds:
                if k.family not in (Family.POINT, Family.BOX):
                    diags.append(f"{where}.on.action: {k.value} cannot target a widget")
        preds = [(f, on[f]) for f in ("text", "keys", "direction") if f in on]
        predicate = None
        if len(preds) > 1:
            diags.append(f"{where}.on: at most one payload predicate")
        elif preds:
            fam, p = preds[0]
            op, operand = next(iter(p.items()))
            predicate = (fam, op, operand if op in ("equals", "contains") else None)
            if op == "any":
                predicate = None
            for k in kinds:
                if k.family.value != fam:
                    diags.append(f"{where}.on.{fam}: {k.value} has no {fam} payload")
        effects = []
        for name, v in t.get("effects", {}).items():
            if name not in var_names:
                dangling.append(f"{where}.effects: undeclared variable {name!r}")
            effects.append((name, str(v)))
        goto = t.get("goto")
        if goto is not None and goto not in screens:
            dangling.append(f"{where}.goto: unknown screen {goto!r}")
        for s in scr:
            for k in kinds:
                key = (s, k, wid, predicate)
                if key in seen_keys:
                    diags.append(f"{where}: shadowed by {seen_keys[key]} for {k.value} on {s!r}")
                seen_keys.setdefault(key, where)
        transitions.append(Transition(tuple(scr), tuple(kinds), wid, predicate, tuple(effects), goto))

    tasks = []
    task_ids = set()
    for ti, t in enumerate(data["tasks"]):
        where = f"tasks[{ti}]"
        if t["id"] in task_ids:
            diags.append(f"{where}.id: duplicate task id {t['id']!r}")
        task_ids.add(t["id"])
        goal = Goal.from_dict(t["goal"])
        for k, _ in goal.vars:
            if k not in var_names:
                dangling.append(f"{where}.goal.vars: undeclared variable {k!r}")
        if goal.screen is not None and goal.screen not in screens:
            dangling.append(f"{where}.goal.screen: unknown screen {goal.screen!r}")
        tasks.append(EnvTask(t["id"], t["instruction"], goal, t["max_steps"]))

    if dangling:
        raise DanglingReference(f"{source}: {dangling[0]}", dangling + diags)
    if diags:
        raise SchemaError(f"{source}: {diags[0]}", diags)

    env = EnvDefinition(
        name=data["name"],
        geometry=geom,
        start_screen=data["start_screen"],
        screens=screens,
        var_names=var_names,
        initial_vars=initial,
        transitions=tuple(transitions),
        tasks=tuple(tasks),
        source=source,
    )
    for t in env.tasks:
        d = env.start_distance(t.goal)
        if d == float("inf"):
            env.warnings.append(f"task {t.id!r}: goal unreachable from the start state")
        elif d > t.max_steps:
            env.warnings.append(f"task {t.id!r}: needs {d} steps but max_steps is {t.max_steps}")
    for w in env.warnings:
        log.warning("%s: %s", source, w)
    return env


def load_env(path) -> EnvDefinition:
    path = Path(path)
    if not path.exists() and not path.is_absolute() and (FIXTURES / path.name).exists():
        path = FIXTURES / path.name
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc})", [str(exc)]) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        diag = f"line {exc.lineno}, column {exc.colno}: {exc.msg}"
        raise SchemaError(f"{path}: {diag}", [diag]) from exc
    return parse_env(data, str(path))


def fixture_path(name: str) -> Path:
    return FIXTURES / f"{name}.env"


# --------------------------------------------------------------------------
# oracle judging


def goal_of(env: EnvDefinition, traj: Trajectory) -> Goal:
    if traj.goal is not None:
        return Goal.from_dict(traj.goal)
    return env.task(traj.task_id).goal


def progress_flags(env: EnvDefinition, traj: Trajectory, goal: Goal) -> list[bool]:
    """Step t makes progress iff it lowers the BFS distance to the goal by one."""
    keys = [env.state_of(s.state).key for s in traj.steps] + [env.state_of(traj.final_state).key]
    d = [env.distance(k, goal) for k in keys]
    return [d[t] != float("inf") and d[t + 1] == d[t] - 1 for t in range(len(traj))]


def oracle_judge(env: EnvDefinition, traj: Trajectory, goal: Goal | None = None) -> Judgment:
    goal = goal or goal_of(env, traj)
    if env.start_distance(goal) == float("inf"):
        raise GoalUnreachable(f"goal {goal.to_dict()} is unreachable in {env.name}")
    success = env.goal_met(env.state_of(traj.final_state), goal)
    flags = progress_flags(env, traj, goal)
    first_bad = next((t for t, ok in enumerate(flags) if not ok), None)
    captions = tuple(diff_observations(s.state, nxt) for s, nxt in
                     zip(traj.steps, [s.state for s in traj.steps[1:]] + [traj.final_state]))
    if success:
        return Judgment(True, redundant_from=first_bad, step_captions=captions,
                        rationale="goal holds in the final state")
    # every step progressed but the horizon cut the episode short: blame the last one
    err = first_bad if first_bad is not None else len(traj) - 1
    return Judgment(False, first_error_step=err, step_captions=captions,
                    rationale="goal does not hold in the final state")


class OracleJudge:
    """Exact judge backend over one or more environments (looked up by name)."""

    def __init__(self, *envs: EnvDefinition):
        self.envs = {e.name: e for e in envs}

    def _env(self, traj: Trajectory) -> EnvDefinition:
        if traj.env in self.envs:
            return self.envs[traj.env]
        if len(self.envs) == 1:
            return next(iter(self.envs.values()))
        raise KeyError(f"no environment named {traj.env!r}")

    def judge(self, traj: Trajectory) -> Judgment:
        return oracle_judge(self._env(traj), traj)

    def describe_change(self, before: StateObservation, after: StateObservation) -> str:
        return diff_observations(before, after)
