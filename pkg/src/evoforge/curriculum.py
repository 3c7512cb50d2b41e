"""Curriculum generator: guidebook memory and task-set evolution.

The scripted backend is a deterministic stand-in for a language model. It
reads the same inputs (state captions, exam results, change descriptions)
and writes tasks as text. Because the oracle judge needs a formal goal for
every task, the scripted backend also attaches one, derived from the
variable assignments named in the guidebook entries the task composes.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import BackendUnavailable, EmptyCaptions, InconsistentFeedback, MalformedModelOutput
from .judgment import ChangeDescription, last_json_object


@dataclass(frozen=True)
class GuideEntry:
    feature: str
    how_to: str
    discovered_phase: int


@dataclass(frozen=True)
class Guidebook:
    entries: tuple[GuideEntry, ...] = ()
    version: int = 0

    def features(self) -> list[str]:
        return [e.feature for e in self.entries]

    def extended(self, new_entries, version: int) -> "Guidebook":
        if version <= self.version:
            raise ValueError(f"guidebook version must increase ({self.version} -> {version})")
        have = set(self.features())
        added = []
        for e in new_entries:
            if e.feature not in have:
                have.add(e.feature)
                added.append(e)
        return Guidebook(self.entries + tuple(added), version)

    def to_text(self) -> str:
        lines = [f"# Guidebook v{self.version}", ""]
        for e in self.entries:
            lines += [f"## {e.feature}", e.how_to, f"(discovered in phase {e.discovered_phase})", ""]
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "Guidebook":
        m = re.match(r"# Guidebook v(\d+)", text)
        version = int(m.group(1)) if m else 0
        entries = []
        for block in text.split("\n## ")[1:]:
            lines = block.strip("\n").split("\n")
            phase = re.match(r"\(discovered in phase (\d+)\)", lines[-1])
            how = "\n".join(lines[1:-1] if phase else lines[1:])
            entries.append(GuideEntry(lines[0], how, int(phase.group(1)) if phase else 0))
        return cls(tuple(entries), version)


@dataclass(frozen=True)
class TaskInstruction:
    id: str
    text: str
    difficulty_tier: int
    source_phase: int
    goal: dict | None = None
    env: str = ""
    references: tuple[str, ...] = ()

    def to_dict(self):
        return {
            "id": self.id,
            "text": self.text,
            "difficulty_tier": self.difficulty_tier,
            "source_phase": self.source_phase,
            "goal": self.goal,
            "env": self.env,
            "references": list(self.references),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], d["text"], d["difficulty_tier"], d["source_phase"], d.get("goal"),
                   d.get("env", ""), tuple(d.get("references", ())))


@dataclass(frozen=True)
class TaskSet:
    tasks: tuple[TaskInstruction, ...]
    phase: int = 0

    def __post_init__(self):
        ids = [t.id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise ValueError("task ids must be unique")

    def __len__(self):
        return len(self.tasks)

    def ids(self) -> set[str]:
        return {t.id for t in self.tasks}

    def to_json(self) -> str:
        return json.dumps([t.to_dict() for t in self.tasks], indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, phase: int = 0) -> "TaskSet":
        return cls(tuple(TaskInstruction.from_dict(d) for d in json.loads(text)), phase)


@dataclass(frozen=True)
class PhaseFeedback:
    exam: tuple[tuple[str, str], ...]
    change_descriptions: tuple[ChangeDescription, ...] = ()

    def failed(self) -> list[str]:
        return [tid for tid, status in self.exam if status != "success"]


def cap_descriptions(cds, cap: int = 100) -> list[ChangeDescription]:
    """First-seen unique descriptions (by text), at most ``cap`` of them."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    seen = set()
    out = []
    for cd in cds:
        if cd.description in seen or cd.description == "no visible change":
            continue
        seen.add(cd.description)
        out.append(cd)
        if len(out) == cap:
            break
    return out


def _fresh_ids(phase: int, retries):
    """``p<phase>-NNN`` ids, skipping any a retried task already carries."""
    taken = {t.id for t in retries}
    for k in itertools.count():
        tid = f"p{phase}-{k:03d}"
        if tid not in taken:
            yield tid


def _check_feedback(taskset: TaskSet, feedback: PhaseFeedback):
    ids = taskset.ids()
    for tid, status in feedback.exam:
        if tid not in ids:
            raise InconsistentFeedback(f"feedback mentions unknown task {tid!r}")
        if status not in ("success", "failure"):
            raise InconsistentFeedback(f"task {tid!r} has status {status!r}")


# --------------------------------------------------------------------------
# scripted backend

_WIDGET_RE = re.compile(r"'([^']+)' (\w+) at \((\d+),(\d+),(\d+),(\d+)\)")
_VARS_RE = re.compile(r"vars: (.*)$")
_SCREEN_RE = re.compile(r"^screen (\S+)")
_VAR_CHANGE = re.compile(r"variable '([^']+)' changed from '([^']*)' to '([^']*)'")
_WIDGET_APPEARED = re.compile(r"widget '([^']+)' appeared")
_SCREEN_CHANGE = re.compile(r"screen changed from '([^']+)' to '([^']+)'")


def parse_caption(caption: str):
    """(screen id, [(label, kind, box)], {var: value}) from an observation caption."""
    screen = _SCREEN_RE.match(caption)
    widgets = [(m.group(1), m.group(2), tuple(int(m.group(i)) for i in range(3, 7)))
               for m in _WIDGET_RE.finditer(caption)]
    vm = _VARS_RE.search(caption)
    variables = {}
    if vm:
        for pair in vm.group(1).split(", "):
            k, _, v = pair.partition("=")
            variables[k] = v
    return (screen.group(1) if screen else ""), widgets, variables


def task_text(values: list[str]) -> str:
    if len(values) == 1:
        return f"Make it {values[0]}"
    return "Make it " + ", ".join(values[:-1]) + " and " + values[-1]


class ScriptedCurriculum:
    """Deterministic curriculum: retry failures, then compose discovered features.

    ``env`` is used only to ground tasks with goals and to drop tasks that
    cannot be completed within ``horizon`` steps.
    """

    def __init__(self, env, seed: int = 0, max_combo: int = 4, horizon: int = 20):
        self.env = env
        self.seed = seed
        self.max_combo = max_combo
        self.horizon = horizon
        # what the start screen shows; values already in place are not worth a task
        _, _, self.initial_vars = parse_caption(env.observe(env.reset()).caption)

    def init_tasks(self, captions):
        from .actions import Action, ActionType
        from .sim_env import EnvState

        if not captions:
            raise EmptyCaptions("no captions to seed the curriculum")
        entries, tasks = [], []
        seen = set()
        start = self.env.reset()
        for caption in captions:
            screen, widgets, _ = parse_caption(caption)
            for label, kind, box in widgets:
                feature = f"widget {label}"
                if feature in seen:
                    continue
                seen.add(feature)
                entries.append(GuideEntry(feature, f"{kind} on screen '{screen}' at {box}", 0))
                if screen != start.screen:
                    continue
                centre = ((box[0] + box[2]) // 2, (box[1] + box[3]) // 2)
                after = self.env.step(start, Action(ActionType.CLICK, point=centre))
                goal = self._postcondition(start, after)
                if goal is None:
                    continue
                tid = "p0-" + re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")
                tasks.append(TaskInstruction(tid, f"activate {label}", 0, 0, goal, self.env.name, (feature,)))
        return Guidebook(tuple(entries), 0), TaskSet(tuple(tasks), 0)

    def _postcondition(self, before, after):
        if after.key == before.key:
            return None
        changed = {n: v for n, v, old in zip(self.env.var_names, after.vars, before.vars) if v != old}
        if changed:
            return {"vars": changed}
        return {"vars": {}, "screen": after.screen}

    def entries_from(self, cds, phase: int) -> list[GuideEntry]:
        out = []
        for cd in cds:
            before_screen = cd.before_id.split("#")[0]
            after_screen = cd.after_id.split("#")[0]
            for m in _SCREEN_CHANGE.finditer(cd.description):
                out.append(GuideEntry(f"screen {m.group(2)}", f"opened from screen '{m.group(1)}'", phase))
            for m in _WIDGET_APPEARED.finditer(cd.description):
                out.append(GuideEntry(f"widget {m.group(1)}", f"appears on screen '{after_screen}'", phase))
            for m in _VAR_CHANGE.finditer(cd.description):
                out.append(GuideEntry(f"{m.group(1)}={m.group(3)}", f"set on screen '{before_screen}'", phase))
        return out

    def _fits(self, goal) -> bool:
        d = self.env.start_distance(goal)
        return 1 <= d <= self.horizon // 2

    def _widget_tasks(self, guidebook: Guidebook):
        """``activate <label>`` for widgets discovered away from the start screen."""
        from .actions import Action, ActionType
        from .sim_env import EnvState, Goal

        first_state = {}
        for screen, values in self.env.graph():
            first_state.setdefault(screen, EnvState(screen, values))
        screens = {e.feature for e in guidebook.entries if e.feature.startswith("screen ")}
        out = []
        for e in guidebook.entries:
            m = re.fullmatch(r"appears on screen '([^']+)'", e.how_to)
            if not (e.feature.startswith("widget ") and m):
                continue
            sid, label = m.group(1), e.feature[len("widget "):]
            if f"screen {sid}" not in screens or sid not in first_state:
                continue
            widget = next((w for w in self.env.screens[sid].widgets if w.label == label), None)
            if widget is None:
                continue
            before = first_state[sid]
            after = self.env.step(before, Action(ActionType.CLICK, point=self.env.widget_center(sid, widget.id)))
            goal = self._postcondition(before, after)
            if goal is None or not self._fits(Goal.from_dict(goal)):
                continue
            out.append((f"activate {label}", goal, (f"screen {sid}", e.feature)))
        return out

    def _composite_tasks(self, guidebook: Guidebook):
        """Tasks asking for one or more discovered variable settings at once."""
        from .sim_env import Goal

        by_var: dict[str, list[tuple[str, str]]] = {}
        screens = set()
        for e in guidebook.entries:
            if e.feature.startswith("screen "):
                screens.add(e.feature)
            elif "=" in e.feature:
                var, value = e.feature.split("=", 1)
                if var in self.env.var_names and self.initial_vars.get(var) != value:
                    by_var.setdefault(var, []).append((e.feature, value))
        how = {e.feature: e.how_to for e in guidebook.entries}
        out = []
        names = sorted(by_var)
        for r in range(1, self.max_combo + 1):
            for combo_vars in itertools.combinations(names, r):
                for picks in itertools.product(*(by_var[v] for v in combo_vars)):
                    refs = [f for f, _ in picks]
                    if r == 1:
                        # a single effect is composed with the screen that sets it
                        m = re.search(r"screen '([^']+)'", how[refs[0]])
                        scr = f"screen {m.group(1)}" if m else None
                        if scr not in screens:
                            continue
                        refs.append(scr)
                    goal = Goal(tuple(sorted(zip(combo_vars, (v for _, v in picks)))))
                    if self._fits(goal):
                        out.append((task_text([v for _, v in picks]), goal.to_dict(), tuple(refs)))
        return out

    def candidates(self, guidebook: Guidebook) -> list[tuple[str, dict, tuple[str, ...]]]:
        return self._widget_tasks(guidebook) + self._composite_tasks(guidebook)

    @staticmethod
    def _balanced_order(cands, rng) -> list[int]:
        """Shuffled candidate indices, interleaved so each goal size gets an equal share.

        There are far more combinations than single effects; drawing
        uniformly would leave almost no single-effect tasks.
        """
        groups: dict[int, list[int]] = {}
        for i, (_, goal, _) in enumerate(cands):
            groups.setdefault(len((goal or {}).get("vars", {})), []).append(i)
        queues = [[g[j] for j in rng.permutation(len(g))] for _, g in sorted(groups.items())]
        # shorter groups repeat so every size keeps its share
        return [q[k % len(q)] for k in range(max(len(q) for q in queues)) for q in queues]

    def evolve(self, guidebook: Guidebook, taskset: TaskSet, feedback: PhaseFeedback, n_tasks: int):
        _check_feedback(taskset, feedback)
        phase = taskset.phase + 1
        gb = guidebook.extended(self.entries_from(feedback.change_descriptions, taskset.phase), phase)
        by_id = {t.id: t for t in taskset.tasks}
        retries = [TaskInstruction(t.id, t.text, phase, t.source_phase, t.goal, t.env, t.references)
                   for t in (by_id[tid] for tid in feedback.failed())][:n_tasks]
        cands = self.candidates(gb)
        if not cands:
            # nothing composable yet: repeat the current tasks so the phase is not empty
            cands = [(t.text, t.goal, t.references) for t in taskset.tasks]
        order = self._balanced_order(cands, np.random.default_rng([self.seed, phase]))
        ids = _fresh_ids(phase, retries)
        fresh = []
        while len(retries) + len(fresh) < n_tasks:
            text, goal, refs = cands[order[len(fresh) % len(order)]]
            fresh.append(TaskInstruction(next(ids), text, phase, phase, goal, self.env.name, refs))
        return gb, TaskSet(tuple(retries + fresh), phase)


# --------------------------------------------------------------------------
# remote backend

CURRICULUM_SYSTEM = (
    "You write practice tasks for a computer-use agent exploring one application. "
    "Given the current guidebook, the exam results and the observed GUI changes, update the "
    "guidebook and propose the next, slightly harder tasks. Reply with one JSON object with "
    "keys guidebook (list of {feature, how_to}) and tasks (list of strings)."
)


class RemoteCurriculum:
    """Curriculum backed by a chat model; goals are left empty (judge decides)."""

    def __init__(self, client, env_name: str = "", retries: int = 3):
        self.client = client
        self.env_name = env_name
        self.retries = max(1, retries)

    def _ask(self, prompt: str) -> dict:
        for _ in range(self.retries):
            reply = self.client.chat([
                {"role": "system", "content": CURRICULUM_SYSTEM},
                {"role": "user", "content": prompt},
            ])
            try:
                return last_json_object(reply)
            except MalformedModelOutput:
                continue
        raise BackendUnavailable(f"curriculum backend returned no JSON in {self.retries} attempts")

    def _tasks(self, texts, phase, ids):
        return [TaskInstruction(next(ids), str(t), phase, phase, None, self.env_name) for t in texts]

    def init_tasks(self, captions):
        if not captions:
            raise EmptyCaptions("no captions to seed the curriculum")
        d = self._ask("Initial screen captions:\n" + "\n".join(captions))
        entries = tuple(GuideEntry(str(e.get("feature", "")), str(e.get("how_to", "")), 0)
                        for e in d.get("guidebook", []))
        tasks = self._tasks(d.get("tasks", []), 0, _fresh_ids(0, ()))
        if not tasks:
            raise BackendUnavailable("curriculum backend proposed no tasks")
        return Guidebook(entries, 0), TaskSet(tuple(tasks), 0)

    def evolve(self, guidebook, taskset, feedback, n_tasks):
        _check_feedback(taskset, feedback)
        phase = taskset.phase + 1
        prompt = "\n".join([
            guidebook.to_text(),
            "Exam results:",
            *(f"- {next(t.text for t in taskset.tasks if t.id == tid)}: {st}" for tid, st in feedback.exam),
            "Observed changes:",
            *(f"- {cd.description}" for cd in feedback.change_descriptions),
            f"Propose exactly {n_tasks} tasks.",
        ])
        d = self._ask(prompt)
        new = [GuideEntry(str(e.get("feature", "")), str(e.get("how_to", "")), taskset.phase)
               for e in d.get("guidebook", [])]
        gb = guidebook.extended(new, phase)
        by_id = {t.id: t for t in taskset.tasks}
        retries = [TaskInstruction(t.id, t.text, phase, t.source_phase, t.goal, t.env, t.references)
                   for t in (by_id[tid] for tid in feedback.failed())][:n_tasks]
        texts = [str(t) for t in d.get("tasks", [])]
        if not texts and len(retries) < n_tasks:
            raise BackendUnavailable("curriculum backend proposed no tasks")
        ids = _fresh_ids(phase, retries)
        fresh = []
        while len(retries) + len(fresh) < n_tasks:
            fresh.extend(self._tasks(texts, phase, ids))
        return gb, TaskSet(tuple(retries + fresh[: n_tasks - len(retries)]), phase)
