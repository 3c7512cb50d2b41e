"""Trajectory judging, state-change descriptions, and step labeling.

A judge backend is any object with ``judge(traj) -> Judgment`` and
``describe_change(before, after) -> str``. The exact backend lives in
``sim_env.OracleJudge``; ``RemoteJudge`` talks to a chat-completion server.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

from .actions import Action, parse_action, serialize_action
from .errors import IndexOutOfRange, InconsistentJudgment, MalformedModelOutput


@dataclass(frozen=True)
class Widget:
    id: str
    label: str
    box: tuple[int, int, int, int]
    kind: str = "button"

    def to_dict(self):
        return {"id": self.id, "label": self.label, "box": list(self.box), "kind": self.kind}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], d["label"], tuple(d["box"]), d.get("kind", "button"))


@dataclass(frozen=True)
class StateObservation:
    screen_id: str
    caption: str
    widgets: tuple[Widget, ...] = ()
    variables: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        ids = [w.id for w in self.widgets]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate widget ids on screen {self.screen_id!r}")

    @property
    def var_map(self) -> dict[str, str]:
        return dict(self.variables)

    def to_dict(self):
        return {
            "screen_id": self.screen_id,
            "caption": self.caption,
            "widgets": [w.to_dict() for w in self.widgets],
            "variables": dict(self.variables),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["screen_id"],
            d["caption"],
            tuple(Widget.from_dict(w) for w in d.get("widgets", ())),
            tuple(sorted((str(k), str(v)) for k, v in d.get("variables", {}).items())),
        )


@dataclass(frozen=True)
class Step:
    state: StateObservation
    action: Action


@dataclass(frozen=True)
class Trajectory:
    task: str
    steps: tuple[Step, ...]
    final_state: StateObservation
    episode_id: str = ""
    phase: int = 0
    task_id: str = ""
    goal: dict | None = None
    env: str = ""

    def __post_init__(self):
        if not self.steps:
            raise ValueError("trajectory has no steps")

    def __len__(self):
        return len(self.steps)

    def to_dict(self):
        return {
            "episode_id": self.episode_id,
            "task_id": self.task_id,
            "task": self.task,
            "phase": self.phase,
            "env": self.env,
            "goal": self.goal,
            "steps": [
                {"observation": s.state.to_dict(), "action_text": serialize_action(s.action)}
                for s in self.steps
            ],
            "final_observation": self.final_state.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        steps = tuple(
            Step(StateObservation.from_dict(s["observation"]), parse_action(s["action_text"]))
            for s in d["steps"]
        )
        return cls(
            task=d["task"],
            steps=steps,
            final_state=StateObservation.from_dict(d["final_observation"]),
            episode_id=d.get("episode_id", ""),
            phase=d.get("phase", 0),
            task_id=d.get("task_id", ""),
            goal=d.get("goal"),
            env=d.get("env", ""),
        )


@dataclass(frozen=True)
class Judgment:
    correctness: bool
    redundant_from: int | None = None
    first_error_step: int | None = None
    step_captions: tuple[str, ...] = ()
    rationale: str = ""
    # probability that the task was accomplished; used as the ranking score
    confidence: float | None = None

    def __post_init__(self):
        if self.correctness and self.first_error_step is not None:
            raise InconsistentJudgment("successful trajectory cannot have a first error step")
        if not self.correctness and self.first_error_step is None:
            raise InconsistentJudgment("failed trajectory needs a first error step")
        if not self.correctness and self.redundant_from is not None:
            raise InconsistentJudgment("only successful trajectories can be redundant")
        for name in ("redundant_from", "first_error_step"):
            v = getattr(self, name)
            if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
                raise InconsistentJudgment(f"{name} must be a non-negative step index, got {v!r}")
        if self.confidence is None:
            object.__setattr__(self, "confidence", 1.0 if self.correctness else 0.0)
        elif not 0.0 <= self.confidence <= 1.0:
            raise InconsistentJudgment(f"confidence {self.confidence} outside [0,1]")
        object.__setattr__(self, "step_captions", tuple(self.step_captions))

    def check_length(self, n_steps: int):
        for name in ("redundant_from", "first_error_step"):
            v = getattr(self, name)
            if v is not None and v >= n_steps:
                raise InconsistentJudgment(f"{name}={v} but trajectory has {n_steps} steps")

    def to_dict(self):
        return {
            "correctness": self.correctness,
            "redundant_from": self.redundant_from,
            "first_error_step": self.first_error_step,
            "step_captions": list(self.step_captions),
            "rationale": self.rationale,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            bool(d["correctness"]),
            d.get("redundant_from"),
            d.get("first_error_step"),
            tuple(d.get("step_captions", ())),
            d.get("rationale", ""),
            d.get("confidence"),
        )


@dataclass(frozen=True)
class StepLabels:
    positive: frozenset[int] = field(default_factory=frozenset)
    negative: frozenset[int] = field(default_factory=frozenset)
    ignored: frozenset[int] = field(default_factory=frozenset)

    def to_dict(self):
        return {k: sorted(getattr(self, k)) for k in ("positive", "negative", "ignored")}


@dataclass(frozen=True)
class ChangeDescription:
    before_id: str
    after_id: str
    description: str


def label_steps(traj: Trajectory | int, j: Judgment) -> StepLabels:
    """Split step indices into correct / failure / ignored by the verdict.

    Success without redundancy marks every step correct; success with
    redundancy from ``k`` keeps steps before ``k``; failure at ``e`` keeps
    steps before ``e`` and marks ``e`` as the failure action.
    """
    n = traj if isinstance(traj, int) else len(traj)
    if j.correctness:
        cut = n if j.redundant_from is None else j.redundant_from
        if j.redundant_from is not None and cut >= n:
            raise IndexOutOfRange(f"redundant_from={cut} beyond {n} steps")
        return StepLabels(frozenset(range(cut)), frozenset(), frozenset(range(cut, n)))
    e = j.first_error_step
    if e >= n:
        raise IndexOutOfRange(f"first_error_step={e} beyond {n} steps")
    return StepLabels(frozenset(range(e)), frozenset({e}), frozenset(range(e + 1, n)))


# --------------------------------------------------------------------------
# model-output parsing

_KEYMAP = {
    "correctness": "correctness",
    "correct": "correctness",
    "redundant": "redundant_from",
    "redundantfrom": "redundant_from",
    "firsterrorstep": "first_error_step",
    "stepcaptions": "step_captions",
    "captions": "step_captions",
    "confidence": "confidence",
    "rationale": "rationale",
}


def _json_objects(text: str):
    dec = json.JSONDecoder()
    pos = 0
    while True:
        start = text.find("{", pos)
        if start < 0:
            return
        try:
            obj, end = dec.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        pos = end


def last_json_object(text: str) -> dict:
    found = None
    for obj in _json_objects(text):
        found = obj
    if found is None:
        raise MalformedModelOutput("no JSON object found in model output")
    return found


def _step_index(v, name):
    if v is None or v is False:
        return None
    if v is True:
        raise InconsistentJudgment(f"{name} given as bare true without a step index")
    if isinstance(v, str) and v.strip().isdigit():
        v = int(v)
    if not isinstance(v, int):
        raise MalformedModelOutput(f"{name} must be a step index, got {v!r}")
    return v


def parse_judgment(model_text: str, n_steps: int | None = None) -> Judgment:
    raw = last_json_object(model_text)
    d = {}
    for k, v in raw.items():
        key = _KEYMAP.get(re.sub(r"[^a-z]", "", str(k).lower()))
        if key:
            d[key] = v
    if not isinstance(d.get("correctness"), bool):
        raise MalformedModelOutput("missing boolean Correctness")
    captions = d.get("step_captions") or ()
    if not isinstance(captions, (list, tuple)):
        raise MalformedModelOutput("StepCaptions must be a list")
    conf = d.get("confidence")
    if conf is not None and (isinstance(conf, bool) or not isinstance(conf, (int, float))):
        raise MalformedModelOutput(f"Confidence must be a number, got {conf!r}")
    j = Judgment(
        correctness=d["correctness"],
        redundant_from=_step_index(d.get("redundant_from"), "Redundant"),
        first_error_step=_step_index(d.get("first_error_step"), "FirstErrorStep"),
        step_captions=tuple(str(c) for c in captions),
        rationale=str(d.get("rationale", "")),
        confidence=None if conf is None else float(conf),
    )
    if n_steps is not None:
        j.check_length(n_steps)
    return j


# --------------------------------------------------------------------------
# state-change descriptions


def observation_id(obs: StateObservation) -> str:
    digest = hashlib.blake2b(obs.caption.encode(), digest_size=4).hexdigest()
    return f"{obs.screen_id}#{digest}"


def diff_observations(before: StateObservation, after: StateObservation) -> str:
    """Deterministic one-sentence-per-change diff of two observations."""
    out = []
    if before.screen_id != after.screen_id:
        out.append(f"screen changed from '{before.screen_id}' to '{after.screen_id}'.")
    bw = {w.id: w for w in before.widgets}
    aw = {w.id: w for w in after.widgets}
    for wid in sorted(aw.keys() - bw.keys()):
        out.append(f"widget '{aw[wid].label}' appeared.")
    for wid in sorted(bw.keys() - aw.keys()):
        out.append(f"widget '{bw[wid].label}' disappeared.")
    for wid in sorted(aw.keys() & bw.keys()):
        if aw[wid].label != bw[wid].label:
            out.append(f"widget '{wid}' label changed from '{bw[wid].label}' to '{aw[wid].label}'.")
    bv, av = before.var_map, after.var_map
    for name in sorted(bv.keys() | av.keys()):
        if bv.get(name) != av.get(name):
            out.append(f"variable '{name}' changed from '{bv.get(name)}' to '{av.get(name)}'.")
    return " ".join(out) if out else "no visible change"


def describe_change(before: StateObservation, after: StateObservation, backend=None) -> ChangeDescription:
    text = diff_observations(before, after) if backend is None else backend.describe_change(before, after)
    return ChangeDescription(observation_id(before), observation_id(after), text)


def judge(traj: Trajectory, backend) -> Judgment:
    j = backend.judge(traj)
    j.check_length(len(traj))
    return j


# --------------------------------------------------------------------------
# remote backend

JUDGE_SYSTEM = (
    "You evaluate a computer-use agent. Caption each step, then decide whether the task "
    "was accomplished. Finish with one JSON object with keys Correctness (bool), "
    "Redundant (step index where redundant steps begin, or false), FirstErrorStep "
    "(step index of the first wrong action, or null), StepCaptions (list of strings) "
    "and Confidence (probability in [0,1] that the task succeeded)."
)

CHANGE_SYSTEM = "Describe in detail how the GUI changed between the two states."


def render_trajectory(traj: Trajectory) -> str:
    lines = [f"Task: {traj.task}"]
    for i, s in enumerate(traj.steps):
        lines.append(f"Step {i} state: {s.state.caption}")
        lines.append(f"Step {i} action: {serialize_action(s.action)}")
    lines.append(f"Final state: {traj.final_state.caption}")
    return "\n".join(lines)


class RemoteJudge:
    """Judge backed by a chat-completion model; replies are mined for JSON."""

    def __init__(self, client):
        self.client = client

    def judge(self, traj: Trajectory) -> Judgment:
        reply = self.client.chat([
            {"role": "system", "content": JUDGE_SYSTEM},
            {"role": "user", "content": render_trajectory(traj)},
        ])
        return parse_judgment(reply, len(traj))

    def describe_change(self, before: StateObservation, after: StateObservation) -> str:
        reply = self.client.chat([
            {"role": "system", "content": CHANGE_SYSTEM},
            {"role": "user", "content": f"Before: {before.caption}\nAfter: {after.caption}"},
        ])
        return reply.strip() or "no visible change"
