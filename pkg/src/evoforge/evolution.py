"""The self-evolution loop: explore, judge, label, train, evolve the curriculum.

One phase runs every task of the current task set once with the current
policy, judges and labels each trajectory, writes the trajectories to disk,
and then trains on the labelled steps with ``combined_step``. Between phases
the curriculum turns the exam results and observed GUI changes into the next
task set. All randomness is derived from ``(seed, phase, ...)`` so a run
(or a resumed run) is reproducible byte for byte with exact backends.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import ActionType
from .curriculum import (Guidebook, PhaseFeedback, RemoteCurriculum, ScriptedCurriculum, TaskSet,
                         cap_descriptions)
from .errors import (BackendUnavailable, ConfigError, EnvLoadError, InconsistentJudgment,
                     MalformedModelOutput, NoSuccessfulTrajectories, SchemaError)
from .grpo import GrpoConfig, TrainingItem, behavior_cloning_step, combined_step, cosine_lr
from .judgment import (RemoteJudge, Step, Trajectory, describe_change, judge, label_steps)
from .policy import ToyPolicy, pretrain_grounding
from .sim_env import EnvDefinition, Goal, OracleJudge, load_env

log = logging.getLogger(__name__)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    env_paths: tuple[str, ...] = ("paint-lite.env",)
    phases: int = 3
    tasks_per_phase: int = 100
    group_size: int = 8
    batch_size: int = 16
    lr: float = 20.0
    eps: float = 0.2
    beta: float = 0.04
    gamma: float = 0.2
    ai_clamp: float = 5.0
    epochs: int = 30
    temperature: float = 0.0  # remote judge/curriculum sampling
    rollout_temperature: float = 0.3  # exploration episodes; evaluation is always greedy
    group_temperature: float = 1.0  # GRPO group draws from the reference
    ref_refresh: str = "step"
    eval_fraction: float = 0.2
    description_cap: int = 100
    max_combo: int = 4
    pretrain_steps: int = 200
    pretrain_lr: float = 1.0
    distill_steps: int = 100
    distill_lr: float = 1.0
    seed: int = 0
    parallelism: int = 0
    judge_backend: str = "oracle"
    curriculum_backend: str = "scripted"
    backend_url: str = ""
    model: str = "default"

    def validate(self) -> "RunConfig":
        for name in ("phases", "tasks_per_phase", "group_size", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.group_size < 2:
            raise ConfigError("group_size must be >= 2")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0,1], got {self.gamma}")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must lie in [0,1)")
        if self.lr <= 0 or self.eps <= 0 or self.beta < 0 or self.ai_clamp <= 0:
            raise ConfigError("lr, eps and ai_clamp must be positive and beta non-negative")
        if self.ref_refresh not in ("phase", "step"):
            raise ConfigError("ref_refresh must be 'phase' or 'step'")
        if self.judge_backend not in ("oracle", "remote"):
            raise ConfigError("judge_backend must be 'oracle' or 'remote'")
        if self.curriculum_backend not in ("scripted", "remote"):
            raise ConfigError("curriculum_backend must be 'scripted' or 'remote'")
        if not self.env_paths:
            raise ConfigError("env_paths is empty")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        if "env_paths" in d:
            paths = d["env_paths"]
            d["env_paths"] = (paths,) if isinstance(paths, str) else tuple(paths)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        for f in dataclasses.fields(cls):
            v = getattr(cfg, f.name)
            expected = type(getattr(cls(), f.name))
            if expected is float and isinstance(v, int) and not isinstance(v, bool):
                cfg = dataclasses.replace(cfg, **{f.name: float(v)})
            elif not isinstance(getattr(cfg, f.name), expected):
                raise ConfigError(f"{f.name} should be {expected.__name__}, got {v!r}")
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = cls.from_dict(data)
        # env paths are relative to the config file unless they name a bundled fixture
        paths = []
        for p in cfg.env_paths:
            q = Path(p)
            if not q.is_absolute() and (path.parent / q).exists():
                q = path.parent / q
            paths.append(str(q))
        return dataclasses.replace(cfg, env_paths=tuple(paths))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["env_paths"] = list(self.env_paths)
        return d

    def grpo(self) -> GrpoConfig:
        return GrpoConfig(self.group_size, self.eps, self.beta, self.gamma, self.lr, self.ai_clamp,
                          self.group_temperature)

    def workers(self) -> int:
        return self.parallelism if self.parallelism > 0 else (os.cpu_count() or 1)


@dataclass
class Episode:
    trajectory: Trajectory
    success: bool
    judgment: object = None
    labels: object = None
    status: str = "pending"  # success | failure | discarded
    error: str = ""
    held_out: bool = False

    def record(self) -> dict:
        d = self.trajectory.to_dict()
        d["judgment"] = self.judgment.to_dict() if self.judgment is not None else None
        d["labels"] = self.labels.to_dict() if self.labels is not None else None
        d["status"] = self.status
        d["held_out"] = self.held_out
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class PhaseReport:
    phase: int
    episodes: int
    successes: int
    failures: int
    discarded: int
    mean_reward: float
    n_positive: int
    n_negative: int
    train_steps: int
    losses: list = field(default_factory=list)
    heldout_success_rate: float | None = None
    eval_success_rate: float = 0.0
    eval_by_env: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class EvolutionReport:
    entry_success_rate: float
    entry_by_env: dict
    phases: list[PhaseReport]
    out_dir: str = ""
    policy: ToyPolicy | None = None

    @property
    def curve(self) -> list[float]:
        return [self.entry_success_rate] + [p.eval_success_rate for p in self.phases]

    def to_dict(self):
        return {
            "entry_success_rate": self.entry_success_rate,
            "entry_by_env": self.entry_by_env,
            "curve": self.curve,
            "phases": [p.to_dict() for p in self.phases],
        }


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _rate(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


# --------------------------------------------------------------------------
# episodes


def rollout(env: EnvDefinition, policy, instruction: str, goal: Goal, max_steps: int,
            temperature: float, rng, episode_id="", phase=0, task_id="") -> Trajectory:
    """Run one episode; it ends on the goal, a ``finished`` action, or the step budget."""
    state = env.reset(max_steps)
    steps = []
    while state.step < max_steps and not env.goal_met(state, goal):
        obs = env.observe(state)
        action = policy.act(obs, instruction, temperature, rng)
        steps.append(Step(obs, action))
        state = env.step(state, action)
        if action.kind is ActionType.FINISHED:
            break
    if not steps:
        raise ValueError(f"task {task_id!r} is already satisfied in the start state")
    return Trajectory(instruction, tuple(steps), env.observe(state), episode_id, phase, task_id,
                      goal.to_dict(), env.name)


def evaluate(env: EnvDefinition, policy, tasks=None, horizon=None) -> tuple[float, dict]:
    """Greedy success rate over ``tasks`` (defaults to the environment's own tasks)."""
    tasks = env.tasks if tasks is None else tasks
    results = {}
    for t in tasks:
        goal = t.goal if isinstance(t.goal, Goal) else Goal.from_dict(t.goal)
        text = getattr(t, "instruction", None) or t.text
        max_steps = getattr(t, "max_steps", None) or horizon or 20
        traj = rollout(env, policy, text, goal, max_steps, 0.0, np.random.default_rng(0))
        results[t.id] = bool(env.goal_met(env.state_of(traj.final_state), goal))
    return _rate(list(results.values())), results


def evaluate_envs(envs, policy) -> tuple[float, dict]:
    by_env = {e.name: evaluate(e, policy)[0] for e in envs}
    return _rate(list(by_env.values())), by_env


# --------------------------------------------------------------------------
# backends


def make_judge(cfg: RunConfig, envs):
    if cfg.judge_backend == "oracle":
        return OracleJudge(*envs)
    from .remote import ChatClient

    return RemoteJudge(ChatClient(cfg.backend_url or None, cfg.model, temperature=cfg.temperature))


def make_curriculum(cfg: RunConfig, env):
    if cfg.curriculum_backend == "scripted":
        horizon = max(t.max_steps for t in env.tasks) if env.tasks else 20
        return ScriptedCurriculum(env, cfg.seed, cfg.max_combo, horizon)
    from .remote import ChatClient

    return RemoteCurriculum(ChatClient(cfg.backend_url or None, cfg.model, temperature=cfg.temperature), env.name)


def load_envs(cfg: RunConfig) -> list[EnvDefinition]:
    envs = []
    for p in cfg.env_paths:
        try:
            envs.append(load_env(p))
        except SchemaError as exc:
            raise EnvLoadError(f"cannot load environment {p}: {exc}") from exc
    names = [e.name for e in envs]
    if len(set(names)) != len(names):
        raise EnvLoadError(f"duplicate environment names {names}")
    return envs


# --------------------------------------------------------------------------
# one phase


def _held_out(taskset: TaskSet, cfg: RunConfig, phase: int, env_index: int) -> set[str]:
    n = len(taskset)
    k = int(math.floor(cfg.eval_fraction * n + 0.5)) if n >= 2 else 0
    order = np.random.default_rng([cfg.seed, phase, env_index, 7]).permutation(n)
    return {taskset.tasks[i].id for i in order[:k]}


def run_phase(cfg: RunConfig, policy, env, guidebook=None, taskset=None, phase=None,
              judge_backend=None, out_dir=None, benchmark_envs=None):
    """Run one phase for one environment, or several when ``env``/``taskset`` are lists.

    Returns (policy, PhaseReport, PhaseFeedback or list of them). The policy
    is updated in place and also returned.
    """
    envs = list(env) if isinstance(env, (list, tuple)) else [env]
    tasksets = list(taskset) if isinstance(taskset, (list, tuple)) else [taskset]
    if any(ts is None or len(ts) == 0 for ts in tasksets):
        raise ValueError("run_phase needs a non-empty task set")
    phase = tasksets[0].phase if phase is None else phase
    judge_backend = judge_backend or make_judge(cfg, envs)
    benchmark_envs = envs if benchmark_envs is None else benchmark_envs

    jobs = []
    for ei, (e, ts) in enumerate(zip(envs, tasksets)):
        held = _held_out(ts, cfg, phase, ei)
        for ti, t in enumerate(ts.tasks):
            jobs.append((ei, ti, e, t, t.id in held))

    def explore(job):
        ei, ti, e, t, held = job
        rng = np.random.default_rng([cfg.seed, phase, ei, ti])
        goal = Goal.from_dict(t.goal)
        max_steps = getattr(t, "max_steps", None) or max((x.max_steps for x in e.tasks), default=20)
        eid = f"{e.name}/p{phase}/{t.id}"
        traj = rollout(e, policy, t.text, goal, max_steps, cfg.rollout_temperature, rng, eid, phase, t.id)
        ep = Episode(traj, e.goal_met(e.state_of(traj.final_state), goal), held_out=held)
        try:
            ep.judgment = judge(traj, judge_backend)
            ep.labels = label_steps(traj, ep.judgment)
            ep.status = "success" if ep.judgment.correctness else "failure"
        except (InconsistentJudgment, MalformedModelOutput, BackendUnavailable) as exc:
            ep.status = "discarded"
            ep.error = f"{type(exc).__name__}: {exc}"
            log.warning("episode %s discarded: %s", eid, ep.error)
        cds = []
        try:
            backend = None if isinstance(judge_backend, OracleJudge) else judge_backend
            states = [s.state for s in traj.steps] + [traj.final_state]
            cds = [describe_change(a, b, backend) for a, b in zip(states, states[1:])]
        except BackendUnavailable as exc:
            log.warning("episode %s: no change descriptions (%s)", eid, exc)
        return ep, cds

    with ThreadPoolExecutor(max_workers=cfg.workers()) as pool:
        results = list(pool.map(explore, jobs))
    episodes = [r[0] for r in results]

    if out_dir is not None:
        pdir = Path(out_dir) / f"phase_{phase}"
        pdir.mkdir(parents=True, exist_ok=True)
        with open(pdir / "trajectories.jsonl", "w") as f:
            for ep in episodes:
                f.write(_dump(ep.record()) + "\n")

    items = []
    for (ei, _, e, _, _), ep in zip(jobs, episodes):
        if ep.status == "discarded" or ep.held_out:
            continue
        for idx, step in enumerate(ep.trajectory.steps):
            if idx in ep.labels.positive:
                items.append(TrainingItem(step.state, ep.trajectory.task, step.action, True, e.geometry))
            elif idx in ep.labels.negative:
                items.append(TrainingItem(step.state, ep.trajectory.task, step.action, False, e.geometry))

    gcfg = cfg.grpo()
    rng = np.random.default_rng([cfg.seed, phase, 1_000_003])
    n_batches = math.ceil(len(items) / cfg.batch_size)
    total_steps = n_batches * cfg.epochs
    losses = []
    anchor = ref = policy.snapshot()
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(items))
        for b in range(n_batches):
            batch = [items[i] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            if cfg.ref_refresh == "step":
                ref = policy.snapshot()
            rep = combined_step(batch, policy, ref, gcfg, rng, cosine_lr(cfg.lr, step, total_steps), anchor)
            losses.append({"phase": phase, "step": step, **rep.as_dict()})
            step += 1

    held_rates = []
    for (ei, _, e, t, held) in jobs:
        if held:
            goal = Goal.from_dict(t.goal)
            max_steps = max((x.max_steps for x in e.tasks), default=20)
            traj = rollout(e, policy, t.text, goal, max_steps, 0.0, np.random.default_rng(0))
            held_rates.append(e.goal_met(e.state_of(traj.final_state), goal))
    eval_rate, by_env = evaluate_envs(benchmark_envs, policy)

    rewards = [x["mean_reward"] for x in losses if not math.isnan(x["mean_reward"])]
    report = PhaseReport(
        phase=phase,
        episodes=len(episodes),
        successes=sum(ep.status == "success" for ep in episodes),
        failures=sum(ep.status == "failure" for ep in episodes),
        discarded=sum(ep.status == "discarded" for ep in episodes),
        mean_reward=_rate(rewards),
        n_positive=sum(it.positive for it in items),
        n_negative=sum(not it.positive for it in items),
        train_steps=step,
        losses=losses,
        heldout_success_rate=_rate(held_rates) if held_rates else None,
        eval_success_rate=eval_rate,
        eval_by_env=by_env,
    )

    feedbacks = []
    for ei, ts in enumerate(tasksets):
        mine = [(job, r) for job, r in zip(jobs, results) if job[0] == ei]
        exam = tuple((job[3].id, "success" if ep.status == "success" else "failure") for job, (ep, _) in mine)
        cds = cap_descriptions([cd for _, (_, c) in mine for cd in c], cfg.description_cap)
        feedbacks.append(PhaseFeedback(exam, tuple(cds)))
    return policy, report, (feedbacks if isinstance(env, (list, tuple)) else feedbacks[0])


# --------------------------------------------------------------------------
# the full loop


def _artifact(out: Path, stem: str, env_name: str, multi: bool, version: int, ext: str) -> Path:
    tag = f"{stem}_{env_name}" if multi else stem
    return out / f"{tag}_v{version}.{ext}"


def initial_policy(cfg: RunConfig, envs) -> ToyPolicy:
    return pretrain_grounding(ToyPolicy(), envs, cfg.pretrain_steps, cfg.pretrain_lr)


def run_evolution(cfg: RunConfig, out_dir=None, policy=None, seed_runs=None) -> EvolutionReport:
    """Initial tasks, then ``cfg.phases`` rounds of run_phase + evolve.

    ``policy`` replaces the freshly pre-trained starting policy (used when a
    distilled generalist continues training). ``seed_runs`` maps environment
    names to earlier run directories whose latest guidebook and task set
    seed the curriculum instead of the initial tasks. An ``out_dir`` that
    already holds completed phases is resumed from its last one.
    """
    cfg.validate()
    envs = load_envs(cfg)
    multi = len(envs) > 1
    out = Path(out_dir) if out_dir is not None else None
    judge_backend = make_judge(cfg, envs)
    curricula = [make_curriculum(cfg, e) for e in envs]

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(_dump(cfg.to_dict()) + "\n")

    # resume from the last phase whose report exists
    done = 0
    if out is not None:
        while (out / f"phase_{done}" / "report.json").exists() and \
                (out / f"policy_v{done + 1}.npz").exists() and done < cfg.phases:
            done += 1

    if done:
        policy = ToyPolicy.load(out / f"policy_v{done}.npz")
        guidebooks = [Guidebook.from_text(_artifact(out, "guidebook", e.name, multi, done, "txt").read_text())
                      for e in envs]
        tasksets = [TaskSet.from_json(_artifact(out, "tasks", e.name, multi, done, "json").read_text(), done)
                    for e in envs]
        summary = json.loads((out / "entry.json").read_text())
        entry, entry_by_env = summary["entry_success_rate"], summary["entry_by_env"]
        reports = [PhaseReport(**json.loads((out / f"phase_{p}" / "report.json").read_text()))
                   for p in range(done)]
        _truncate_metrics(out / "metrics.jsonl", done)
    else:
        policy = policy.copy() if policy is not None else initial_policy(cfg, envs)
        guidebooks, tasksets = [], []
        for e, cur in zip(envs, curricula):
            if seed_runs and e.name in seed_runs:
                gb, ts = latest_curriculum(Path(seed_runs[e.name]), e.name)
                # this run numbers its own curriculum versions from 0
                gb = Guidebook(gb.entries, 0)
            else:
                gb, ts = cur.init_tasks([e.observe(e.reset()).caption])
            guidebooks.append(gb)
            tasksets.append(ts)
        entry, entry_by_env = evaluate_envs(envs, policy)
        reports = []
        if out is not None:
            (out / "entry.json").write_text(_dump({"entry_success_rate": entry, "entry_by_env": entry_by_env}) + "\n")
            (out / "metrics.jsonl").write_text(
                _dump({"event": "entry", "eval_success_rate": entry, "eval_by_env": entry_by_env}) + "\n")
            _save_version(out, 0, policy, guidebooks, tasksets, envs, multi)
        log.info("entry success rate %.3f", entry)

    for p in range(done, cfg.phases):
        tasksets = [TaskSet(ts.tasks, p) for ts in tasksets]
        policy, report, feedbacks = run_phase(cfg, policy, envs, guidebooks, tasksets, p, judge_backend, out)
        reports.append(report)
        if out is not None:
            (out / f"phase_{p}" / "report.json").write_text(_dump(report.to_dict()) + "\n")
            with open(out / "metrics.jsonl", "a") as f:
                for row in report.losses:
                    f.write(_dump(row) + "\n")
                f.write(_dump({"event": "phase_end", "phase": p, "episodes": report.episodes,
                               "successes": report.successes, "failures": report.failures,
                               "discarded": report.discarded, "eval_success_rate": report.eval_success_rate,
                               "eval_by_env": report.eval_by_env,
                               "heldout_success_rate": report.heldout_success_rate}) + "\n")
        log.info("phase %d: %d/%d successful episodes, eval success %.3f", p, report.successes,
                 report.episodes, report.eval_success_rate)
        new_g, new_t = [], []
        for cur, gb, ts, fb in zip(curricula, guidebooks, tasksets, feedbacks):
            g2, t2 = cur.evolve(gb, ts, fb, cfg.tasks_per_phase)
            new_g.append(g2)
            new_t.append(t2)
        guidebooks, tasksets = new_g, new_t
        if out is not None:
            _save_version(out, p + 1, policy, guidebooks, tasksets, envs, multi)

    result = EvolutionReport(entry, entry_by_env, reports, str(out) if out else "", policy)
    if out is not None:
        (out / "report.json").write_text(_dump(result.to_dict()) + "\n")
    return result


def _save_version(out, version, policy, guidebooks, tasksets, envs, multi):
    for e, gb, ts in zip(envs, guidebooks, tasksets):
        _artifact(out, "guidebook", e.name, multi, version, "txt").write_text(gb.to_text())
        _artifact(out, "tasks", e.name, multi, version, "json").write_text(ts.to_json() + "\n")
    policy.save(out / f"policy_v{version}.npz")


def _truncate_metrics(path: Path, done: int):
    keep = []
    for line in path.read_text().splitlines():
        row = json.loads(line)
        if row.get("event") == "entry" or row.get("phase", 0) < done:
            keep.append(line)
    path.write_text("".join(x + "\n" for x in keep))


def latest_curriculum(run_dir: Path, env_name: str):
    """Newest (guidebook, task set) written by a run for ``env_name``."""
    for multi in (False, True):
        versions = sorted(
            int(p.stem.rsplit("_v", 1)[1])
            for p in run_dir.glob(f"tasks{'_' + env_name if multi else ''}_v*.json")
        )
        if versions:
            v = versions[-1]
            gb = Guidebook.from_text(_artifact(run_dir, "guidebook", env_name, multi, v, "txt").read_text())
            ts = TaskSet.from_json(_artifact(run_dir, "tasks", env_name, multi, v, "json").read_text(), v)
            return gb, ts
    raise FileNotFoundError(f"no curriculum for {env_name} in {run_dir}")


# --------------------------------------------------------------------------
# specialist to generalist


def successful_steps(run_dirs):
    """Positive-labelled (observation, instruction, action) triples from successful episodes."""
    from .judgment import StateObservation  # noqa: F401  (records decode through Trajectory)

    items = []
    for d in run_dirs:
        for path in sorted(Path(d).glob("phase_*/trajectories.jsonl")):
            for line in path.read_text().splitlines():
                rec = json.loads(line)
                if rec.get("status") != "success":
                    continue
                traj = Trajectory.from_dict(rec)
                for idx in rec["labels"]["positive"]:
                    s = traj.steps[idx]
                    items.append((s.state, traj.task, s.action))
    return items


def distill_generalist(run_dirs, base_policy, cfg: RunConfig):
    """Behaviour-clone all successful specialist steps into ``base_policy``."""
    items = successful_steps(run_dirs)
    if not items:
        raise NoSuccessfulTrajectories(f"no successful trajectories in {list(map(str, run_dirs))}")
    policy = base_policy.copy()
    for step in range(cfg.distill_steps):
        behavior_cloning_step(items, policy, cosine_lr(cfg.distill_lr, step, cfg.distill_steps))
    return policy
