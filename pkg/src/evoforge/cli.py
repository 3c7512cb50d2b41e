"""Command-line entry point: ``evoforge <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 config or schema error, 3 backend
failure, 4 a requested success threshold was not met.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import (ActionParseError, BackendUnavailable, ConfigError, EnvLoadError,
                     EvoforgeError, NoSuccessfulTrajectories, SchemaError, ZeroGeometry)

log = logging.getLogger("evoforge")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_BACKEND, EXIT_CHECK = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--parallelism", type=int, default=None, help="concurrent episodes (0 = all cores)")
    common.add_argument("--json", action="store_true", help="print one JSON document on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    p = _Parser(prog="evoforge", description="Self-evolving GUI agent training on simulated software.",
                parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", parents=[common], help="run the self-evolution loop from a config file")
    r.add_argument("--config", required=True, help="TOML file whose keys are RunConfig fields")
    r.add_argument("--out", default=None, help="run directory (default runs/<config name>)")
    r.add_argument("--require-success", type=float, default=None,
                   help="exit 4 unless the final eval success rate reaches this value")

    d = sub.add_parser("distill", parents=[common], help="distill specialist runs into one generalist")
    d.add_argument("--runs", nargs="+", required=True, help="specialist run directories")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--config", default=None, help="config for the general phases (default: merged runs)")
    d.add_argument("--phases", type=int, default=1, help="general run_evolution phases after distillation")
    d.add_argument("--require-success", type=float, default=None)

    w = sub.add_parser("reward", parents=[common], help="score a predicted action against a reference")
    w.add_argument("--pred", required=True)
    w.add_argument("--ref", required=True)
    w.add_argument("--geom", default="100x100", help="screen size WxH")

    b = sub.add_parser("bench-judge", parents=[common], help="precision/NPV/AP of judgment dumps")
    b.add_argument("--pred", nargs="+", required=True, help="prediction JSONL file(s)")
    b.add_argument("--gt", required=True, help="ground-truth JSONL keyed by episode_id")
    b.add_argument("--csv", default=None, help="AP curve CSV when several prediction files are given")

    i = sub.add_parser("inspect", parents=[common], help="summarise a trajectories.jsonl file")
    i.add_argument("--traj", required=True)
    i.add_argument("--episode", default=None, help="show one episode in full")

    v = sub.add_parser("validate-env", parents=[common], help="check an environment definition file")
    v.add_argument("path")
    return p


def _emit(args, doc, text: str):
    if args.json:
        sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


def _overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.parallelism is not None:
        changes["parallelism"] = args.parallelism
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def _fmt_rate(x):
    return "n/a" if x is None else f"{x:.3f}"


# --------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    from .evolution import RunConfig, run_evolution

    cfg = _overrides(RunConfig.from_file(args.config), args)
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    rep = run_evolution(cfg, out)
    final = rep.curve[-1]
    lines = [f"run directory: {out}", f"entry success: {rep.entry_success_rate:.3f}"]
    for p in rep.phases:
        lines.append(f"phase {p.phase}: {p.successes}/{p.episodes} successful episodes, "
                     f"{p.discarded} discarded, eval {p.eval_success_rate:.3f}, "
                     f"held-out {_fmt_rate(p.heldout_success_rate)}")
    _emit(args, {"out_dir": str(out), **rep.to_dict()}, "\n".join(lines))
    if args.require_success is not None and final < args.require_success:
        log.error("final success %.3f is below the required %.3f", final, args.require_success)
        return EXIT_CHECK
    return EXIT_OK


def _merged_config(run_dirs):
    from .evolution import RunConfig

    cfgs = [RunConfig.from_dict(json.loads((Path(d) / "config.json").read_text())) for d in run_dirs]
    paths = []
    for c in cfgs:
        paths.extend(p for p in c.env_paths if p not in paths)
    return dataclasses.replace(cfgs[0], env_paths=tuple(paths))


def cmd_distill(args) -> int:
    from .evolution import (RunConfig, distill_generalist, evaluate_envs, initial_policy, load_envs,
                            run_evolution)

    try:
        cfg = RunConfig.from_file(args.config) if args.config else _merged_config(args.runs)
    except FileNotFoundError as exc:
        raise ConfigError(f"run directory without config.json: {exc.filename}") from exc
    cfg = _overrides(cfg, args)
    envs = load_envs(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy = distill_generalist(args.runs, initial_policy(cfg, envs), cfg)
    policy.save(out / "policy_distilled.npz")
    distilled, distilled_by_env = evaluate_envs(envs, policy)
    doc = {"out_dir": str(out), "distilled_success": distilled, "distilled_by_env": distilled_by_env}
    lines = [f"distilled success: {distilled:.3f} {distilled_by_env}"]
    final = distilled
    if args.phases > 0:
        gcfg = dataclasses.replace(cfg, phases=args.phases)
        seeds = {e.name: d for d in args.runs for e in envs if _run_has_env(d, e.name)}
        rep = run_evolution(gcfg, out / "general", policy=policy, seed_runs=seeds)
        final = rep.curve[-1]
        doc["general"] = rep.to_dict()
        lines.append(f"after {args.phases} general phase(s): {final:.3f} {rep.phases[-1].eval_by_env}")
    _emit(args, doc, "\n".join(lines))
    if args.require_success is not None and final < args.require_success:
        return EXIT_CHECK
    return EXIT_OK


def _run_has_env(run_dir, env_name) -> bool:
    from .evolution import latest_curriculum

    try:
        latest_curriculum(Path(run_dir), env_name)
        return True
    except FileNotFoundError:
        return False


def cmd_reward(args) -> int:
    from .actions import parse_action
    from .rewards import ScreenGeometry, reward

    try:
        geom = ScreenGeometry.parse(args.geom)
    except ZeroGeometry:
        raise
    except ValueError as exc:
        raise UsageError(f"bad --geom {args.geom!r}: {exc}") from exc
    try:
        pred, ref = parse_action(args.pred), parse_action(args.ref)
    except ActionParseError as exc:
        raise UsageError(f"cannot parse action: {exc}") from exc
    r = reward(pred, ref, geom)
    _emit(args, r.as_dict(), f"type_match {r.type_match}\nr_dist {r.r_dist:.6f}\ntotal {r.total:.6f}")
    return EXIT_OK


def cmd_bench_judge(args) -> int:
    from .judge_eval import bench_judge

    rep = bench_judge(args.pred, args.gt, args.csv)
    reps = rep["reports"] if "reports" in rep else [rep]
    lines = []
    for r in reps:
        c = r["confusion"]
        lines.append(f"{r['file']}: n={r['n']} tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']} "
                     f"precision={_fmt_rate(r['precision'])} npv={_fmt_rate(r['npv'])} "
                     f"AP={_fmt_rate(r['average_precision'])}")
    _emit(args, rep, "\n".join(lines))
    return EXIT_OK


def cmd_inspect(args) -> int:
    records = []
    with open(args.traj) as f:
        for n, line in enumerate(f, start=1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{args.traj}:{n}: {exc.msg}") from exc
    if args.episode is not None:
        match = [r for r in records if r.get("episode_id") == args.episode]
        if not match:
            raise UsageError(f"no episode {args.episode!r} in {args.traj}")
        r = match[0]
        lines = [f"episode {r['episode_id']} task {r.get('task_id')!r}: {r['task']}",
                 f"status {r.get('status')}"]
        labels = r.get("labels") or {}
        for k, s in enumerate(r["steps"]):
            tag = next((name for name in ("positive", "negative", "ignored") if k in labels.get(name, [])), "-")
            lines.append(f"  {k:2d} [{tag}] {s['observation']['screen_id']}: {s['action_text']}")
        _emit(args, r, "\n".join(lines))
        return EXIT_OK
    counts = {}
    for r in records:
        counts[r.get("status", "unknown")] = counts.get(r.get("status", "unknown"), 0) + 1
    summary = {"episodes": len(records), "status": counts,
               "steps": sum(len(r["steps"]) for r in records)}
    lines = [f"{len(records)} episodes, {summary['steps']} steps"]
    lines += [f"  {k}: {v}" for k, v in sorted(counts.items())]
    _emit(args, summary, "\n".join(lines))
    return EXIT_OK


def cmd_validate_env(args) -> int:
    from .sim_env import load_env

    try:
        env = load_env(args.path)
    except SchemaError as exc:
        doc = {"valid": False, "diagnostics": exc.diagnostics}
        _emit(args, doc, "\n".join(["invalid: " + str(exc)] + [f"  {d}" for d in exc.diagnostics]))
        return EXIT_CONFIG
    doc = {"valid": True, "name": env.name, "screens": len(env.screens),
           "widgets": sum(len(s.widgets) for s in env.screens.values()), "tasks": len(env.tasks),
           "reachable_states": len(env.graph()), "warnings": list(env.warnings)}
    text = (f"{env.name}: {doc['screens']} screens, {doc['widgets']} widgets, {doc['tasks']} tasks, "
            f"{doc['reachable_states']} reachable states")
    text += "".join(f"\nwarning: {w}" for w in env.warnings)
    _emit(args, doc, text)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "distill": cmd_distill,
    "reward": cmd_reward,
    "bench-judge": cmd_bench_judge,
    "inspect": cmd_inspect,
    "validate-env": cmd_validate_env,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "evoforge: error: a subcommand is required")
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"evoforge {args.command}: {exc}\n")
        return EXIT_USAGE
    except (ConfigError, EnvLoadError, SchemaError, ZeroGeometry, NoSuccessfulTrajectories) as exc:
        sys.stderr.write(f"evoforge {args.command}: {exc}\n")
        return EXIT_CONFIG
    except BackendUnavailable as exc:
        sys.stderr.write(f"evoforge {args.command}: backend failure: {exc}\n")
        return EXIT_BACKEND
    except (OSError, EvoforgeError, KeyError, ValueError) as exc:
        sys.stderr.write(f"evoforge {args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
