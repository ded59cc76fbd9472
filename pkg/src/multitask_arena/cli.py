"""Command line entry point: ``arena validate|run|oracle|report|play``.

Exit codes: 0 success, 1 validation failure, 2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .agents import AgentConfig, AgentKind, make_agent, run_episode
from .engine import EndReason, Episode, EpisodeOutcome, end_feedback
from .metrics import (
    attach_trajectory_stats,
    compute_metrics,
    curve_csv,
    fmt,
    metrics_csv,
    progress_curve,
    taxonomy_csv,
    waits_csv,
)
from .model import (
    CorpusError,
    TaskSet,
    TaskValidationError,
    build_task_sets,
    bundled_corpus_path,
    bundled_manifest_path,
    load_corpus,
    load_manifest,
    load_task,
    load_vocabulary,
)
from .oracle import (
    BRUTE_FORCE_MAX_ACTIONS,
    Method,
    ScheduleSizeError,
    brute_force_minimal_time,
    greedy_minimal_time,
    oracle_csv,
    oracle_rows,
)

log = logging.getLogger("multitask_arena")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("ARENA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _manifest_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    bundled = bundled_manifest_path(arg if arg.endswith(".json") else f"{arg}.json")
    if bundled.exists():
        return bundled
    raise ConfigError(f"manifest not found: {arg}")


def _constraints(arg: str | None) -> tuple[str, ...]:
    return tuple(x.strip() for x in (arg or "").split(",") if x.strip())


def _task_sets(corpus: str | None, manifest: str, constraint: str | None, only: str | None = None) -> list[TaskSet]:
    vocabulary = load_vocabulary()
    tasks = load_corpus(corpus, vocabulary)
    entries = load_manifest(_manifest_path(manifest))
    if only is not None:
        entries = [e for e in entries if e.id == only]
        if not entries:
            raise ConfigError(f"set {only!r} is not in the manifest")
    try:
        return build_task_sets(entries, tasks, vocabulary, _constraints(constraint))
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    root = Path(args.corpus) if args.corpus else bundled_corpus_path()
    if not root.is_dir():
        print(f"error: corpus directory not found: {root}", file=sys.stderr)
        return EXIT_CONFIG
    vocabulary = load_vocabulary()
    failures, seen = 0, {}
    files = sorted(root.glob("*.task"))
    for path in files:
        try:
            task = load_task(path, vocabulary)
        except TaskValidationError as exc:
            failures += 1
            for v in exc.violations:
                print(f"{path}: {exc.task_id}: {v}")
            continue
        except CorpusError as exc:
            failures += 1
            print(str(exc))
            continue
        except OSError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if task.id in seen:
            failures += 1
            print(f"{path}: duplicate task id {task.id} (also in {seen[task.id]})")
        seen[task.id] = path.name
    print(f"{len(files) - failures}/{len(files)} task files ok")
    return EXIT_INVALID if failures else EXIT_OK


# --------------------------------------------------------------------------- run


def _schedule_for(task_set: TaskSet):
    if len(task_set.actions) <= BRUTE_FORCE_MAX_ACTIONS:
        return brute_force_minimal_time(task_set)
    return greedy_minimal_time(task_set)


def _episode_job(task_set: TaskSet, config: AgentConfig, time_limit: int | None) -> dict:
    if config.kind is AgentKind.REPLAY:
        config = replace(config, schedule=_schedule_for(task_set))
    run = run_episode(task_set, make_agent(config, task_set), time_limit)
    return {
        "outcome": run.outcome.to_json(),
        "records": [r.to_json() for r in run.records],
        "transcript": run.transcript,
        "error": run.error,
    }


def _episode_key(set_id: str, seed: int | None, many_seeds: bool) -> str:
    return f"{set_id}.seed{seed}" if many_seeds else set_id


def write_reports(out: Path, agent: str, task_sets: dict[str, TaskSet], episodes: list[dict], time_limit: int | None) -> None:
    """Write metrics, taxonomy, waits and curve CSVs from collected episodes (sorted by key)."""
    outcomes = [EpisodeOutcome.from_json(e["outcome"]) for e in episodes]
    _write(out / "metrics.csv", metrics_csv(agent, outcomes))
    _write(out / "taxonomy.csv", taxonomy_csv(agent, [(e["key"], e["records"]) for e in episodes]))
    per_set = []
    for e in episodes:
        ts = task_sets[e["outcome"]["set_id"]]
        report = compute_metrics([EpisodeOutcome.from_json(e["outcome"])])
        (row,) = attach_trajectory_stats(report, [(ts, e["records"])], time_limit)
        per_set.append((e["key"], row[1], row[2]))
        _write(out / "curves" / f"{e['key']}.csv", curve_csv(progress_curve(e["records"], ts, time_limit)))
    _write(out / "waits.csv", waits_csv(agent, per_set))


def _print_summary(agent: str, outcomes: list[EpisodeOutcome]) -> None:
    rep = compute_metrics(outcomes)
    print(
        f"{agent}: episodes={rep.episodes} harness_errors={rep.harness_errors} "
        f"AS={fmt(rep.AS, 2)} CS={fmt(rep.CS, 2)} CR={fmt(rep.CR, 2)} CT={fmt(rep.CT, 2)}"
    )


def cmd_run(args) -> int:
    if args.agent == AgentKind.EXTERNAL.value and not args.endpoint:
        raise ConfigError("--agent external needs --endpoint")
    task_sets = _task_sets(args.corpus, args.manifest, args.constraint)
    seeds = args.seed or [0]
    many = len(seeds) > 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc

    jobs = []
    for ts in task_sets:
        for seed in seeds:
            config = AgentConfig(AgentKind(args.agent), seed=seed, endpoint=args.endpoint, timeout_s=args.timeout)
            jobs.append((_episode_key(ts.id, seed, many), seed, ts, config))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_episode_job, ts, cfg, args.max_time_override) for _, _, ts, cfg in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_episode_job(ts, cfg, args.max_time_override) for _, _, ts, cfg in jobs]

    episodes = []
    for (key, seed, _, _), res in sorted(zip(jobs, results), key=lambda p: p[0][0]):
        res.update(key=key, seed=seed)
        episodes.append(res)
        _write(out / "trajectories" / f"{key}.jsonl", "".join(json.dumps(r) + "\n" for r in res["records"]))
        _write(out / "transcripts" / f"{key}.txt", res["transcript"])
    _write(
        out / "outcomes.jsonl",
        "".join(
            json.dumps({"key": e["key"], "agent": args.agent, "seed": e["seed"], "error": e["error"], **e["outcome"]}) + "\n"
            for e in episodes
        ),
    )
    run_config = {
        "agent": args.agent,
        "corpus": args.corpus,
        "manifest": args.manifest,
        "constraint": args.constraint,
        "seeds": seeds,
        "max_time_override": args.max_time_override,
    }
    _write(out / "run.json", json.dumps(run_config, indent=2) + "\n")
    write_reports(out, args.agent, {ts.id: ts for ts in task_sets}, episodes, args.max_time_override)
    _print_summary(args.agent, [EpisodeOutcome.from_json(e["outcome"]) for e in episodes])
    return EXIT_OK


# --------------------------------------------------------------------------- report


def cmd_report(args) -> int:
    out = Path(args.out)
    try:
        config = json.loads((out / "run.json").read_text(encoding="utf-8"))
        lines = (out / "outcomes.jsonl").read_text(encoding="utf-8").splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run directory {out}: {exc}") from exc
    task_sets = {
        ts.id: ts
        for ts in _task_sets(args.corpus or config["corpus"], args.manifest or config["manifest"], config["constraint"])
    }
    episodes = []
    for line in lines:
        doc = json.loads(line)
        path = out / "trajectories" / f"{doc['key']}.jsonl"
        try:
            records = [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]
        except OSError as exc:
            raise ConfigError(f"missing trajectory {path}: {exc}") from exc
        outcome = {k: v for k, v in doc.items() if k not in ("key", "agent", "seed", "error")}
        if outcome["set_id"] not in task_sets:
            raise ConfigError(f"set {outcome['set_id']!r} is not in the manifest")
        episodes.append({"key": doc["key"], "outcome": outcome, "records": records})
    if not episodes:
        raise ConfigError(f"no outcomes in {out}")
    episodes.sort(key=lambda e: e["key"])
    write_reports(out, config["agent"], task_sets, episodes, config.get("max_time_override"))
    _print_summary(config["agent"], [EpisodeOutcome.from_json(e["outcome"]) for e in episodes])
    return EXIT_OK


# --------------------------------------------------------------------------- oracle


def cmd_oracle(args) -> int:
    task_sets = _task_sets(args.corpus, args.manifest, args.constraint)
    rows, status = [], EXIT_OK
    for ts in task_sets:
        try:
            rows.extend(oracle_rows([ts], brute_force=not args.greedy_only))
        except ScheduleSizeError as exc:
            print(f"error: {exc} (use --greedy-only)", file=sys.stderr)
            rows.extend(oracle_rows([ts], brute_force=False))
            status = EXIT_INVALID
    by_set: dict[str, dict[str, int]] = {}
    for r in rows:
        by_set.setdefault(r["task_set"], {})[r["method"]] = r["makespan_min"]
    for set_id, m in by_set.items():
        g, b = m.get(Method.GREEDY.value), m.get(Method.BRUTE_FORCE.value)
        if g is not None and b is not None and g != b:
            print(f"note: {set_id}: greedy {g} min vs optimum {b} min", file=sys.stderr)
    text = oracle_csv(rows)
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return status


# --------------------------------------------------------------------------- play


def cmd_play(args) -> int:
    (task_set,) = _task_sets(args.corpus, args.manifest, args.constraint, only=args.set)
    episode = Episode(task_set, args.max_time_override)
    print(episode.instruction, end="\n\n")
    while not episode.done:
        print(episode.prompt())
        try:
            text = input()
        except EOFError:
            episode.abort(EndReason.ABORTED)
            break
        record = episode.step(text)
        print(record.feedback_text, end="\n\n")
    print(end_feedback(episode.outcome.reason).text)
    print(f"progress {fmt(episode.outcome.final_progress_pct, 2)} at t={episode.state.clock_min}")
    if args.out:
        out = Path(args.out)
        _write(out / f"{task_set.id}.txt", episode.render_transcript())
        _write(out / f"{task_set.id}.jsonl", "".join(json.dumps(r.to_json()) + "\n" for r in episode.records))
    return EXIT_OK


# --------------------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arena", description="Timed multitask environment for language agents.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest_default="single.json"):
        p.add_argument("--corpus", help="directory of .task files (default: bundled corpus)")
        p.add_argument("--manifest", default=manifest_default, help="manifest path or bundled name")
        p.add_argument("--constraint", help="comma-separated object names shared across tasks")

    p = sub.add_parser("validate", help="check every task file in a corpus")
    p.add_argument("--corpus")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run an agent over every set of a manifest")
    common(p)
    p.add_argument("--agent", required=True, choices=[k.value for k in AgentKind])
    p.add_argument("--seed", type=int, action="append", help="repeat for several seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--max-time-override", type=int)
    p.add_argument("--endpoint", help="external agent command line or http(s) URL")
    p.add_argument("--timeout", type=float, default=60.0, help="seconds per external turn")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="recompute CSV reports from a run directory")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="greedy and brute-force makespans as CSV")
    common(p)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--greedy-only", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("play", help="play one set interactively")
    common(p)
    p.add_argument("--set", required=True, help="set id from the manifest")
    p.add_argument("--max-time-override", type=int)
    p.add_argument("--out", help="directory for the saved transcript")
    p.set_defaults(func=cmd_play)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError, TaskValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
