"""Scores, action taxonomy, wait analysis and progress curves from episode logs.

All arithmetic is exact (``Fraction``); rounding happens only when writing CSV.
A trajectory is any sequence of turns, either :class:`TurnRecord` objects or
their JSON dicts.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .engine import (
    EndReason,
    Episode,
    EpisodeOutcome,
    FeedbackKind,
    TurnRecord,
    startable_actions,
)
from .model import TaskSet

UNDEFINED = "—"


class Category(str, Enum):
    VALID_ACTION = "valid_action"
    WAIT = "wait"
    INVALID_ACTION_OR_OBJECT = "invalid_action_or_object"
    DEPENDENCY_VIOLATION = "dependency_violation"
    REPEATING_COMPLETED = "repeating_completed"
    OBJECT_MISMATCHED = "object_mismatched"


_CATEGORY = {
    FeedbackKind.ACTION_START: Category.VALID_ACTION,
    FeedbackKind.WAIT_ACK: Category.WAIT,
    FeedbackKind.INVALID_ACTION: Category.INVALID_ACTION_OR_OBJECT,
    FeedbackKind.NONEXISTENT_OBJECT: Category.INVALID_ACTION_OR_OBJECT,
    FeedbackKind.WRONG_INPUT: Category.DEPENDENCY_VIOLATION,
    # a busy object is a timing dependency that has not resolved yet
    FeedbackKind.OCCUPIED_OBJECT: Category.DEPENDENCY_VIOLATION,
    FeedbackKind.ALREADY_COMPLETED: Category.REPEATING_COMPLETED,
    FeedbackKind.MISMATCHED_OBJECT: Category.OBJECT_MISMATCHED,
}


def _kind(turn: TurnRecord | Mapping) -> FeedbackKind:
    if isinstance(turn, TurnRecord):
        return turn.feedback.kind
    return FeedbackKind(turn["feedback_kind"])


def _text(turn: TurnRecord | Mapping) -> str:
    return turn.agent_text if isinstance(turn, TurnRecord) else turn["agent_text"]


def classify_turn(turn: TurnRecord | Mapping) -> Category:
    kind = _kind(turn)
    try:
        return _CATEGORY[kind]
    except KeyError:
        raise ValueError(f"turn feedback {kind.value} is not an agent action outcome") from None


def taxonomy_counts(turns: Iterable[TurnRecord | Mapping]) -> Counter:
    counts = Counter({c: 0 for c in Category})
    counts.update(classify_turn(t) for t in turns)
    return counts


def raw_kind_counts(turns: Iterable[TurnRecord | Mapping]) -> Counter:
    return Counter(_kind(t) for t in turns)


@dataclass(frozen=True)
class SetScore:
    set_id: str
    progress: Fraction
    minute: int
    success: bool


@dataclass
class MetricsReport:
    AS: Fraction | None
    CS: Fraction | None
    CR: Fraction | None  # percent
    CT: Fraction | None  # None when nothing succeeded
    per_set: list[SetScore]
    harness_errors: int = 0
    taxonomy: Counter = field(default_factory=Counter)
    raw_kinds: Counter = field(default_factory=Counter)
    waits: tuple[int, int] = (0, 0)  # (necessary, unnecessary)
    max_necessary_waits: int = 0

    @property
    def episodes(self) -> int:
        return len(self.per_set)


def compute_metrics(outcomes: Sequence[EpisodeOutcome]) -> MetricsReport:
    """AS, CS, CR and CT over the scored outcomes; harness errors are only counted.

    Each task set is one unit, however many tasks it combines. A set's time is
    the minute its best progress was reached.
    """
    if not outcomes:
        raise ValueError("no outcomes to score")
    scored = [o for o in outcomes if o.reason is not EndReason.HARNESS_ERROR]
    per_set = [
        SetScore(o.set_id, o.final_progress_pct, o.max_progress_minute, o.reason is EndReason.ALL_DONE)
        for o in scored
    ]
    harness = len(outcomes) - len(scored)
    if not per_set:
        return MetricsReport(None, None, None, None, [], harness)
    n = len(per_set)
    total_p = sum((s.progress for s in per_set), Fraction(0))
    total_t = sum(s.minute for s in per_set)
    wins = [s for s in per_set if s.success]
    return MetricsReport(
        AS=total_p / n,
        CS=total_p / total_t if total_t else Fraction(0),
        CR=Fraction(100 * len(wins), n),
        CT=Fraction(sum(s.minute for s in wins), len(wins)) if wins else None,
        per_set=per_set,
        harness_errors=harness,
    )


# --------------------------------------------------------------------------- replay-based analyses


def replay(turns: Sequence[TurnRecord | Mapping], task_set: TaskSet, time_limit_min: int | None = None):
    """Re-run the logged agent texts, yielding ``(episode before turn, turn)`` pairs.

    The episode object is advanced after each yield, so callers can inspect the
    state the agent faced.
    """
    episode = Episode(task_set, time_limit_min)
    for turn in turns:
        if episode.done:
            raise ValueError("trajectory continues past the end of the episode")
        yield episode, turn
        record = episode.step(_text(turn))
        if record.feedback.kind is not _kind(turn):
            raise ValueError(f"trajectory diverges from the engine at t={record.minute}")
    yield episode, None


def decompose_waits(
    turns: Sequence[TurnRecord | Mapping], task_set: TaskSet, time_limit_min: int | None = None
) -> tuple[int, int]:
    """(necessary, unnecessary) waits; a wait is necessary when nothing could start."""
    necessary = unnecessary = 0
    for episode, turn in replay(turns, task_set, time_limit_min):
        if turn is None or _kind(turn) is not FeedbackKind.WAIT_ACK:
            continue
        if startable_actions(episode.state, task_set):
            unnecessary += 1
        else:
            necessary += 1
    return necessary, unnecessary


def progress_curve(
    turns: Sequence[TurnRecord | Mapping], task_set: TaskSet, time_limit_min: int | None = None
) -> list[tuple[int, Fraction]]:
    """Progress after each elapsed minute, from 0 to the end of the episode."""
    episode = None
    for episode, _ in replay(turns, task_set, time_limit_min):
        pass
    state = episode.state
    total = task_set.total_duration
    gained = Counter()
    for uid, minute in state.completed.items():
        gained[minute] += task_set.action(uid).duration_min
    curve, done = [], 0
    for minute in range(state.elapsed_min + 1):
        done += gained[minute]
        curve.append((minute, Fraction(100 * done, total) if total else Fraction(100)))
    return curve


def attach_trajectory_stats(
    report: MetricsReport,
    trajectories: Sequence[tuple[TaskSet, Sequence[TurnRecord | Mapping]]],
    time_limit_min: int | None = None,
) -> list[tuple[str, int, int]]:
    """Fill taxonomy and wait fields of ``report``; returns per-set (id, necessary, unnecessary)."""
    per_set = []
    report.taxonomy = Counter({c: 0 for c in Category})
    report.raw_kinds = Counter()
    nec_total = unnec_total = 0
    for task_set, turns in trajectories:
        report.taxonomy.update(taxonomy_counts(turns))
        report.raw_kinds.update(raw_kind_counts(turns))
        nec, unnec = decompose_waits(turns, task_set, time_limit_min)
        per_set.append((task_set.id, nec, unnec))
        nec_total += nec
        unnec_total += unnec
    report.waits = (nec_total, unnec_total)
    report.max_necessary_waits = max((n for _, n, _ in per_set), default=0)
    return per_set


# --------------------------------------------------------------------------- CSV


def fmt(value: Fraction | None, places: int = 4) -> str:
    return UNDEFINED if value is None else f"{float(value):.{places}f}"


def _csv(fieldnames: list[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def metrics_csv(agent: str, outcomes: Sequence[EpisodeOutcome]) -> str:
    """One row per (scenario, task count)."""
    groups: dict[tuple[str, int], list[EpisodeOutcome]] = {}
    for o in outcomes:
        groups.setdefault((o.scenario, o.n_tasks), []).append(o)
    rows = []
    for (scenario, n_tasks), group in sorted(groups.items()):
        rep = compute_metrics(group)
        rows.append(
            {
                "agent": agent,
                "scenario": scenario,
                "n_tasks": n_tasks,
                "episodes": rep.episodes,
                "harness_errors": rep.harness_errors,
                "AS": fmt(rep.AS),
                "CS": fmt(rep.CS),
                "CR": fmt(rep.CR),
                "CT": fmt(rep.CT),
            }
        )
    fields = ["agent", "scenario", "n_tasks", "episodes", "harness_errors", "AS", "CS", "CR", "CT"]
    return _csv(fields, rows)


def taxonomy_csv(agent: str, trajectories: Sequence[tuple[str, Sequence]]) -> str:
    kinds = [k for k in FeedbackKind if k in _CATEGORY]
    fields = ["agent", "set_id", "turns"] + [c.value for c in Category] + [f"raw_{k.value}" for k in kinds]
    rows = []
    for set_id, turns in trajectories:
        tax, raw = taxonomy_counts(turns), raw_kind_counts(turns)
        row = {"agent": agent, "set_id": set_id, "turns": len(turns)}
        row.update({c.value: tax[c] for c in Category})
        row.update({f"raw_{k.value}": raw[k] for k in kinds})
        rows.append(row)
    return _csv(fields, rows)


def waits_csv(agent: str, per_set: Sequence[tuple[str, int, int]]) -> str:
    """Per-episode wait split plus a closing ``ALL`` row with totals and the per-episode maximum."""
    fields = ["agent", "set_id", "waits", "necessary_waits", "unnecessary_waits", "max_necessary_waits_per_episode"]
    rows = [
        {
            "agent": agent,
            "set_id": set_id,
            "waits": nec + unnec,
            "necessary_waits": nec,
            "unnecessary_waits": unnec,
            "max_necessary_waits_per_episode": "",
        }
        for set_id, nec, unnec in per_set
    ]
    nec = sum(r[1] for r in per_set)
    unnec = sum(r[2] for r in per_set)
    rows.append(
        {
            "agent": agent,
            "set_id": "ALL",
            "waits": nec + unnec,
            "necessary_waits": nec,
            "unnecessary_waits": unnec,
            "max_necessary_waits_per_episode": max((r[1] for r in per_set), default=0),
        }
    )
    return _csv(fields, rows)


def curve_csv(curve: Sequence[tuple[int, Fraction]]) -> str:
    return _csv(["minute", "progress_pct"], ({"minute": m, "progress_pct": fmt(p)} for m, p in curve))
