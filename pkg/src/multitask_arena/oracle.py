"""Shortest completion time for a task set.

Two independent routes:

* :func:`greedy_minimal_time` builds the greedy priority list (longest
  agent-idle actions first, prerequisites spliced in front) and plays it
  through the real engine, starting the first ready action every minute.
* :func:`brute_force_minimal_time` searches every start decision with
  memoisation and returns a provably minimal makespan under the same timing
  rules.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from graphlib import CycleError, TopologicalSorter
from typing import Iterable

from .engine import WAIT, Episode, EpisodeState, FeedbackKind, startable_actions
from .model import TaskSet

BRUTE_FORCE_MAX_ACTIONS = 20


class Method(str, Enum):
    GREEDY = "greedy"
    BRUTE_FORCE = "brute_force"


class ScheduleSizeError(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleResult:
    timeline: tuple[tuple[int, str], ...]  # (start minute, action id), minutes start at 1
    makespan_min: int
    method: Method

    def starts(self) -> dict[str, int]:
        return {uid: minute for minute, uid in self.timeline}


def _check_acyclic(task_set: TaskSet) -> None:
    graph = {a.id: a.depends_on for a in task_set.actions}
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        raise InfeasibleError(f"dependency cycle in {task_set.id}: {exc.args[1]}") from exc


def priority_list(task_set: TaskSet, exclude: Iterable[str] = ()) -> list[str]:
    """Greedy action order: idle actions by descending duration, then occupying ones.

    Each action is preceded by its not-yet-listed prerequisites in BFS order.
    Ties keep corpus order.
    """
    skip = set(exclude)
    actions = [a for a in task_set.actions if a.id not in skip]
    idle = sorted((a for a in actions if not a.occupies_agent), key=lambda a: -a.duration_min)
    occupied = [a for a in actions if a.occupies_agent]
    remaining = {a.id for a in actions}
    ordered: list[str] = []
    for a in idle + occupied:
        if a.id not in remaining:
            continue
        seen: set[str] = set()
        queue = deque(a.depends_on)
        prereqs = []
        while queue:
            p = queue.popleft()
            if p in seen:
                continue
            seen.add(p)
            prereqs.append(p)
            queue.extend(task_set.action(p).depends_on)
        for p in prereqs:
            if p in remaining:
                ordered.append(p)
                remaining.discard(p)
        ordered.append(a.id)
        remaining.discard(a.id)
    return ordered


def greedy_choice(priority: list[str], state: EpisodeState, task_set: TaskSet) -> str:
    """Agent text for the current minute under the greedy policy."""
    ready = set(startable_actions(state, task_set))
    for uid in priority:
        if uid in ready:
            return task_set.phrase(uid)
    return WAIT


def greedy_minimal_time(task_set: TaskSet) -> ScheduleResult:
    _check_acyclic(task_set)
    # generous horizon: every action run back to back plus one launch minute each
    horizon = task_set.total_duration + len(task_set.actions) + 1
    episode = Episode(task_set, time_limit_min=horizon)
    priority = priority_list(task_set)
    timeline = []
    while not episode.done:
        if not episode.state.in_flight and not startable_actions(episode.state, episode.task_set):
            raise InfeasibleError(f"greedy schedule deadlocked on {task_set.id}")
        record = episode.step(greedy_choice(priority, episode.state, task_set))
        if record.feedback.kind is FeedbackKind.ACTION_START:
            timeline.append((record.minute, record.feedback.refs[0]))
    if episode.outcome.completion_minute is None:
        raise InfeasibleError(f"greedy schedule did not finish {task_set.id}")
    return ScheduleResult(tuple(timeline), episode.outcome.completion_minute, Method.GREEDY)


def brute_force_minimal_time(
    task_set: TaskSet, max_actions: int = BRUTE_FORCE_MAX_ACTIONS
) -> ScheduleResult:
    actions = task_set.actions
    n = len(actions)
    if n > max_actions:
        raise ScheduleSizeError(f"{task_set.id} has {n} actions, brute force allows {max_actions}")
    _check_acyclic(task_set)
    if n == 0:
        return ScheduleResult((), 0, Method.BRUTE_FORCE)

    index = {a.id: i for i, a in enumerate(actions)}
    object_bit = {name: 1 << k for k, name in enumerate(task_set.object_names)}
    dep_mask = [sum(1 << index[d] for d in a.depends_on) for a in actions]
    obj_mask = [sum(object_bit[o] for o in set(a.objects)) for a in actions]
    duration = [a.duration_min for a in actions]
    agent_cost = [a.duration_min if a.occupies_agent else 1 for a in actions]
    full = (1 << n) - 1
    infinity = float("inf")
    memo: dict[tuple[int, tuple], tuple[float, tuple | None]] = {}

    def advance(done: int, flight: tuple, k: int) -> tuple[int, tuple]:
        left = []
        for i, r in flight:
            if r <= k:
                done |= 1 << i
            else:
                left.append((i, r - k))
        return done, tuple(left)

    # State: agent free at the start of a minute. Waiting only ever needs to run
    # up to the next completion; starting an action later with nothing changed
    # in between is never better than starting it now.
    def solve(done: int, flight: tuple) -> float:
        key = (done, flight)
        hit = memo.get(key)
        if hit is not None:
            return hit[0]
        if done == full:
            memo[key] = (0, None)
            return 0
        busy_objects = 0
        running = 0
        for i, _ in flight:
            busy_objects |= obj_mask[i]
            running |= 1 << i
        best, choice = infinity, None
        for i in range(n):
            bit = 1 << i
            if (done | running) & bit or dep_mask[i] & ~done or obj_mask[i] & busy_objects:
                continue
            k = agent_cost[i]
            nxt = tuple(sorted(flight + ((i, duration[i]),)))
            cost = k + solve(*advance(done, nxt, k))
            if cost < best:
                best, choice = cost, ("start", i, k)
        if flight:
            k = min(r for _, r in flight)
            cost = k + solve(*advance(done, flight, k))
            if cost < best:
                best, choice = cost, ("wait", None, k)
        memo[key] = (best, choice)
        return best

    best = solve(0, ())
    if best == infinity:
        raise InfeasibleError(f"no feasible schedule for {task_set.id}")

    timeline = []
    done, flight, minute = 0, (), 1
    while done != full:
        _, (kind, i, k) = memo[(done, flight)]
        if kind == "start":
            timeline.append((minute, actions[i].id))
            flight = tuple(sorted(flight + ((i, duration[i]),)))
        done, flight = advance(done, flight, k)
        minute += k
    return ScheduleResult(tuple(timeline), int(best), Method.BRUTE_FORCE)


def oracle_metrics(task_set: TaskSet, schedule: ScheduleResult) -> tuple[Fraction | None, int]:
    """(CS, CT) of a perfect run along ``schedule``; AS and CR are 100 by construction."""
    if schedule.makespan_min == 0:
        return None, 0
    return Fraction(100, schedule.makespan_min), schedule.makespan_min


def oracle_rows(task_sets: Iterable[TaskSet], brute_force: bool = True) -> list[dict]:
    rows = []
    for ts in task_sets:
        methods = [greedy_minimal_time]
        if brute_force:
            methods.append(brute_force_minimal_time)
        for solve in methods:
            sched = solve(ts)
            cs, _ = oracle_metrics(ts, sched)
            rows.append(
                {
                    "task_set": ts.id,
                    "method": sched.method.value,
                    "makespan_min": sched.makespan_min,
                    "cs": "" if cs is None else f"{float(cs):.4f}",
                }
            )
    return rows


def oracle_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["task_set", "method", "makespan_min", "cs"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
