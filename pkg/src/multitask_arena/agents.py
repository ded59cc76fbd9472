"""Agents and the turn loop that connects them to an episode.

Built-in agents read the live engine state through ``AgentTurnInput.state``;
external agents only ever see the textual fields.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .engine import (
    WAIT,
    EndReason,
    Episode,
    EpisodeOutcome,
    EpisodeState,
    TurnRecord,
    startable_actions,
)
from .model import TaskSet
from .oracle import ScheduleResult, greedy_choice, greedy_minimal_time, priority_list

log = logging.getLogger(__name__)

DEFAULT_TURN_TIMEOUT_S = 60.0


class AgentKind(str, Enum):
    REPLAY = "replay"
    WAIT_ONLY = "wait-only"
    RANDOM_VALID = "random-valid"
    GREEDY_PLANNER = "greedy-planner"
    EXTERNAL = "external"


class AgentError(RuntimeError):
    """The agent could not produce a reply (timeout, crash, malformed message)."""


@dataclass(frozen=True)
class AgentTurnInput:
    instruction: str | None  # only set on the first turn
    history: tuple[tuple[int, str, str], ...]  # (minute, agent text, feedback text)
    prompt: str
    minute: int
    state: EpisodeState | None = field(default=None, compare=False, repr=False)
    task_set: TaskSet | None = field(default=None, compare=False, repr=False)

    def to_wire(self) -> dict:
        return {
            "type": "turn",
            "instruction": self.instruction,
            "history": [{"minute": m, "agent": a, "feedback": f} for m, a, f in self.history],
            "prompt": self.prompt,
        }


@dataclass(frozen=True)
class AgentConfig:
    kind: AgentKind
    seed: int | None = None
    endpoint: str | None = None
    schedule: ScheduleResult | None = None
    timeout_s: float = DEFAULT_TURN_TIMEOUT_S

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        if self.kind is AgentKind.EXTERNAL and not self.endpoint:
            raise ValueError("external agent needs an endpoint")


class Agent(Protocol):
    def next_action(self, turn: AgentTurnInput) -> str: ...

    def close(self, outcome: EpisodeOutcome) -> None: ...


class _Builtin:
    def close(self, outcome: EpisodeOutcome) -> None:
        pass


class WaitOnlyAgent(_Builtin):
    def next_action(self, turn: AgentTurnInput) -> str:
        return WAIT


class ReplayAgent(_Builtin):
    """Emits each scheduled action at its start minute and waits otherwise."""

    def __init__(self, schedule: ScheduleResult, task_set: TaskSet):
        self.by_minute = {minute: task_set.phrase(uid) for minute, uid in schedule.timeline}

    def next_action(self, turn: AgentTurnInput) -> str:
        return self.by_minute.get(turn.minute, WAIT)


class RandomValidAgent(_Builtin):
    """Picks uniformly among the actions that would start right now."""

    def __init__(self, seed: int | None = None):
        self.rng = random.Random(seed)

    def next_action(self, turn: AgentTurnInput) -> str:
        ready = startable_actions(turn.state, turn.task_set)
        if not ready:
            return WAIT
        return turn.task_set.phrase(self.rng.choice(ready))


class GreedyPlannerAgent(_Builtin):
    """Replays the greedy schedule; after any error falls back to live greedy choice."""

    def __init__(self, task_set: TaskSet):
        self.task_set = task_set
        self.plan: dict[int, str] | None = None
        self.replanning = False

    def next_action(self, turn: AgentTurnInput) -> str:
        if self.plan is None:
            sched = greedy_minimal_time(self.task_set)
            self.plan = {m: self.task_set.phrase(uid) for m, uid in sched.timeline}
        transcript = turn.state.transcript
        if transcript and transcript[-1][2].is_error:
            self.replanning = True
        if self.replanning:
            state = turn.state
            priority = priority_list(self.task_set, exclude=list(state.completed) + list(state.in_flight))
            return greedy_choice(priority, state, self.task_set)
        return self.plan.get(turn.minute, WAIT)


class ExternalAgent:
    """Bridge to an out-of-process agent.

    ``endpoint`` is either an ``http(s)://`` URL (one JSON POST per message) or
    a command line started once and spoken to in line-delimited JSON over its
    standard streams.
    """

    def __init__(self, endpoint: str, timeout_s: float = DEFAULT_TURN_TIMEOUT_S):
        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.is_http = endpoint.startswith(("http://", "https://"))
        self.proc: subprocess.Popen | None = None
        self.lines: queue.Queue[str | None] = queue.Queue()

    def _start(self) -> None:
        try:
            self.proc = subprocess.Popen(
                shlex.split(self.endpoint),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise AgentError(f"cannot start agent process: {exc}") from exc
        threading.Thread(target=self._pump, args=(self.proc.stdout,), daemon=True).start()

    def _pump(self, stream) -> None:
        for line in stream:
            self.lines.put(line)
        self.lines.put(None)

    def _send_line(self, msg: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise AgentError(f"agent process closed its input: {exc}") from exc

    def _post(self, msg: dict) -> dict:
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps(msg).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                body = resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise AgentError(f"agent endpoint failed: {exc}") from exc
        return _decode(body) if body.strip() else {}

    def next_action(self, turn: AgentTurnInput) -> str:
        msg = turn.to_wire()
        if self.is_http:
            return _action_text(self._post(msg))
        if self.proc is None:
            self._start()
        self._send_line(msg)
        while True:
            try:
                line = self.lines.get(timeout=self.timeout_s)
            except queue.Empty:
                raise AgentError(f"no reply within {self.timeout_s:g} s") from None
            if line is None:
                raise AgentError("agent process exited")
            if line.strip():
                return _action_text(_decode(line))

    def close(self, outcome: EpisodeOutcome) -> None:
        msg = {
            "type": "end",
            "outcome": outcome.reason.value,
            "progress": float(outcome.final_progress_pct),
        }
        if self.is_http:
            try:
                self._post(msg)
            except AgentError as exc:
                log.warning("end message not delivered: %s", exc)
            return
        if self.proc is None:
            return
        try:
            self._send_line(msg)
            self.proc.stdin.close()
        except (AgentError, OSError):
            pass
        try:
            self.proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


def _decode(line: str) -> dict:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise AgentError(f"agent sent invalid JSON: {line[:80]!r}") from exc
    if not isinstance(doc, dict):
        raise AgentError("agent message is not an object")
    return doc


def _action_text(doc: dict) -> str:
    if doc.get("type") != "action" or not isinstance(doc.get("text"), str):
        raise AgentError(f"expected an action message, got {doc!r}")
    return doc["text"]


def make_agent(config: AgentConfig, task_set: TaskSet) -> Agent:
    kind = config.kind
    if kind is AgentKind.WAIT_ONLY:
        return WaitOnlyAgent()
    if kind is AgentKind.REPLAY:
        if config.schedule is None:
            raise ValueError("replay agent needs a schedule")
        return ReplayAgent(config.schedule, task_set)
    if kind is AgentKind.RANDOM_VALID:
        return RandomValidAgent(config.seed)
    if kind is AgentKind.GREEDY_PLANNER:
        return GreedyPlannerAgent(task_set)
    return ExternalAgent(config.endpoint, config.timeout_s)


@dataclass
class EpisodeRun:
    outcome: EpisodeOutcome
    records: list[TurnRecord]
    transcript: str
    error: str | None = None


def run_episode(task_set: TaskSet, agent: Agent, time_limit_min: int | None = None) -> EpisodeRun:
    """Play one episode to its end. Agent failures end it as a harness error."""
    episode = Episode(task_set, time_limit_min)
    history: list[tuple[int, str, str]] = []
    error = None
    while not episode.done:
        minute = episode.state.clock_min
        turn = AgentTurnInput(
            instruction=episode.instruction if not history else None,
            history=tuple(history),
            prompt=episode.prompt(),
            minute=minute,
            state=episode.state,
            task_set=task_set,
        )
        try:
            text = agent.next_action(turn)
        except AgentError as exc:
            error = str(exc)
            log.warning("episode %s aborted at t=%d: %s", task_set.id, minute, exc)
            episode.abort(EndReason.HARNESS_ERROR)
            break
        record = episode.step(text)
        history.append((record.minute, record.agent_text, record.feedback_text))
    agent.close(episode.outcome)
    return EpisodeRun(episode.outcome, list(episode.records), episode.render_transcript(), error)
