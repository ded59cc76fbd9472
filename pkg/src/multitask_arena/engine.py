"""Minute-stepped episode state machine.

Time model: the agent acts at the start of minute ``t`` (clock starts at 1).
An action started at minute ``t`` with duration ``d`` holds its objects for
minutes ``t .. t+d-1`` and is complete when the clock reaches ``t+d``; the
elapsed time at that point is ``t+d-1`` minutes. Starting an agent-idle action
costs the agent the current minute, an agent-occupying action blocks the agent
until it completes, and every failed attempt also consumes one minute.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .model import CONNECTORS, TaskSet, Vocabulary, render_instruction

WAIT = "wait"
MAX_ERROR_STREAK = 5
_ARTICLES = frozenset({"the", "a", "an"})
_TOKEN = re.compile(r"[a-z0-9_]+")


class FeedbackKind(str, Enum):
    INVALID_ACTION = "invalid_action"
    NONEXISTENT_OBJECT = "nonexistent_object"
    MISMATCHED_OBJECT = "mismatched_object"
    ALREADY_COMPLETED = "already_completed"
    WRONG_INPUT = "wrong_input"
    OCCUPIED_OBJECT = "occupied_object"
    ACTION_START = "action_start"
    ACTION_COMPLETION = "action_completion"
    WAIT_ACK = "wait_ack"
    TIME_PROMPT = "time_prompt"
    EPISODE_END = "episode_end"

    @property
    def is_error(self) -> bool:
        return self in ERROR_KINDS


ERROR_KINDS = frozenset(
    {
        FeedbackKind.INVALID_ACTION,
        FeedbackKind.NONEXISTENT_OBJECT,
        FeedbackKind.MISMATCHED_OBJECT,
        FeedbackKind.ALREADY_COMPLETED,
        FeedbackKind.WRONG_INPUT,
        FeedbackKind.OCCUPIED_OBJECT,
    }
)


class EndReason(str, Enum):
    ALL_DONE = "all_done"
    TIME_OUT = "time_out"
    ERROR_STREAK = "error_streak"
    ABORTED = "aborted"
    HARNESS_ERROR = "harness_error"


@dataclass(frozen=True)
class Feedback:
    kind: FeedbackKind
    text: str
    refs: tuple[str, ...] = ()

    @property
    def is_error(self) -> bool:
        return self.kind.is_error


# Bit-exact message templates.


def start_feedback(phrase: str, minutes: int, uid: str = "") -> Feedback:
    return Feedback(
        FeedbackKind.ACTION_START, f"You are doing ``{phrase}``, it will take {minutes} minutes.", (uid,)
    )


def completion_feedback(obj: str, state: str, uid: str = "") -> Feedback:
    return Feedback(FeedbackKind.ACTION_COMPLETION, f"{obj} is {state}.", (uid, obj))


def wait_feedback() -> Feedback:
    return Feedback(FeedbackKind.WAIT_ACK, "You wait for one minute.")


def prompt_text(minute: int) -> str:
    return f"In t={minute}, your action is:"


def occupied_feedback(obj: str) -> Feedback:
    return Feedback(FeedbackKind.OCCUPIED_OBJECT, f"Object {obj} is being occupied by another action", (obj,))


def agent_busy_feedback() -> Feedback:
    return Feedback(FeedbackKind.OCCUPIED_OBJECT, "You are being occupied by another action", ("agent",))


def wrong_input_feedback(verb: str, obj: str, state: str) -> Feedback:
    return Feedback(
        FeedbackKind.WRONG_INPUT,
        f"Cannot perform action {verb} on object {obj}. Because {obj} is {state}.",
        (obj,),
    )


def invalid_feedback(raw: str) -> Feedback:
    return Feedback(FeedbackKind.INVALID_ACTION, f"{raw} is invalid")


def nonexistent_feedback(obj: str) -> Feedback:
    return Feedback(FeedbackKind.NONEXISTENT_OBJECT, f"{obj} is non-existent", (obj,))


def mismatched_feedback(verb: str, objects: Sequence[str]) -> Feedback:
    return Feedback(
        FeedbackKind.MISMATCHED_OBJECT,
        # corrected from the misspelled "perfrom"
        f"You cannot perform {verb} on {' and '.join(objects)}.",
        tuple(objects),
    )


def repeated_feedback(phrase: str, uid: str = "") -> Feedback:
    return Feedback(FeedbackKind.ALREADY_COMPLETED, f"{phrase} has been completed", (uid,))


_END_TEXT = {
    EndReason.ALL_DONE: "All tasks are completed.",
    EndReason.TIME_OUT: "Time is up.",
    EndReason.ERROR_STREAK: "Too many incorrect actions in a row.",
    EndReason.ABORTED: "The episode was aborted.",
    EndReason.HARNESS_ERROR: "The episode was aborted by a harness error.",
}


def end_feedback(reason: EndReason) -> Feedback:
    return Feedback(FeedbackKind.EPISODE_END, _END_TEXT[reason])


# --------------------------------------------------------------------------- parsing


@dataclass(frozen=True)
class ActionRequest:
    """An action extracted from agent text.

    ``verb`` is a template key (``"cook in"``), ``"wait"``, or, for text
    with no recognisable phrase, the first line of the response.
    """

    verb: str
    objects: tuple[str, ...]
    raw_text: str
    phrase: str
    well_formed: bool = True

    @property
    def is_wait(self) -> bool:
        return self.verb == WAIT and self.well_formed


def _normalize(raw: str, objects: Sequence[str]) -> list[str]:
    text = raw.lower()
    for name in sorted(objects, key=len, reverse=True):
        if "_" in name:
            spaced = name.replace("_", " ")
            text = re.sub(rf"\b{re.escape(spaced)}\b", name, text)
    return [tok for tok in _TOKEN.findall(text) if tok not in _ARTICLES]


def parse_action(raw: str, vocabulary: Vocabulary, objects: Sequence[str] = ()) -> ActionRequest:
    """Extract the last ``verb OBJ [connector OBJ]`` phrase (or ``wait``) from ``raw``.

    Phrases are consumed left to right so that a verb-like object (``heat
    iron``) is not re-read as a verb. Well-formed phrases take precedence over
    malformed ones (``wait for the water`` is a wait, not a broken ``water``).
    Object names need not exist; unknown verbs yield a request flagged as not
    well formed.
    """
    tokens = _normalize(raw, objects)
    phrases: list[ActionRequest] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok == WAIT:
            phrases.append(ActionRequest(WAIT, (), raw, WAIT))
            i += 1
            continue
        if tok not in vocabulary.verbs:
            i += 1
            continue
        forms = vocabulary.for_verb(tok)
        obj1 = tokens[i + 1] if i + 1 < len(tokens) else None
        if obj1 is None or obj1 in CONNECTORS:
            phrases.append(ActionRequest(tok, (), raw, tok, well_formed=False))
            i += 1
            continue
        conn = tokens[i + 2] if i + 2 < len(tokens) else None
        obj2 = tokens[i + 3] if i + 3 < len(tokens) else None
        binary = {t.connector: t for t in forms if t.arity == 2}
        unary = next((t for t in forms if t.arity == 1), None)
        if conn in binary and obj2 is not None:
            phrases.append(
                ActionRequest(binary[conn].key, (obj1, obj2), raw, f"{tok} {obj1} {conn} {obj2}")
            )
            i += 4
        elif unary is not None:
            phrases.append(ActionRequest(unary.key, (obj1,), raw, f"{tok} {obj1}"))
            i += 2
        elif conn in CONNECTORS and obj2 is not None:
            phrases.append(
                ActionRequest(tok, (obj1, obj2), raw, f"{tok} {obj1} {conn} {obj2}", well_formed=False)
            )
            i += 4
        else:
            phrases.append(ActionRequest(tok, (obj1,), raw, f"{tok} {obj1}", well_formed=False))
            i += 2
    well_formed = [p for p in phrases if p.well_formed]
    if well_formed:
        return well_formed[-1]
    if phrases:
        return phrases[-1]
    first = raw.strip().splitlines()[0].strip() if raw.strip() else raw
    return ActionRequest(first, (), raw, first, well_formed=False)


# --------------------------------------------------------------------------- state


@dataclass
class EpisodeState:
    clock_min: int
    time_limit_min: int
    object_state: dict[str, str]
    object_occupied: dict[str, str | None]
    agent_busy_until: int | None = None
    in_flight: dict[str, int] = field(default_factory=dict)
    completed: dict[str, int] = field(default_factory=dict)  # uid -> elapsed minute of completion
    error_streak: int = 0
    progress_pct: Fraction = Fraction(0)
    max_progress_minute: int = 0
    task_progress: list[Fraction] = field(default_factory=list)
    task_progress_minute: list[int] = field(default_factory=list)
    transcript: list[tuple[int, str, Feedback]] = field(default_factory=list)
    pending: list[Feedback] = field(default_factory=list)  # completions not yet reported
    ended: EndReason | None = None

    def copy(self) -> "EpisodeState":
        new = copy.copy(self)
        new.object_state = dict(self.object_state)
        new.object_occupied = dict(self.object_occupied)
        new.in_flight = dict(self.in_flight)
        new.completed = dict(self.completed)
        new.task_progress = list(self.task_progress)
        new.task_progress_minute = list(self.task_progress_minute)
        new.transcript = list(self.transcript)
        new.pending = list(self.pending)
        return new

    @property
    def elapsed_min(self) -> int:
        return self.clock_min - 1

    @property
    def live(self) -> bool:
        return self.ended is None


def initial_state(task_set: TaskSet, time_limit_min: int | None = None) -> EpisodeState:
    state = EpisodeState(
        clock_min=1,
        time_limit_min=time_limit_min or task_set.time_limit_min,
        object_state={o.name: o.initial_state for o in task_set.merged_objects},
        object_occupied={o.name: None for o in task_set.merged_objects},
        task_progress=[Fraction(0)] * len(task_set.tasks),
        task_progress_minute=[0] * len(task_set.tasks),
    )
    if task_set.total_duration == 0:
        state.progress_pct = Fraction(100)
    return state


def progress_of(task_set: TaskSet, completed) -> Fraction:
    total = task_set.total_duration
    if total == 0:
        return Fraction(100)
    done = sum(task_set.action(uid).duration_min for uid in completed)
    return Fraction(100 * done, total)


def _candidates(req: ActionRequest, task_set: TaskSet) -> list[str]:
    return [a.id for a in task_set.actions if a.verb == req.verb and a.objects == req.objects]


def startable_actions(state: EpisodeState, task_set: TaskSet) -> list[str]:
    """Action ids that would be accepted as an ActionStart right now, in set order."""
    if state.agent_busy_until is not None:
        return []
    out = []
    for a in task_set.actions:
        if a.id in state.completed or a.id in state.in_flight:
            continue
        if any(d not in state.completed for d in a.depends_on):
            continue
        if any(state.object_occupied[o] is not None for o in a.objects):
            continue
        out.append(a.id)
    return out


# --------------------------------------------------------------------------- transitions


def validate(req: ActionRequest, state: EpisodeState, task_set: TaskSet) -> Feedback:
    """Classify ``req`` against the current state; first failing check wins."""
    if req.is_wait:
        return wait_feedback()
    vocabulary = task_set.vocabulary
    if not req.well_formed or req.verb not in vocabulary:
        return invalid_feedback(req.phrase)
    for o in req.objects:
        if o not in state.object_state:
            return nonexistent_feedback(o)
    candidates = _candidates(req, task_set)
    if not candidates:
        return mismatched_feedback(req.verb, req.objects)
    open_ = [uid for uid in candidates if uid not in state.completed]
    if not open_:
        return repeated_feedback(req.phrase, candidates[0])
    # several instances can match when constraint mode shares their objects
    idle = [u for u in open_ if u not in state.in_flight]
    ready = [u for u in idle if all(d in state.completed for d in task_set.action(u).depends_on)]
    uid = (ready or idle or open_)[0]
    action = task_set.action(uid)
    if any(d not in state.completed for d in action.depends_on):
        subject = action.objects[0]
        return wrong_input_feedback(req.verb, subject, state.object_state[subject])
    for o in action.objects:
        if state.object_occupied[o] is not None:
            return occupied_feedback(o)
    if state.agent_busy_until is not None:
        return agent_busy_feedback()
    return start_feedback(task_set.phrase(uid), action.duration_min, uid)


def tick(state: EpisodeState, task_set: TaskSet) -> tuple[EpisodeState, list[Feedback]]:
    """Advance one minute and complete every action due, in start order."""
    state = state.copy()
    state.clock_min += 1
    done = []
    for uid, due in list(state.in_flight.items()):
        if due > state.clock_min:
            continue
        del state.in_flight[uid]
        action = task_set.action(uid)
        template = task_set.template(uid)
        for o in action.objects:
            state.object_occupied[o] = None
        target = action.objects[template.state_slot]
        state.object_state[target] = template.to_state
        state.completed[uid] = state.elapsed_min
        if state.agent_busy_until is not None and action.occupies_agent:
            state.agent_busy_until = None
        done.append(completion_feedback(target, template.to_state, uid))
        k = task_set.task_of(uid)
        task = task_set.tasks[k]
        total = task.total_duration
        state.task_progress[k] = Fraction(
            100 * sum(a.duration_min for a in task.actions if a.id in state.completed), total
        )
        state.task_progress_minute[k] = state.elapsed_min
    if done:
        state.progress_pct = progress_of(task_set, state.completed)
        state.max_progress_minute = state.elapsed_min
    return state, done


def apply(req: ActionRequest, state: EpisodeState, task_set: TaskSet) -> tuple[EpisodeState, Feedback]:
    """Carry out a request that :func:`validate` accepted.

    Completions caused by the minutes that pass are queued on ``state.pending``.
    """
    feedback = validate(req, state, task_set)
    if feedback.kind not in (FeedbackKind.ACTION_START, FeedbackKind.WAIT_ACK):
        raise ValueError(f"cannot apply rejected request: {feedback.text}")
    state = state.copy()
    state.error_streak = 0
    if feedback.kind is FeedbackKind.WAIT_ACK:
        state, done = tick(state, task_set)
        state.pending.extend(done)
        return state, feedback

    uid = feedback.refs[0]
    action = task_set.action(uid)
    due = state.clock_min + action.duration_min
    state.in_flight[uid] = due
    for o in action.objects:
        state.object_occupied[o] = uid
    if action.occupies_agent:
        state.agent_busy_until = due
        while state.agent_busy_until is not None and state.clock_min <= state.time_limit_min:
            state, done = tick(state, task_set)
            state.pending.extend(done)
    else:
        state, done = tick(state, task_set)
        state.pending.extend(done)
    return state, feedback


def record_error(state: EpisodeState, task_set: TaskSet) -> EpisodeState:
    """Count a failed attempt; it consumes the current minute."""
    state, done = tick(state, task_set)
    state.pending.extend(done)
    state.error_streak += 1
    if state.error_streak >= MAX_ERROR_STREAK:
        state.ended = EndReason.ERROR_STREAK
    return state


@dataclass(frozen=True)
class EpisodeOutcome:
    set_id: str
    reason: EndReason
    final_progress_pct: Fraction
    completion_minute: int | None
    max_progress_minute: int
    per_task_progress: tuple[tuple[str, Fraction, int], ...]
    scenario: str = ""
    n_tasks: int = 1
    turns: int = 0
    elapsed_min: int = 0

    def to_json(self) -> dict:
        return {
            "set_id": self.set_id,
            "reason": self.reason.value,
            "final_progress": str(self.final_progress_pct),
            "final_progress_pct": float(self.final_progress_pct),
            "completion_minute": self.completion_minute,
            "max_progress_minute": self.max_progress_minute,
            "per_task_progress": [[t, str(p), m] for t, p, m in self.per_task_progress],
            "scenario": self.scenario,
            "n_tasks": self.n_tasks,
            "turns": self.turns,
            "elapsed_min": self.elapsed_min,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EpisodeOutcome":
        return cls(
            set_id=doc["set_id"],
            reason=EndReason(doc["reason"]),
            final_progress_pct=Fraction(doc["final_progress"]),
            completion_minute=doc["completion_minute"],
            max_progress_minute=doc["max_progress_minute"],
            per_task_progress=tuple((t, Fraction(p), m) for t, p, m in doc["per_task_progress"]),
            scenario=doc.get("scenario", ""),
            n_tasks=doc.get("n_tasks", 1),
            turns=doc.get("turns", 0),
            elapsed_min=doc.get("elapsed_min", 0),
        )


def is_finished(state: EpisodeState, task_set: TaskSet, turns: int = 0) -> EpisodeOutcome | None:
    if state.progress_pct == 100:
        reason = EndReason.ALL_DONE
    elif state.ended is not None:
        reason = state.ended
    elif state.error_streak >= MAX_ERROR_STREAK:
        reason = EndReason.ERROR_STREAK
    elif state.clock_min > state.time_limit_min:
        reason = EndReason.TIME_OUT
    else:
        return None
    return outcome_of(state, task_set, reason, turns)


def outcome_of(state: EpisodeState, task_set: TaskSet, reason: EndReason, turns: int = 0) -> EpisodeOutcome:
    return EpisodeOutcome(
        set_id=task_set.id,
        reason=reason,
        final_progress_pct=state.progress_pct,
        completion_minute=state.max_progress_minute if reason is EndReason.ALL_DONE else None,
        max_progress_minute=state.max_progress_minute,
        per_task_progress=tuple(
            (t.id, p, m)
            for t, p, m in zip(task_set.tasks, state.task_progress, state.task_progress_minute)
        ),
        scenario=task_set.scenario,
        n_tasks=len(task_set.tasks),
        turns=turns,
        elapsed_min=state.elapsed_min,
    )


def check_invariants(state: EpisodeState, task_set: TaskSet) -> list[str]:
    """Return every broken state invariant (empty when the state is sound)."""
    problems = []
    users: dict[str, list[str]] = {}
    for uid in state.in_flight:
        for o in task_set.action(uid).objects:
            users.setdefault(o, []).append(uid)
    for o, holder in state.object_occupied.items():
        holders = users.get(o, [])
        if len(holders) > 1:
            problems.append(f"object {o} held by {holders}")
        if (holder is None) != (not holders) or (holder is not None and holder not in holders):
            problems.append(f"object {o} occupancy flag {holder!r} disagrees with in-flight {holders}")
    busy = [uid for uid in state.in_flight if task_set.action(uid).occupies_agent]
    if len(busy) > 1:
        problems.append(f"agent runs several occupying actions: {busy}")
    if busy and state.agent_busy_until is None and state.live and state.clock_min <= state.time_limit_min:
        problems.append(f"occupying action {busy[0]} in flight while agent marked free")
    overlap = set(state.completed) & set(state.in_flight)
    if overlap:
        problems.append(f"actions both completed and in flight: {sorted(overlap)}")
    if state.progress_pct != progress_of(task_set, state.completed):
        problems.append("progress disagrees with completed actions")
    if state.live and state.error_streak >= MAX_ERROR_STREAK:
        problems.append("live episode with a full error streak")
    return problems


# --------------------------------------------------------------------------- driver


@dataclass(frozen=True)
class TurnRecord:
    minute: int
    agent_text: str
    feedback: Feedback
    completions: tuple[Feedback, ...]
    progress_pct: Fraction
    error_streak: int

    @property
    def feedback_text(self) -> str:
        return "\n".join([self.feedback.text] + [c.text for c in self.completions])

    def to_json(self) -> dict:
        return {
            "minute": self.minute,
            "agent_text": self.agent_text,
            "feedback_kind": self.feedback.kind.value,
            "feedback_text": self.feedback_text,
            "progress_pct": float(self.progress_pct),
            "error_streak": self.error_streak,
        }


class Episode:
    """Drives one episode: feed agent text to :meth:`step` until :attr:`outcome` is set."""

    def __init__(self, task_set: TaskSet, time_limit_min: int | None = None):
        self.task_set = task_set
        self.state = initial_state(task_set, time_limit_min)
        self.records: list[TurnRecord] = []
        self.outcome: EpisodeOutcome | None = None
        self.instruction = render_instruction(task_set)
        self._check_end()

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def prompt(self) -> str:
        return prompt_text(self.state.clock_min)

    def step(self, text: str) -> TurnRecord:
        if self.done:
            raise RuntimeError("episode already finished")
        minute = self.state.clock_min
        req = parse_action(text, self.task_set.vocabulary, self.task_set.object_names)
        feedback = validate(req, self.state, self.task_set)
        if feedback.is_error:
            state = record_error(self.state, self.task_set)
        else:
            state, feedback = apply(req, self.state, self.task_set)
        completions = tuple(state.pending)
        state.pending = []
        state.transcript.append((minute, text, feedback))
        self.state = state
        record = TurnRecord(minute, text, feedback, completions, state.progress_pct, state.error_streak)
        self.records.append(record)
        self._check_end()
        return record

    def abort(self, reason: EndReason = EndReason.ABORTED) -> EpisodeOutcome:
        self.state.ended = reason
        self.outcome = outcome_of(self.state, self.task_set, reason, len(self.records))
        return self.outcome

    def _check_end(self) -> None:
        self.outcome = is_finished(self.state, self.task_set, len(self.records))

    def render_transcript(self) -> str:
        """Conversation view: instruction, prompts, agent replies and feedback."""
        blocks = [f"<|Environment|>:\n{self.instruction}", f"<|Environment|>:\n{prompt_text(1)}"]
        for k, rec in enumerate(self.records):
            blocks.append(f"<|Agent|>:\n{rec.agent_text}")
            env = rec.feedback_text
            last = k == len(self.records) - 1
            if not (last and self.done):
                nxt = self.records[k + 1].minute if not last else self.state.clock_min
                env += f"\n\n{prompt_text(nxt)}"
            else:
                env += f"\n\n{end_feedback(self.outcome.reason).text}"
            blocks.append(f"<|Environment|>:\n{env}")
        return "\n\n".join(blocks) + "\n"
