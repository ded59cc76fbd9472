"""Tasks, objects and timed actions, plus the on-disk corpus and manifest formats.

A task is a small DAG of timed action instances over named objects. Tasks from
the same scenario can be combined into a :class:`TaskSet`; object names shared
between tasks are duplicated with numeric suffixes unless the caller forces a
single shared instance (constraint mode).
"""

from __future__ import annotations

import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Sequence

SCENARIOS = ("cooking", "household", "laboratory")
MIN_DURATION = 1
MAX_DURATION = 10
MINUTES_PER_TASK = 40
MAX_TASKS_PER_SET = 3
CONNECTORS = ("in", "into", "with", "on", "by", "to")

PREAMBLE = (
    "As an AI agent, your objective is to efficiently complete a series of tasks as described. "
    "You must adhere to the specific requirements and constraints of each task, including "
    "dependencies and timing. Efficiency is key; complete all tasks in the shortest possible "
    "time. I will provide instructions regarding actions and objects.\n"
    "\n"
    "**Action Protocol**:\n"
    "- You can perform only one action at a time.\n"
    "- After each observation from the environment, output an action based on that observation "
    "and the instructions.\n"
    "- Actions fall into two categories:\n"
    '- Continuous Actions: Perform these actions until completion (e.g., "wash OBJ").\n'
    '- Autonomous Actions: These progress over time, allowing simultaneous tasks (e.g., "heat OBJ").\n'
    '- Follow the "Valid Actions" format for your output (e.g., "wash cup").\n'
    '- If no action is required, use "wait" to skip the current time.\n'
    '- Output the action explicitly (e.g., "wash cup").\n'
    '- Select object names (OBJ) from the list of Available Objects (e.g., use "rice" instead of '
    '"cooked rice").'
)
WAIT_USAGE = "- wait: pass the current time without doing anything."


class CorpusError(ValueError):
    """A corpus, vocabulary or manifest document could not be parsed."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        locus = ""
        if path is not None:
            locus = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(locus + message)
        self.path = path
        self.line = line


class TaskValidationError(ValueError):
    def __init__(self, task_id: str, violations: Sequence[str], path: Path | None = None):
        where = f" ({path})" if path else ""
        super().__init__(f"task {task_id!r}{where} is invalid: " + "; ".join(violations))
        self.task_id = task_id
        self.violations = list(violations)
        self.path = path


class Occupancy(str, Enum):
    OCCUPIES_AGENT = "occupies_agent"
    AGENT_IDLE = "agent_idle"


@dataclass(frozen=True)
class ActionTemplate:
    """One entry of the action vocabulary, e.g. ``cook OBJ1 in OBJ2``.

    ``state_slot`` selects which object slot takes ``to_state`` on completion
    (``pour tea into cup`` fills the cup, not the tea).
    """

    verb: str
    description: str
    from_state: str
    to_state: str
    connector: str | None = None
    state_slot: int = 0

    @property
    def key(self) -> str:
        return f"{self.verb} {self.connector}" if self.connector else self.verb

    @property
    def arity(self) -> int:
        return 2 if self.connector else 1

    @property
    def slot_pattern(self) -> str:
        if self.connector:
            return f"{self.verb} OBJ1 {self.connector} OBJ2"
        return f"{self.verb} OBJ"

    def phrase(self, objects: Sequence[str]) -> str:
        if self.connector:
            return f"{self.verb} {objects[0]} {self.connector} {objects[1]}"
        return f"{self.verb} {objects[0]}"


class Vocabulary:
    """Lookup table over :class:`ActionTemplate` keyed by ``verb`` or ``verb connector``."""

    def __init__(self, templates: Iterable[ActionTemplate]):
        self.templates: dict[str, ActionTemplate] = {}
        for t in templates:
            if t.key in self.templates:
                raise CorpusError(f"duplicate action template {t.key!r}")
            if t.from_state == t.to_state:
                raise CorpusError(f"template {t.key!r} does not change state")
            if not t.description:
                raise CorpusError(f"template {t.key!r} has no description")
            self.templates[t.key] = t
        self.verbs = frozenset(t.verb for t in self.templates.values())

    def __len__(self) -> int:
        return len(self.templates)

    def __contains__(self, key: object) -> bool:
        return key in self.templates

    def __getitem__(self, key: str) -> ActionTemplate:
        return self.templates[key]

    def __iter__(self):
        return iter(self.templates.values())

    def for_verb(self, verb: str) -> list[ActionTemplate]:
        return [t for t in self.templates.values() if t.verb == verb]

    def resolve(self, verb: str, n_objects: int) -> ActionTemplate | None:
        """Resolve a corpus verb (bare or with connector) for ``n_objects`` slots."""
        if verb in self.templates:
            t = self.templates[verb]
            return t if t.arity == n_objects else None
        candidates = [t for t in self.for_verb(verb) if t.arity == n_objects]
        return candidates[0] if len(candidates) == 1 else None


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    initial_state: str
    capacity: int = 1


@dataclass(frozen=True)
class ActionInstance:
    id: str
    verb: str  # template key
    objects: tuple[str, ...]
    duration_min: int
    occupancy: Occupancy
    depends_on: tuple[str, ...] = ()
    provenance: str = "authored"

    @property
    def occupies_agent(self) -> bool:
        return self.occupancy is Occupancy.OCCUPIES_AGENT


@dataclass(frozen=True)
class TaskDefinition:
    id: str
    scenario: str
    description: str
    actions: tuple[ActionInstance, ...]
    objects: tuple[ObjectSpec, ...]
    notes: str = ""

    def action(self, action_id: str) -> ActionInstance:
        for a in self.actions:
            if a.id == action_id:
                return a
        raise KeyError(action_id)

    @property
    def total_duration(self) -> int:
        return sum(a.duration_min for a in self.actions)


@dataclass(frozen=True)
class ValidationReport:
    task_id: str
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class TaskSet:
    """One or more tasks merged into a single episode definition.

    Action ids inside a set are namespaced as ``<task id>/<action id>`` and
    object references are rewritten to the merged (possibly suffixed) names.
    """

    id: str
    tasks: tuple[TaskDefinition, ...]
    merged_objects: tuple[ObjectSpec, ...]
    time_limit_min: int
    constraint_mode: tuple[str, ...] = ()
    vocabulary: Vocabulary | None = field(default=None, compare=False, repr=False)

    @property
    def actions(self) -> tuple[ActionInstance, ...]:
        return self._actions

    @property
    def scenario(self) -> str:
        return self.tasks[0].scenario if self.tasks else ""

    @property
    def object_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.merged_objects)

    @property
    def total_duration(self) -> int:
        return sum(t.total_duration for t in self.tasks)

    def action(self, uid: str) -> ActionInstance:
        return self._index[uid]

    def task_of(self, uid: str) -> int:
        return self._task_index[uid]

    def template(self, uid: str) -> ActionTemplate:
        return self.vocabulary[self.action(uid).verb]

    def phrase(self, uid: str) -> str:
        a = self.action(uid)
        return self.vocabulary[a.verb].phrase(a.objects)

    def __post_init__(self):
        index = {}
        task_index = {}
        for k, t in enumerate(self.tasks):
            for a in t.actions:
                index[a.id] = a
                task_index[a.id] = k
        object.__setattr__(self, "_actions", tuple(a for t in self.tasks for a in t.actions))
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_task_index", task_index)


# --------------------------------------------------------------------------- loading


def _read_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"not UTF-8: {exc}", path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(exc.msg, path, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise CorpusError("top-level value must be an object", path, 1)
    return doc


def _data_path(*parts: str) -> Path:
    return Path(__file__).parent.joinpath("data", *parts)


def bundled_corpus_path() -> Path:
    return _data_path("corpus")


def bundled_manifest_path(name: str) -> Path:
    return _data_path("manifests", name)


def load_vocabulary(path: str | Path | None = None) -> Vocabulary:
    path = Path(path) if path is not None else _data_path("vocabulary.json")
    doc = _read_json(path)
    try:
        templates = [
            ActionTemplate(
                verb=row["verb"],
                connector=row.get("connector"),
                description=row["description"],
                from_state=row["from_state"],
                to_state=row["to_state"],
                state_slot=row.get("state_slot", 0),
            )
            for row in doc["actions"]
        ]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed action template: {exc}", path) from exc
    return Vocabulary(templates)


def parse_task(doc: dict, vocabulary: Vocabulary, path: Path | None = None) -> TaskDefinition:
    """Build a :class:`TaskDefinition` from a decoded corpus document (no validation)."""
    try:
        objects = tuple(
            ObjectSpec(o["name"], o["initial_state"], o.get("capacity", 1)) for o in doc["objects"]
        )
        actions = []
        for row in doc["actions"]:
            objs = tuple(row["objects"])
            template = vocabulary.resolve(row["verb"], len(objs))
            actions.append(
                ActionInstance(
                    id=row["id"],
                    # unresolved verbs are kept verbatim so validate_task can report them
                    verb=template.key if template else row["verb"],
                    objects=objs,
                    duration_min=row["duration_min"],
                    occupancy=Occupancy(row["occupancy"]),
                    depends_on=tuple(row.get("depends_on", ())),
                    provenance=row.get("provenance", "authored"),
                )
            )
        return TaskDefinition(
            id=doc["id"],
            scenario=doc["scenario"],
            description=doc["description"],
            actions=tuple(actions),
            objects=objects,
            notes=doc.get("notes", ""),
        )
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"missing or malformed field: {exc}", path) from exc
    except ValueError as exc:
        raise CorpusError(str(exc), path) from exc


def load_task(path: str | Path, vocabulary: Vocabulary | None = None) -> TaskDefinition:
    path = Path(path)
    vocabulary = vocabulary or load_vocabulary()
    task = parse_task(_read_json(path), vocabulary, path)
    report = validate_task(task, vocabulary)
    if not report.ok:
        raise TaskValidationError(task.id, report.violations, path)
    return task


def load_corpus(path: str | Path | None = None, vocabulary: Vocabulary | None = None) -> list[TaskDefinition]:
    """Load and validate every ``*.task`` document under ``path`` (sorted by file name)."""
    path = Path(path) if path is not None else bundled_corpus_path()
    if not path.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {path}")
    vocabulary = vocabulary or load_vocabulary()
    tasks = [load_task(p, vocabulary) for p in sorted(path.glob("*.task"))]
    seen = Counter(t.id for t in tasks)
    dupes = sorted(tid for tid, n in seen.items() if n > 1)
    if dupes:
        raise CorpusError(f"duplicate task ids: {', '.join(dupes)}", path)
    return tasks


# --------------------------------------------------------------------------- validation


def validate_task(task: TaskDefinition, vocabulary: Vocabulary | None = None) -> ValidationReport:
    vocabulary = vocabulary or load_vocabulary()
    violations: list[str] = []

    if task.scenario not in SCENARIOS:
        violations.append(f"unknown scenario {task.scenario!r}")

    names = [o.name for o in task.objects]
    for name, n in Counter(names).items():
        if n > 1:
            violations.append(f"duplicate object {name!r}")
    for o in task.objects:
        if not o.initial_state:
            violations.append(f"object {o.name!r} has empty initial state")

    ids = [a.id for a in task.actions]
    for aid, n in Counter(ids).items():
        if n > 1:
            violations.append(f"duplicate action id {aid!r}")
    known_ids = set(ids)
    known_objects = set(names)

    for a in task.actions:
        template = vocabulary.templates.get(a.verb)
        if template is None and vocabulary.for_verb(a.verb):
            violations.append(f"{a.id}: arity mismatch, no {a.verb!r} form takes {len(a.objects)}")
        elif template is None:
            violations.append(f"{a.id}: unknown verb {a.verb!r}")
        elif template.arity != len(a.objects):
            violations.append(f"{a.id}: arity mismatch, {a.verb!r} takes {template.arity}")
        if not MIN_DURATION <= a.duration_min <= MAX_DURATION:
            violations.append(f"{a.id}: duration out of range ({a.duration_min})")
        for o in a.objects:
            if o not in known_objects:
                violations.append(f"{a.id}: dangling object reference {o!r}")
        for d in a.depends_on:
            if d not in known_ids:
                violations.append(f"{a.id}: dangling dependency {d!r}")

    graph = {a.id: [d for d in a.depends_on if d in known_ids] for a in task.actions}
    try:
        tuple(TopologicalSorter(graph).static_order())
    except CycleError as exc:
        cycle = sorted(set(exc.args[1]))
        violations.append("cycle: {" + ", ".join(cycle) + "}")

    if task.actions and not any(not a.depends_on for a in task.actions):
        violations.append("no action without dependencies")

    return ValidationReport(task.id, tuple(violations))


# --------------------------------------------------------------------------- combination


def combine_tasks(
    tasks: Sequence[TaskDefinition],
    constraint_mode: Iterable[str] | None = None,
    vocabulary: Vocabulary | None = None,
    set_id: str | None = None,
) -> TaskSet:
    """Merge 1-3 same-scenario tasks into one :class:`TaskSet`.

    An object name needed by several tasks becomes ``name_1``, ``name_2``, ...
    (numbered in task order) unless it is listed in ``constraint_mode``, in
    which case all tasks share one instance.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("cannot combine an empty task list")
    if len(tasks) > MAX_TASKS_PER_SET:
        raise ValueError(f"at most {MAX_TASKS_PER_SET} tasks per set, got {len(tasks)}")
    scenarios = {t.scenario for t in tasks}
    if len(scenarios) > 1:
        raise ValueError(f"cannot mix scenarios: {sorted(scenarios)}")
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate task in combination: {ids}")
    vocabulary = vocabulary or load_vocabulary()
    constrained = tuple(dict.fromkeys(constraint_mode or ()))

    users: dict[str, list[int]] = {}
    for k, t in enumerate(tasks):
        for o in t.objects:
            users.setdefault(o.name, []).append(k)

    def renamed(name: str, k: int) -> str:
        owners = users[name]
        if len(owners) == 1 or name in constrained:
            return name
        return f"{name}_{owners.index(k) + 1}"

    merged: list[ObjectSpec] = []
    emitted: set[str] = set()
    for t in tasks:
        for o in t.objects:
            if o.name in emitted:
                continue
            emitted.add(o.name)
            owners = users[o.name]
            if len(owners) == 1 or o.name in constrained:
                merged.append(ObjectSpec(o.name, o.initial_state, 1))
                continue
            for j, k in enumerate(owners, start=1):
                spec = next(x for x in tasks[k].objects if x.name == o.name)
                merged.append(ObjectSpec(f"{o.name}_{j}", spec.initial_state, 1))

    new_tasks = []
    for k, t in enumerate(tasks):
        actions = tuple(
            ActionInstance(
                id=f"{t.id}/{a.id}",
                verb=a.verb,
                objects=tuple(renamed(o, k) for o in a.objects),
                duration_min=a.duration_min,
                occupancy=a.occupancy,
                depends_on=tuple(f"{t.id}/{d}" for d in a.depends_on),
                provenance=a.provenance,
            )
            for a in t.actions
        )
        objects = tuple(ObjectSpec(renamed(o.name, k), o.initial_state, 1) for o in t.objects)
        new_tasks.append(
            TaskDefinition(t.id, t.scenario, t.description, actions, objects, t.notes)
        )

    return TaskSet(
        id=set_id or "+".join(ids),
        tasks=tuple(new_tasks),
        merged_objects=tuple(merged),
        time_limit_min=MINUTES_PER_TASK * len(tasks),
        constraint_mode=constrained,
        vocabulary=vocabulary,
    )


def render_instruction(task_set: TaskSet) -> str:
    """Full first-turn instruction text for ``task_set``. Durations are never shown."""
    vocabulary = task_set.vocabulary or load_vocabulary()
    parts = [PREAMBLE]
    for k, t in enumerate(task_set.tasks, start=1):
        lines = [f"**Task {k}**", "<Description>", f"- {t.description}", "<Valid Actions and Usages>"]
        for key in dict.fromkeys(a.verb for a in t.actions):
            tpl = vocabulary[key]
            lines.append(f"- {tpl.slot_pattern}: {tpl.description}.")
        lines.append(WAIT_USAGE)
        parts.append("\n".join(lines))
    parts.append(
        "**All Available Objects(OBJ)**\n" + "; ".join(o.name for o in task_set.merged_objects)
    )
    parts.append(
        "**The Initial States of Objects**\n"
        + "; ".join(f"{o.name}: {o.initial_state}" for o in task_set.merged_objects)
    )
    return "\n\n".join(parts)


# --------------------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    tasks: tuple[str, ...]
    constraint_objects: tuple[str, ...] = ()


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    doc = _read_json(path)
    try:
        entries = [
            ManifestEntry(
                id=row.get("id") or "+".join(row["tasks"]),
                tasks=tuple(row["tasks"]),
                constraint_objects=tuple(row.get("constraint_objects", ())),
            )
            for row in doc["sets"]
        ]
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"malformed manifest entry: {exc}", path) from exc
    dupes = [k for k, n in Counter(e.id for e in entries).items() if n > 1]
    if dupes:
        raise CorpusError(f"duplicate set ids: {dupes}", path)
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    rows = []
    for e in entries:
        row = {"id": e.id, "tasks": list(e.tasks)}
        if e.constraint_objects:
            row["constraint_objects"] = list(e.constraint_objects)
        rows.append(row)
    body = ",\n".join("  " + json.dumps(r) for r in rows)
    Path(path).write_text('{"sets": [\n' + body + "\n]}\n", encoding="utf-8")


def build_task_sets(
    entries: Iterable[ManifestEntry],
    corpus: Sequence[TaskDefinition],
    vocabulary: Vocabulary | None = None,
    extra_constraints: Iterable[str] = (),
) -> list[TaskSet]:
    by_id = {t.id: t for t in corpus}
    vocabulary = vocabulary or load_vocabulary()
    extra = tuple(extra_constraints)
    sets = []
    for e in entries:
        missing = [tid for tid in e.tasks if tid not in by_id]
        if missing:
            raise KeyError(f"set {e.id!r} references unknown tasks: {missing}")
        sets.append(
            combine_tasks(
                [by_id[tid] for tid in e.tasks],
                constraint_mode=e.constraint_objects + extra,
                vocabulary=vocabulary,
                set_id=e.id,
            )
        )
    return sets


def sample_combinations(
    corpus: Sequence[TaskDefinition],
    n_tasks: int,
    count: int,
    seed: int,
    max_actions: int | None = None,
) -> list[tuple[str, ...]]:
    """Draw ``count`` distinct same-scenario ``n_tasks``-combinations, seeded.

    Combinations whose total action count exceeds ``max_actions`` are skipped.
    """
    pool = []
    for scenario in SCENARIOS:
        members = [t for t in corpus if t.scenario == scenario]
        for combo in itertools.combinations(members, n_tasks):
            if max_actions is not None and sum(len(t.actions) for t in combo) > max_actions:
                continue
            pool.append(tuple(t.id for t in combo))
    rng = random.Random(seed)
    return rng.sample(pool, min(count, len(pool)))


PAIR_SEED = 1
TRIPLE_SEED = 2
SAMPLED_SETS = 10
SAMPLE_MAX_ACTIONS = 20  # keeps every sampled set within brute-force reach


def standard_manifests(corpus: Sequence[TaskDefinition]) -> dict[str, list[ManifestEntry]]:
    """The bundled manifests, rebuilt from ``corpus`` with fixed seeds."""
    single = [ManifestEntry(t.id, (t.id,)) for t in sorted(corpus, key=lambda t: t.id)]

    def sampled(n: int, seed: int) -> list[ManifestEntry]:
        combos = sample_combinations(corpus, n, SAMPLED_SETS, seed, SAMPLE_MAX_ACTIONS)
        return sorted((ManifestEntry("+".join(c), c) for c in combos), key=lambda e: e.id)

    shared = ("beef_fried_rice", "noodle_dish")
    constraint = [
        ManifestEntry("beef_fried_rice+noodle_dish", shared),
        ManifestEntry("beef_fried_rice+noodle_dish@pot", shared, ("pot",)),
        ManifestEntry("beef_fried_rice+noodle_dish@pot,fryer,oven", shared, ("pot", "fryer", "oven")),
    ]
    return {
        "single.json": single,
        "pairs.json": sampled(2, PAIR_SEED),
        "triples.json": sampled(3, TRIPLE_SEED),
        "constraint.json": constraint,
    }
