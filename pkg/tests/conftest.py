from __future__ import annotations

from pathlib import Path

import pytest

from multitask_arena.model import combine_tasks, load_corpus, load_vocabulary, parse_task

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def vocabulary():
    return load_vocabulary()


@pytest.fixture(scope="session")
def corpus(vocabulary):
    return {t.id: t for t in load_corpus(vocabulary=vocabulary)}


@pytest.fixture(scope="session")
def task_set(corpus, vocabulary):
    def build(*ids, constraint=(), set_id=None):
        return combine_tasks([corpus[i] for i in ids], constraint, vocabulary, set_id)

    return build


def make_task(vocabulary, actions, objects, tid="t", scenario="household", description="Do the thing."):
    """Build a task from compact rows ``(id, verb, objects, minutes, occupies, deps)``."""
    doc = {
        "id": tid,
        "scenario": scenario,
        "description": description,
        "objects": [{"name": n, "initial_state": s} for n, s in objects],
        "actions": [
            {
                "id": aid,
                "verb": verb,
                "objects": list(objs),
                "duration_min": d,
                "occupancy": "occupies_agent" if occ else "agent_idle",
                "depends_on": list(deps),
            }
            for aid, verb, objs, d, occ, deps in actions
        ],
    }
    return parse_task(doc, vocabulary)


def make_set(vocabulary, actions, objects, constraint=(), **kw):
    return combine_tasks([make_task(vocabulary, actions, objects, **kw)], constraint, vocabulary)


@pytest.fixture
def build(vocabulary):
    def _build(actions, objects, **kw):
        return make_set(vocabulary, actions, objects, **kw)

    return _build


_CRITERIA: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA.append((props["criterion"], report.outcome.upper(), props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(_CRITERIA, key=lambda c: int(c[0].split()[0])):
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {name}{'  (' + detail + ')' if detail else ''}")
