import json
from collections import Counter

import pytest

from conftest import GOLDEN, make_task
from multitask_arena.model import (
    CorpusError,
    MINUTES_PER_TASK,
    TaskValidationError,
    bundled_corpus_path,
    bundled_manifest_path,
    combine_tasks,
    load_corpus,
    load_manifest,
    load_task,
    render_instruction,
    standard_manifests,
    validate_task,
)


def test_vocabulary_has_45_unique_templates(vocabulary):
    assert len(vocabulary) == 45
    assert len({t.key for t in vocabulary}) == 45
    for t in vocabulary:
        assert t.arity in (1, 2)
        assert t.description
        assert t.from_state != t.to_state


def test_slot_patterns(vocabulary):
    assert vocabulary["cook in"].slot_pattern == "cook OBJ1 in OBJ2"
    assert vocabulary["wash"].slot_pattern == "wash OBJ"
    assert sorted(t.key for t in vocabulary.for_verb("put")) == ["put in", "put on"]


def test_make_tea_loads_four_actions(corpus):
    tea = corpus["make_tea"]
    phrases = [(a.verb, a.objects) for a in tea.actions]
    assert phrases == [
        ("activate", ("kettle",)),
        ("wash", ("teapot",)),
        ("brew with", ("tea", "teapot")),
        ("pour into", ("tea", "cup")),
    ]


def test_beef_initial_states(corpus):
    beef = corpus["beef_fried_rice"]
    assert [(o.name, o.initial_state) for o in beef.objects] == [
        ("rice", "unpicked"),
        ("beef", "unpicked"),
        ("pot", "empty"),
        ("fryer", "empty"),
        ("dish", "dirty"),
    ]


def test_durations_stated_in_text(corpus):
    def dur(task, verb, objs):
        return next(a.duration_min for a in corpus[task].actions if a.verb == verb and a.objects == objs)

    assert dur("beef_fried_rice", "wash", ("dish",)) == 2
    assert dur("beef_fried_rice", "cook in", ("rice", "pot")) == 4
    assert dur("coffee", "wash", ("cup",)) == 9
    assert dur("make_tea", "activate", ("kettle",)) == 8


def test_empty_directory_gives_empty_list(tmp_path):
    assert load_corpus(tmp_path) == []


def test_missing_directory_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope")


def test_malformed_document_reports_line(tmp_path):
    bad = tmp_path / "bad.task"
    bad.write_text('{\n  "id": "x",\n  oops\n}\n')
    with pytest.raises(CorpusError) as err:
        load_corpus(tmp_path)
    assert err.value.line == 3
    assert "bad.task:3" in str(err.value)


def test_invalid_document_is_rejected(tmp_path, corpus):
    doc = json.loads((bundled_corpus_path() / "make_tea.task").read_text())
    doc["actions"][0]["duration_min"] = 12
    (tmp_path / "tea.task").write_text(json.dumps(doc))
    with pytest.raises(TaskValidationError) as err:
        load_task(tmp_path / "tea.task")
    assert any("duration out of range" in v for v in err.value.violations)


def test_self_loop_is_a_cycle(vocabulary):
    task = make_task(vocabulary, [("a1", "wash", ["cup"], 2, True, ["a1"])], [("cup", "dirty")])
    report = validate_task(task, vocabulary)
    assert "cycle: {a1}" in report.violations


def test_longer_cycle(vocabulary):
    task = make_task(
        vocabulary,
        [
            ("a0", "heat", ["iron"], 2, False, []),
            ("a1", "wash", ["cup"], 2, True, ["a2"]),
            ("a2", "wash", ["dish"], 2, True, ["a1"]),
        ],
        [("cup", "dirty"), ("dish", "dirty"), ("iron", "cool")],
    )
    assert "cycle: {a1, a2}" in validate_task(task, vocabulary).violations


def test_dangling_and_arity_violations(vocabulary):
    task = make_task(
        vocabulary,
        [
            ("a1", "wash", ["cup", "dish"], 2, True, []),
            ("a2", "wash", ["plate"], 2, True, ["zz"]),
            ("a3", "frobnicate", ["cup"], 0, True, []),
        ],
        [("cup", "dirty"), ("dish", "dirty")],
    )
    v = validate_task(task, vocabulary).violations
    assert any(x.startswith("a1: arity mismatch") for x in v)
    assert "a2: dangling object reference 'plate'" in v
    assert "a2: dangling dependency 'zz'" in v
    assert "a3: unknown verb 'frobnicate'" in v
    assert "a3: duration out of range (0)" in v


def test_bundled_corpus_validates(corpus, vocabulary):
    for task in corpus.values():
        assert validate_task(task, vocabulary).ok, task.id


def test_pair_duplicates_shared_objects(task_set):
    ts = task_set("pizza", "chicken_potato_stir_fry")
    names = ts.object_names
    assert "dish_1" in names and "dish_2" in names and "dish" not in names
    states = dict((o.name, o.initial_state) for o in ts.merged_objects)
    assert states["dish_1"] == states["dish_2"] == "dirty"
    assert ts.time_limit_min == 80


def test_single_limit(task_set):
    assert task_set("make_tea").time_limit_min == MINUTES_PER_TASK


def test_constraint_mode_shares_one_instance(task_set):
    ts = task_set("beef_fried_rice", "noodle_dish", constraint=("pot",))
    assert [n for n in ts.object_names if n.startswith("pot")] == ["pot"]
    assert "fryer_1" in ts.object_names


def test_combine_rejects_bad_input(corpus, vocabulary):
    with pytest.raises(ValueError):
        combine_tasks([], vocabulary=vocabulary)
    with pytest.raises(ValueError, match="mix scenarios"):
        combine_tasks([corpus["pizza"], corpus["make_tea"]], vocabulary=vocabulary)
    with pytest.raises(ValueError):
        combine_tasks([corpus[k] for k in ("coffee", "make_tea", "iron_suit", "garden_bed")], vocabulary=vocabulary)


def test_merged_objects_invariant_under_permutation(task_set):
    a = task_set("coffee", "make_tea", "wash_clothes")
    b = task_set("wash_clothes", "coffee", "make_tea")
    strip = lambda ts: Counter((o.name.rsplit("_", 1)[0] if o.name[-1].isdigit() else o.name, o.initial_state) for o in ts.merged_objects)
    assert strip(a) == strip(b)


@pytest.mark.parametrize(
    "name, ids",
    [
        ("noodle_dish", ["noodle_dish"]),
        ("beef_fried_rice", ["beef_fried_rice"]),
        ("pizza+chicken_potato_stir_fry", ["pizza", "chicken_potato_stir_fry"]),
        ("garden_bed+iron_suit+coffee", ["garden_bed", "iron_suit", "coffee"]),
    ],
)
def test_instruction_matches_golden(task_set, name, ids):
    expected = (GOLDEN / f"{name}.instruction.txt").read_text(encoding="utf-8")
    assert render_instruction(task_set(*ids)) + "\n" == expected


def test_instruction_structure(task_set):
    text = render_instruction(task_set("garden_bed", "iron_suit", "coffee"))
    assert text.count("**Task ") == 3
    assert text.count("**All Available Objects") == 1
    assert "rice; beef; pot; fryer; dish" in render_instruction(task_set("beef_fried_rice"))
    assert render_instruction(task_set("coffee")) == render_instruction(task_set("coffee"))


def test_instruction_hides_durations(task_set):
    text = render_instruction(task_set("coffee"))
    assert "minute" not in text


def test_bundled_manifests_match_regeneration(corpus):
    for name, entries in standard_manifests(list(corpus.values())).items():
        assert load_manifest(bundled_manifest_path(name)) == entries, name


def test_manifest_sizes(corpus):
    pairs = load_manifest(bundled_manifest_path("pairs.json"))
    triples = load_manifest(bundled_manifest_path("triples.json"))
    assert len(pairs) == len(triples) == 10
    assert all(len(e.tasks) == 2 for e in pairs)
    assert all(len(e.tasks) == 3 for e in triples)
    assert all(sum(len(corpus[t].actions) for t in e.tasks) <= 20 for e in pairs + triples)


def test_duplicate_manifest_ids_rejected(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"sets": [{"tasks": ["a"]}, {"tasks": ["a"]}]}')
    with pytest.raises(CorpusError, match="duplicate"):
        load_manifest(p)
