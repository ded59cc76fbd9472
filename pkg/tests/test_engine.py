from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GOLDEN
from multitask_arena.engine import (
    ERROR_KINDS,
    EndReason,
    Episode,
    FeedbackKind,
    apply,
    check_invariants,
    initial_state,
    parse_action,
    tick,
    validate,
)
from multitask_arena.metrics import Category, classify_turn
from multitask_arena.model import load_corpus, load_vocabulary, combine_tasks

# --------------------------------------------------------------------------- parsing


def test_parse_examples(vocabulary):
    req = parse_action("I will wash clothes", vocabulary, ["clothes", "washing_machine"])
    assert (req.verb, req.objects) == ("wash", ("clothes",))
    assert parse_action("wait", vocabulary).is_wait
    req = parse_action("First pick rice, then cook rice in pot", vocabulary, ["rice", "pot"])
    assert (req.verb, req.objects) == ("cook in", ("rice", "pot"))


def test_parse_spaced_object_names(vocabulary):
    req = parse_action("pour coffee machine into cup", vocabulary, ["coffee_machine", "cup"])
    assert (req.verb, req.objects) == ("pour into", ("coffee_machine", "cup"))


def test_parse_verb_shaped_object(vocabulary):
    req = parse_action("heat iron", vocabulary, ["iron"])
    assert (req.verb, req.objects) == ("heat", ("iron",))


def test_parse_unrecognised_text(vocabulary):
    req = parse_action("clean teapot\nplease", vocabulary, ["teapot"])
    assert not req.well_formed
    assert req.verb == "clean teapot"


def test_parse_unknown_object_still_parses(vocabulary):
    req = parse_action("fry beef in pan", vocabulary, ["beef", "fryer"])
    assert (req.verb, req.objects, req.well_formed) == ("fry in", ("beef", "pan"), True)


def test_wait_inside_a_sentence(vocabulary):
    assert parse_action("I will wait for the water", vocabulary, ["water"]).is_wait


_FILLER = ["i", "will", "then", "first", "next", "now", "ok", "so", "let", "me"]


def _phrases():
    corpus = load_corpus()
    vocabulary = load_vocabulary()
    out = []
    for task in corpus:
        ts = combine_tasks([task], vocabulary=vocabulary)
        for a in ts.actions:
            out.append((ts.phrase(a.id), a.verb, a.objects, ts.object_names))
    return out


_PHRASES = _phrases()


@settings(max_examples=300, deadline=None)
@given(
    st.lists(
        st.one_of(st.sampled_from(_FILLER), st.sampled_from(range(len(_PHRASES))), st.just("wait")),
        min_size=1,
        max_size=8,
    )
)
def test_parser_returns_last_phrase(segments):
    """Oracle: the last phrase-or-wait segment written is the one extracted."""
    vocabulary = load_vocabulary()
    words, expected, objects = [], None, set()
    for seg in segments:
        if isinstance(seg, int):
            phrase, verb, objs, names = _PHRASES[seg]
            words.append(phrase)
            expected = (verb, objs)
            objects.update(names)
        else:
            words.append(seg)
            if seg == "wait":
                expected = ("wait", ())
    req = parse_action(" ".join(words), vocabulary, sorted(objects))
    if expected is None:
        assert not req.well_formed
    else:
        assert (req.verb, req.objects) == expected


# --------------------------------------------------------------------------- feedback texts


def test_occupying_start_fast_forwards(task_set):
    ep = Episode(task_set("coffee"))
    rec = ep.step("wash cup")
    assert rec.feedback.text == "You are doing ``wash cup``, it will take 9 minutes."
    assert ep.prompt() == "In t=10, your action is:"


def test_golden_transcript(task_set):
    ep = Episode(task_set("beef_fried_rice"))
    for text in ["wash dish", "cook rice in pot", "wait"]:
        ep.step(text)
    assert ep.render_transcript() == (GOLDEN / "beef_fried_rice.transcript.txt").read_text(encoding="utf-8")
    assert ep.state.clock_min == 5


def test_dependency_violation_message(task_set):
    ep = Episode(task_set("make_tea"))
    rec = ep.step("brew tea with teapot")
    assert rec.feedback.kind is FeedbackKind.WRONG_INPUT
    assert rec.feedback.text == "Cannot perform action brew with on object tea. Because tea is dry."


def test_shrimp_raw_message(build):
    ts = build(
        [
            ("a1", "cook", ["noodle", "pot"], 5, False, []),
            ("a2", "add", ["shrimp", "pot"], 1, True, ["a1"]),
        ],
        [("noodle", "raw"), ("shrimp", "raw"), ("pot", "empty")],
    )
    rec = Episode(ts).step("add shrimp to pot")
    assert rec.feedback.text == "Cannot perform action add to on object shrimp. Because shrimp is raw."


def test_occupied_object_message(build):
    ts = build(
        [
            ("a1", "cook", ["rice", "pot"], 4, False, []),
            ("a2", "cook", ["noodle", "pot"], 3, False, []),
        ],
        [("rice", "raw"), ("noodle", "raw"), ("pot", "empty")],
    )
    ep = Episode(ts)
    ep.step("cook rice in pot")
    rec = ep.step("cook noodle in pot")
    assert rec.feedback.text == "Object pot is being occupied by another action"
    assert rec.feedback.kind is FeedbackKind.OCCUPIED_OBJECT


def test_agent_busy_message(task_set):
    ts = task_set("coffee")
    state = initial_state(ts)
    state.agent_busy_until = 5
    req = parse_action("add water to coffee_machine", ts.vocabulary, ts.object_names)
    fb = validate(req, state, ts)
    assert fb.text == "You are being occupied by another action"
    assert fb.kind is FeedbackKind.OCCUPIED_OBJECT


def test_nonexistent_object_message(task_set):
    rec = Episode(task_set("beef_fried_rice")).step("fry beef in pan")
    assert rec.feedback.text == "pan is non-existent"


def test_mismatched_object_message(task_set):
    rec = Episode(task_set("chicken_potato_stir_fry")).step("read potato")
    assert rec.feedback.text == "You cannot perform read on potato."


def test_repeated_action_message(build):
    ts = build([("a1", "wash", ["beaker"], 2, True, []), ("a2", "heat", ["flask"], 3, False, [])],
               [("beaker", "dirty"), ("flask", "cool")])
    ep = Episode(ts)
    ep.step("wash beaker")
    assert ep.step("wash beaker").feedback.text == "wash beaker has been completed"


def test_invalid_action_message(task_set):
    rec = Episode(task_set("make_tea")).step("clean teapot")
    assert rec.feedback.text == "clean teapot is invalid"


def test_validation_order(task_set):
    ts = task_set("make_tea")
    state = initial_state(ts)

    def kind(text):
        return validate(parse_action(text, ts.vocabulary, ts.object_names), state, ts).kind

    # unknown verb beats unknown object; unknown object beats mismatch
    assert kind("clean pan") is FeedbackKind.INVALID_ACTION
    assert kind("wash pan") is FeedbackKind.NONEXISTENT_OBJECT
    assert kind("wash kettle") is FeedbackKind.MISMATCHED_OBJECT
    assert kind("pour tea into cup") is FeedbackKind.WRONG_INPUT
    assert kind("wash teapot") is FeedbackKind.ACTION_START
    assert kind("wait") is FeedbackKind.WAIT_ACK


def test_apply_refuses_rejected_request(task_set):
    ts = task_set("make_tea")
    with pytest.raises(ValueError):
        apply(parse_action("clean teapot", ts.vocabulary, ts.object_names), initial_state(ts), ts)


# --------------------------------------------------------------------------- time


def test_tick_without_actions(task_set):
    ts = task_set("make_tea")
    state, done = tick(initial_state(ts), ts)
    assert state.clock_min == 2 and done == []


def test_same_minute_completions_follow_start_order(build):
    ts = build(
        [("a1", "heat", ["iron"], 3, False, []), ("a2", "activate", ["kettle"], 2, False, [])],
        [("iron", "cool"), ("kettle", "inactive")],
    )
    ep = Episode(ts)
    ep.step("heat iron")  # t=1, due at clock 4
    ep.step("activate kettle")  # t=2, due at clock 4
    rec = ep.step("wait")  # t=3 -> clock 4
    assert [c.text for c in rec.completions] == ["iron is hot.", "kettle is active."]
    assert ep.outcome.reason is EndReason.ALL_DONE
    assert ep.outcome.completion_minute == 3


def test_activate_kettle_completes_after_eight_minutes(task_set):
    ep = Episode(task_set("make_tea"))
    ep.step("activate kettle")
    finished_at = None
    while finished_at is None:
        rec = ep.step("wait")
        if any(c.text == "kettle is active." for c in rec.completions):
            finished_at = ep.state.clock_min
    assert finished_at == 9
    assert ep.state.object_occupied["kettle"] is None


def test_make_tea_action_type_trajectory(task_set):
    ep = Episode(task_set("make_tea"))
    script = [
        (1, "clean teapot", Category.INVALID_ACTION_OR_OBJECT),
        (2, "brew tea with teapot", Category.DEPENDENCY_VIOLATION),
        (3, "wash teapot", Category.VALID_ACTION),
        (4, "wash kettle", Category.OBJECT_MISMATCHED),
        (5, "wash teapot", Category.REPEATING_COMPLETED),
        (6, "activate kettle", Category.VALID_ACTION),
        (7, "wait", Category.WAIT),
    ]
    for minute, text, category in script:
        assert ep.state.clock_min == minute
        assert classify_turn(ep.step(text)) is category


def test_five_minutes_of_twenty_is_a_quarter(build):
    ts = build(
        [
            ("a1", "heat", ["iron"], 5, False, []),
            ("a2", "wash", ["cup"], 7, True, []),
            ("a3", "wash", ["dish"], 8, True, []),
        ],
        [("iron", "cool"), ("cup", "dirty"), ("dish", "dirty")],
    )
    ep = Episode(ts)
    ep.step("heat iron")
    for _ in range(4):
        ep.step("wait")
    assert ep.state.progress_pct == Fraction(25)


# --------------------------------------------------------------------------- finishing


def test_timeout_after_limit(task_set):
    ep = Episode(task_set("make_tea"))
    while not ep.done:
        ep.step("wait")
    assert ep.outcome.reason is EndReason.TIME_OUT
    assert ep.state.clock_min == 41
    assert len(ep.records) == 40
    assert ep.outcome.final_progress_pct == 0


def test_timeout_keeps_partial_progress(task_set):
    ep = Episode(task_set("make_tea"))
    ep.step("wash teapot")
    while not ep.done:
        ep.step("wait")
    assert ep.outcome.reason is EndReason.TIME_OUT
    assert ep.outcome.final_progress_pct == Fraction(100, 14)


def test_five_errors_end_the_episode(task_set):
    ep = Episode(task_set("make_tea"))
    for _ in range(5):
        ep.step("gibberish")
    assert ep.outcome.reason is EndReason.ERROR_STREAK
    assert ep.state.clock_min == 6


def test_streak_reset(task_set):
    ep = Episode(task_set("make_tea"))
    for _ in range(4):
        ep.step("gibberish")
    ep.step("wash teapot")
    assert ep.state.error_streak == 0
    for _ in range(4):
        ep.step("gibberish")
    ep.step("wait")
    for _ in range(4):
        ep.step("gibberish")
    assert not ep.done


def test_failed_attempt_costs_a_minute(task_set):
    ep = Episode(task_set("make_tea"))
    ep.step("clean teapot")
    assert ep.state.clock_min == 2


def test_step_after_end_raises(task_set):
    ep = Episode(task_set("make_tea"))
    for _ in range(5):
        ep.step("x")
    with pytest.raises(RuntimeError):
        ep.step("wait")


def test_determinism(task_set):
    script = ["activate kettle", "nope", "wash teapot", "wait", "brew tea with teapot"] + ["wait"] * 12

    def play():
        ep = Episode(task_set("make_tea"))
        for text in script:
            if ep.done:
                break
            ep.step(text)
        return ep.render_transcript(), ep.outcome

    assert play() == play()


def test_error_kinds_are_the_six_failures():
    assert len(ERROR_KINDS) == 6
    assert FeedbackKind.WAIT_ACK not in ERROR_KINDS


def test_state_sound_along_episode(task_set):
    ep = Episode(task_set("pizza"))
    for text in ["pick tomato", "bake dough in oven", "pick dough", "chop tomato", "add tomato to dough"]:
        ep.step(text)
        assert check_invariants(ep.state, ep.task_set) == []
