from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coursexai.clickstream import (
    Action,
    CourseSchedule,
    Interaction,
    Kind,
    LearningObject,
    StudentLabel,
    SyntheticConfig,
    assign_week,
    format_events,
    format_labels,
    generate_synthetic_course,
    group_by_student,
    parse_events,
    parse_labels,
    sessionize,
    validate_course,
)
from coursexai.errors import ValidationError


def small_schedule(weeks=3):
    objects = (
        LearningObject("v1", Kind.VIDEO, 0, 300.0),
        LearningObject("q1", Kind.QUIZ, 0),
        LearningObject("v2", Kind.VIDEO, 1, 120.0),
    )
    return CourseSchedule("tiny", weeks, objects)


def make_events(times, sid="s1", action=Action.VIDEO_PLAY, obj="v1"):
    return [Interaction(sid, t, action, obj) for t in times]


# --- parsing -------------------------------------------------------------

def test_parse_empty_stream():
    assert parse_events(b"", small_schedule()) == []
    assert parse_events("\n\n", small_schedule()) == []


def test_parse_quiz_submit_preserves_correct_flag():
    line = '{"student_id":"a","t":42,"action":"quiz.submit","object_id":"q1","correct":false}'
    (ev,) = parse_events(line, small_schedule())
    assert ev == Interaction("a", 42, Action.QUIZ_SUBMIT, "q1", correct=False)
    assert parse_events(ev.to_json(), small_schedule()) == [ev]


def test_kind_mismatch_names_the_line():
    text = (
        '{"student_id":"a","t":1,"action":"video.load","object_id":"v1"}\n'
        '{"student_id":"a","t":2,"action":"video.play","object_id":"v1"}\n'
        '{"student_id":"a","t":3,"action":"video.play","object_id":"q1"}\n'
    )
    with pytest.raises(ValidationError, match=r"line 3\b.*video\.play"):
        parse_events(text, small_schedule())


@pytest.mark.parametrize("line, message", [
    ('{"student_id":"a","t":1,"action":"video.play"}', "missing field 'object_id'"),
    ('{"student_id":"a","t":-5,"action":"video.play","object_id":"v1"}', "negative timestamp"),
    ('{"student_id":"a","t":1.5,"action":"video.play","object_id":"v1"}', "integer"),
    ('{"student_id":"a","t":1,"action":"video.rewind","object_id":"v1"}', "unknown action"),
    ('{"student_id":"a","t":1,"action":"video.play","object_id":"zz"}', "unknown object_id"),
    ('{"student_id":"a","t":1,"action":"video.speed","object_id":"v1","speed":0}', "out of range"),
    ('{"student_id":"a","t":1,"action":"quiz.submit","object_id":"q1","correct":"yes"}', "boolean"),
    ('not json', "malformed JSON"),
])
def test_malformed_lines_rejected(line, message):
    with pytest.raises(ValidationError, match=message):
        parse_events(line, small_schedule())


def test_parse_sorts_by_student_then_time_stably():
    evs = [
        Interaction("b", 5, Action.VIDEO_PLAY, "v1"),
        Interaction("a", 9, Action.VIDEO_PLAY, "v1"),
        Interaction("a", 9, Action.VIDEO_PAUSE, "v1"),
        Interaction("a", 1, Action.VIDEO_LOAD, "v1"),
    ]
    parsed = parse_events(format_events(evs), small_schedule())
    assert [(e.student_id, e.t, e.action) for e in parsed] == [
        ("a", 1, Action.VIDEO_LOAD), ("a", 9, Action.VIDEO_PLAY), ("a", 9, Action.VIDEO_PAUSE),
        ("b", 5, Action.VIDEO_PLAY),
    ]


def test_labels_round_trip_and_rejects_bad_values():
    labels = [StudentLabel("x", True), StudentLabel("y", False)]
    assert parse_labels(format_labels(labels)) == labels
    with pytest.raises(ValidationError):
        parse_labels("student_id,passed\nx,maybe\n")
    with pytest.raises(ValidationError):
        parse_labels("id,label\nx,1\n")


def test_schedule_round_trip():
    sched = small_schedule()
    assert CourseSchedule.from_dict(sched.to_dict()) == sched


# --- weeks and sessions --------------------------------------------------

def test_assign_week_boundaries():
    sched = small_schedule(weeks=3)
    assert assign_week(0, sched) == 0
    assert assign_week(sched.seconds_per_week - 1, sched) == 0
    assert assign_week(sched.seconds_per_week, sched) == 1
    assert assign_week(50 * sched.seconds_per_week, sched) == 2


def test_sessionize_examples():
    assert sessionize([], 1800) == []
    one = sessionize(make_events([0, 100, 1899, 3000]), 1800)
    assert len(one) == 1
    two = sessionize(make_events([0, 10, 4000]), 1800)
    assert [s.duration for s in two] == [10, 0]
    assert [len(s.events) for s in two] == [2, 1]


def test_sessionize_gap_equal_to_threshold_stays_in_session():
    assert len(sessionize(make_events([0, 1800]), 1800)) == 1
    assert len(sessionize(make_events([0, 1801]), 1800)) == 2


def test_sessionize_rejects_mixed_or_unsorted_input():
    with pytest.raises(ValueError):
        sessionize(make_events([10, 5]))
    with pytest.raises(ValueError):
        sessionize(make_events([1]) + make_events([2], sid="other"))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 20000), min_size=1, max_size=40), st.integers(1, 3000))
def test_sessions_partition_events(times, gap):
    times = sorted(times)
    sessions = sessionize(make_events(times), gap)
    assert [e.t for s in sessions for e in s.events] == times
    for s in sessions:
        steps = np.diff([e.t for e in s.events])
        assert np.all(steps <= gap)
    for prev, nxt in zip(sessions, sessions[1:]):
        assert nxt.start - prev.end > gap


# --- synthetic generation ------------------------------------------------

def test_generator_is_deterministic():
    cfg = SyntheticConfig(n_students=30, weeks=3, seed=11)
    a = generate_synthetic_course(cfg)
    b = generate_synthetic_course(cfg)
    assert format_events(a[1]) == format_events(b[1])
    assert format_labels(a[2]) == format_labels(b[2])
    assert a[0].to_dict() == b[0].to_dict()
    c = generate_synthetic_course(SyntheticConfig(n_students=30, weeks=3, seed=12))
    assert format_events(c[1]) != format_events(a[1])


def test_generator_pass_count_rounds_n_times_rate():
    _, _, labels = generate_synthetic_course(SyntheticConfig(n_students=100, pass_rate=0.5, weeks=2))
    assert sum(lab.passed for lab in labels) == 50
    _, _, labels = generate_synthetic_course(SyntheticConfig(n_students=10, pass_rate=0.25, weeks=2))
    assert sum(lab.passed for lab in labels) == 3


def test_generator_output_is_consistent():
    sched, events, labels = generate_synthetic_course(SyntheticConfig(n_students=40, weeks=4, seed=3))
    assert validate_course(sched, events, labels).ok
    reparsed = parse_events(format_events(events), sched)
    assert reparsed == sorted(events, key=lambda e: (e.student_id, e.t))
    assert all(0 <= e.t < sched.weeks * sched.seconds_per_week for e in events)


def test_failing_cohort_engagement_decays():
    cfg = SyntheticConfig(n_students=200, weeks=4, pass_rate=0.5, engagement_decay_fail=0.5, seed=5)
    sched, events, labels = generate_synthetic_course(cfg)
    failing = {lab.student_id for lab in labels if not lab.passed}
    per_week = np.zeros(sched.weeks)
    for ev in events:
        if ev.student_id in failing:
            per_week[assign_week(ev.t, sched)] += 1
    per_week /= len(failing)
    assert np.all(np.diff(per_week) < 0), per_week


def test_generator_emits_every_trigram_pattern():
    _, events, _ = generate_synthetic_course(SyntheticConfig(n_students=60, weeks=3, seed=2))
    seen = set()
    for evs in group_by_student(events).values():
        for session in sessionize(sorted(evs, key=lambda e: e.t)):
            acts = [e.action for e in session.events]
            seen.update(zip(acts, acts[1:], acts[2:]))
    P, S, L, Q, X = Action.VIDEO_PLAY, Action.VIDEO_STOP, Action.VIDEO_LOAD, Action.QUIZ_SUBMIT, Action.VIDEO_SPEED
    for pattern in [(P, S, P), (P, Action.VIDEO_PAUSE, L), (Action.VIDEO_PAUSE, X, P), (Q, Q, Q)]:
        assert pattern in seen


def test_synthetic_config_validation():
    with pytest.raises(ValidationError):
        generate_synthetic_course(SyntheticConfig(pass_rate=1.5))
    with pytest.raises(ValidationError):
        generate_synthetic_course(SyntheticConfig(n_students=0))


# --- validation report ---------------------------------------------------

def test_validate_reports_orphans_and_duplicates():
    sched = small_schedule()
    events = make_events([1, 2])
    assert validate_course(sched, events, [StudentLabel("s1", True)]).ok

    report = validate_course(sched, events, [StudentLabel("s1", True), StudentLabel("ghost", False)])
    assert report.orphan_label_students == ["ghost"]
    assert len(report.findings()) == 1

    dup = CourseSchedule("d", 3, sched.objects + (LearningObject("v1", Kind.VIDEO, 2, 10.0),))
    report = validate_course(dup, events, [StudentLabel("s1", True)])
    assert report.duplicate_object_ids == ["v1"]
    assert len(report.findings()) == 1

    report = validate_course(sched, events + make_events([3], sid="stranger"), [StudentLabel("s1", True)])
    assert report.orphan_event_students == ["stranger"]
