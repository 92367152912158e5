from __future__ import annotations

import numpy as np
import pytest
from helpers import expected_value, fixture_names, is_count, load_fixture
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
    generate_synthetic_course,
)
from coursexai.errors import ValidationError
from coursexai.features import (
    FEATURE_INDEX,
    FEATURE_NAMES,
    FeatureMatrix,
    extract_features,
    fit_minmax,
    impute_nan,
    normalize_features,
    read_feature_matrix,
    write_feature_matrix,
)

F = FEATURE_INDEX


def quiz_schedule(weeks=2):
    return CourseSchedule("q", weeks, (
        LearningObject("q1", Kind.QUIZ, 0),
        LearningObject("q2", Kind.QUIZ, 0),
        LearningObject("v1", Kind.VIDEO, 1, 60.0),
    ))


def submits(times, objs, sid="s1", correct=False):
    return [Interaction(sid, t, Action.QUIZ_SUBMIT, o, correct=correct) for t, o in zip(times, objs)]


def one_student(events, schedule, sid="s1"):
    return extract_features(events, schedule, [StudentLabel(sid, True)]).values[0]


def test_feature_universe_has_22_features_in_table_order():
    assert len(FEATURE_NAMES) == 22
    assert FEATURE_NAMES[0] == "check-check-check-quiz"
    assert FEATURE_NAMES[-1] == "speed-vid"
    assert len(set(FEATURE_NAMES)) == 22


@pytest.mark.parametrize("name", fixture_names())
def test_fixture_matches_hand_computation(name):
    schedule, events, labels, doc = load_fixture(name)
    assert len(events) <= 20
    m = extract_features(events, schedule, labels)
    row = m.students.index(doc["student_id"])
    assert set(doc["expected"]) == set(FEATURE_NAMES)
    for feature, cells in doc["expected"].items():
        assert len(cells) == schedule.weeks
        for w, cell in enumerate(cells):
            got = m.values[row, w, F[feature]]
            want = expected_value(cell)
            if want is None:
                assert np.isnan(got), (feature, w, got)
            elif is_count(feature):
                assert got == want, (feature, w, got)
            else:
                assert got == pytest.approx(want, abs=1e-9), (feature, w, got)


def test_empty_week_gives_zero_counts_and_nan_ratios():
    sched = quiz_schedule()
    vals = one_student(submits([10], ["q1"]), sched)
    assert vals[1, F["check-check-check-quiz"]] == 0
    assert np.isnan(vals[1, F["watch-ratio-vid"]])


def test_distinct_quizzes_and_submits_per_quiz():
    vals = one_student(submits([10, 20, 30], ["q1", "q1", "q2"]), quiz_schedule())
    assert vals[0, F["distinct-probs-quiz"]] == 2
    assert vals[0, F["num-submit-quiz"]] == 1.5


def test_check_check_check_is_a_sliding_window():
    three = one_student(submits([10, 20, 30], ["q1"] * 3), quiz_schedule())
    four = one_student(submits([10, 20, 30, 40], ["q1"] * 4), quiz_schedule())
    assert three[0, F["check-check-check-quiz"]] == 1
    assert four[0, F["check-check-check-quiz"]] == 2
    # a session break interrupts the window
    split = one_student(submits([10, 20, 5000, 5010], ["q1"] * 4), quiz_schedule())
    assert split[0, F["check-check-check-quiz"]] == 0


def test_extract_rejects_inconsistent_dataset():
    sched = quiz_schedule()
    with pytest.raises(ValidationError):
        extract_features(submits([1], ["q1"]), sched, [StudentLabel("someone-else", True)])


# --- imputation and scaling ----------------------------------------------

def column_matrix(values):
    arr = np.asarray(values, dtype=float).reshape(len(values), 1, 1)
    return FeatureMatrix([f"s{i}" for i in range(len(values))], 1, arr, np.isnan(arr), features=("x",))


def test_impute_uses_global_minimum():
    out = impute_nan(column_matrix([2, np.nan, 5]))
    assert out.values.ravel().tolist() == [2, 2, 5]
    assert out.nan_mask.ravel().tolist() == [False, True, False]
    assert out.per_feature_min.tolist() == [2]


def test_impute_identity_without_nans():
    m = column_matrix([3, 1, 4])
    out = impute_nan(m)
    assert np.array_equal(out.values, m.values)
    assert not out.nan_mask.any()


def test_impute_all_nan_column_falls_back_to_zero():
    out = impute_nan(column_matrix([np.nan, np.nan]))
    assert out.values.ravel().tolist() == [0, 0]
    assert out.nan_mask.all()


def test_minmax_examples():
    train = column_matrix([0, 5, 10])
    stats = fit_minmax(train, train.students)
    assert normalize_features(train, stats).values.ravel().tolist() == [0, 0.5, 1]
    test = column_matrix([12])
    assert normalize_features(test, stats).values.ravel().tolist() == [1.0]
    const = column_matrix([3, 3, 3])
    assert normalize_features(const, fit_minmax(const, const.students)).values.ravel().tolist() == [0, 0, 0]


def test_minmax_fit_uses_training_students_only():
    m = column_matrix([0, 10, 100])
    stats = fit_minmax(m, ["s0", "s1"])
    assert normalize_features(m, stats).values.ravel().tolist() == [0, 1, 1]


# --- invariants on synthetic data -----------------------------------------

@pytest.fixture(scope="module")
def synthetic():
    sched, events, labels = generate_synthetic_course(SyntheticConfig(n_students=40, weeks=5, seed=9))
    return sched, events, labels, extract_features(events, sched, labels)


def test_cumulative_features_nondecreasing(synthetic):
    sched, m = synthetic[0], synthetic[3]
    total = m.values[:, :, F["total-time-vid"]]
    assert np.all(np.diff(total, axis=1) >= 0)
    # the rate may fall as new videos are released; the played count may not
    released = np.array([sum(v.scheduled_week <= w for v in sched.videos()) for w in range(sched.weeks)])
    played = np.rint(m.values[:, :, F["attendance-rate"]] * released)
    assert np.all(np.diff(played, axis=1) >= 0)


def test_feature_ranges(synthetic):
    v = synthetic[3].values
    for name in ("watch-ratio-vid", "timely-view-vid", "active-participation-weekly-vid", "attendance-rate",
                 "hourly-freq-regular", "eager-view-vid", "eager-view-quiz"):
        col = v[:, :, F[name]]
        col = col[~np.isnan(col)]
        assert np.all((col >= 0) & (col <= 1)), name
    for name in ("check-check-check-quiz", "distinct-probs-quiz", "play-stop-play-vid",
                 "play-pause-load-vid", "pause-speedchange-play-vid", "total-time-vid"):
        assert np.all(v[:, :, F[name]] >= 0), name


def test_student_isolation(synthetic):
    sched, events, labels, base = synthetic
    target, other = labels[0].student_id, labels[1].student_id
    kept = [e for e in events if e.student_id != other]
    extra = [e for e in events if e.student_id == other][: 3]
    changed = extract_features(kept + extra, sched, labels)
    i = base.students.index(target)
    np.testing.assert_array_equal(changed.values[i], base.values[i])


def test_imputation_idempotent(synthetic):
    once = impute_nan(synthetic[3])
    twice = impute_nan(once)
    np.testing.assert_array_equal(once.values, twice.values)
    np.testing.assert_array_equal(once.nan_mask, twice.nan_mask)
    assert not np.isnan(once.values).any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=1, max_size=12))
def test_imputation_properties(cells):
    vals = [np.nan if c is None else c for c in cells]
    out = impute_nan(column_matrix(vals))
    flat = out.values.ravel()
    assert not np.isnan(flat).any()
    defined = [c for c in cells if c is not None]
    fill = min(defined) if defined else 0.0
    for c, v in zip(cells, flat):
        assert v == (fill if c is None else c)


def test_feature_csv_round_trip(tmp_path, synthetic):
    m = impute_nan(synthetic[3])
    write_feature_matrix(tmp_path / "f.csv", m)
    back = read_feature_matrix(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.values, m.values)
    np.testing.assert_array_equal(back.nan_mask, m.nan_mask)
    assert back.students == m.students and back.features == m.features
    np.testing.assert_array_equal(back.labels, m.labels)
