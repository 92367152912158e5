"""Weekly behavioural features, NaN imputation and min-max scaling."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clickstream import (
    DEFAULT_GAP_THRESHOLD,
    Action,
    CourseSchedule,
    Interaction,
    StudentLabel,
    assign_week,
    group_by_student,
    sessionize,
    validate_course,
)
from .errors import ValidationError

DAY = 86400
HOUR = 3600


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    dimension: str
    definition: str
    nan_possible: bool


FEATURE_SPECS: tuple[FeatureSpec, ...] = (
    FeatureSpec("check-check-check-quiz", "Effort",
                "windows of three consecutive quiz submissions inside one session", False),
    FeatureSpec("correct-time-quiz", "Effort", "active quiz time / correct submissions", True),
    FeatureSpec("distinct-probs-quiz", "Effort", "distinct quizzes submitted", False),
    FeatureSpec("num-submit-quiz", "Effort", "submissions / distinct quizzes submitted", True),
    FeatureSpec("total-time-vid", "Effort", "cumulative active video time (seconds)", False),
    FeatureSpec("active-participation-weekly-vid", "Regularity",
                "videos watched fully / distinct videos loaded this week", True),
    FeatureSpec("attendance-rate", "Regularity",
                "released videos played so far / videos released so far", True),
    FeatureSpec("hourly-freq-regular", "Regularity",
                "mean pairwise cosine similarity of daily hour-of-day histograms", False),
    FeatureSpec("watch-ratio-vid", "Regularity", "mean watched time / duration over opened videos", True),
    FeatureSpec("std-time-session", "Regularity", "standard deviation of session durations", True),
    FeatureSpec("eager-view-vid", "Proactivity",
                "mean (scheduled week - first view week) / W over videos first viewed on or before schedule", True),
    FeatureSpec("timely-view-vid", "Proactivity",
                "share of this week's videos first viewed in their scheduled week", True),
    FeatureSpec("eager-view-quiz", "Proactivity", "quiz analogue of eager-view-vid", True),
    FeatureSpec("ratio-clicks-weekend", "Proactivity", "weekend clicks / weekday clicks", True),
    FeatureSpec("std-correct-time-quiz", "Proactivity",
                "standard deviation over quizzes of active time / correct submissions", True),
    FeatureSpec("avg-len-seek-vid", "Control", "mean |seek_to - seek_from| (seconds)", True),
    FeatureSpec("freq-pause-vid", "Control", "pauses per hour of active video time", True),
    FeatureSpec("freq-play-vid", "Control", "plays per hour of session time", True),
    FeatureSpec("play-stop-play-vid", "Control", "count of Play, Stop, Play event trigrams", False),
    FeatureSpec("play-pause-load-vid", "Control", "count of Play, Pause, Load event trigrams", False),
    FeatureSpec("pause-speedchange-play-vid", "Control", "count of Pause, SpeedChange, Play event trigrams", False),
    FeatureSpec("speed-vid", "Control",
                "mean playback speed; 1.0 with video activity but no speed change", True),
)
FEATURE_NAMES: tuple[str, ...] = tuple(s.name for s in FEATURE_SPECS)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


@dataclass
class FeatureMatrix:
    students: list[str]
    weeks: int
    values: np.ndarray
    nan_mask: np.ndarray
    features: tuple[str, ...] = FEATURE_NAMES
    per_feature_min: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    course_id: str = ""

    def __post_init__(self):
        expected = (len(self.students), self.weeks, len(self.features))
        if self.values.shape != expected:
            raise ValidationError(f"feature tensor shape {self.values.shape} != {expected}")
        if self.nan_mask.shape != expected:
            raise ValidationError("nan_mask shape does not match values")

    def student_index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.students)}

    def subset(self, student_ids: Sequence[str]) -> "FeatureMatrix":
        idx = self.student_index()
        rows = [idx[s] for s in student_ids]
        return replace(
            self,
            students=list(student_ids),
            values=self.values[rows],
            nan_mask=self.nan_mask[rows],
            labels=None if self.labels is None else self.labels[rows],
        )


# ---------------------------------------------------------------------------
# extraction

@dataclass
class _Week:
    """Accumulators for one student-week."""
    video_active: float = 0.0
    quiz_active: float = 0.0
    quiz_active_by_obj: dict = field(default_factory=lambda: defaultdict(float))
    watched_by_video: dict = field(default_factory=lambda: defaultdict(float))
    submits: int = 0
    correct: int = 0
    correct_by_quiz: dict = field(default_factory=lambda: defaultdict(int))
    quizzes: set = field(default_factory=set)
    loaded: set = field(default_factory=set)
    opened: set = field(default_factory=set)
    played: set = field(default_factory=set)
    days: dict = field(default_factory=lambda: defaultdict(lambda: np.zeros(24)))
    weekend_clicks: int = 0
    weekday_clicks: int = 0
    seeks: list = field(default_factory=list)
    speeds: list = field(default_factory=list)
    pauses: int = 0
    plays: int = 0
    video_events: int = 0
    session_durations: list = field(default_factory=list)


_PLAY_ENDERS = {Action.VIDEO_PAUSE, Action.VIDEO_STOP, Action.VIDEO_LOAD, Action.VIDEO_PLAY, Action.QUIZ_SUBMIT}
_TRIGRAMS = {
    "check-check-check-quiz": (Action.QUIZ_SUBMIT, Action.QUIZ_SUBMIT, Action.QUIZ_SUBMIT),
    "play-stop-play-vid": (Action.VIDEO_PLAY, Action.VIDEO_STOP, Action.VIDEO_PLAY),
    "play-pause-load-vid": (Action.VIDEO_PLAY, Action.VIDEO_PAUSE, Action.VIDEO_LOAD),
    "pause-speedchange-play-vid": (Action.VIDEO_PAUSE, Action.VIDEO_SPEED, Action.VIDEO_PLAY),
}


def _mean_pairwise_cosine(hists: list[np.ndarray]) -> float:
    if len(hists) < 2:
        return 0.0
    sims = []
    for a, b in itertools.combinations(hists, 2):
        sims.append(float(a @ b) / (math.sqrt(float(a @ a)) * math.sqrt(float(b @ b))))
    return float(np.mean(sims))


def _student_features(
    events: Sequence[Interaction],
    schedule: CourseSchedule,
    objects: dict,
    gap_threshold: float,
    full_watch_fraction: float,
) -> np.ndarray:
    W = schedule.weeks
    out = np.full((W, len(FEATURE_NAMES)), np.nan)
    acc = [_Week() for _ in range(W)]
    counts = {name: np.zeros(W) for name in _TRIGRAMS}
    first_view_video: dict[str, int] = {}
    first_view_quiz: dict[str, int] = {}
    play_weeks: dict[str, int] = {}

    sessions = sessionize(events, gap_threshold)
    for session in sessions:
        evs = session.events
        acc[assign_week(session.start, schedule)].session_durations.append(session.duration)
        for i, ev in enumerate(evs):
            w = assign_week(ev.t, schedule)
            a = acc[w]
            if i + 1 < len(evs):
                gap = evs[i + 1].t - ev.t
                if ev.action.is_video:
                    a.video_active += gap
                else:
                    a.quiz_active += gap
                    a.quiz_active_by_obj[ev.object_id] += gap
            if i >= 2:
                triple = (evs[i - 2].action, evs[i - 1].action, ev.action)
                for name, pattern in _TRIGRAMS.items():
                    if triple == pattern:
                        counts[name][w] += 1

            day = ev.t // DAY
            a.days[day][(ev.t % DAY) // HOUR] += 1
            if day % 7 in (5, 6):
                a.weekend_clicks += 1
            else:
                a.weekday_clicks += 1

            act = ev.action
            if act is Action.QUIZ_SUBMIT:
                a.submits += 1
                a.quizzes.add(ev.object_id)
                if ev.correct:
                    a.correct += 1
                    a.correct_by_quiz[ev.object_id] += 1
                first_view_quiz.setdefault(ev.object_id, w)
                continue
            a.video_events += 1
            if act in (Action.VIDEO_LOAD, Action.VIDEO_PLAY):
                a.opened.add(ev.object_id)
                first_view_video.setdefault(ev.object_id, w)
            if act is Action.VIDEO_LOAD:
                a.loaded.add(ev.object_id)
            elif act is Action.VIDEO_PLAY:
                a.plays += 1
                a.played.add(ev.object_id)
                play_weeks.setdefault(ev.object_id, w)
                end = session.end
                for nxt in evs[i + 1:]:
                    if nxt.action in _PLAY_ENDERS:
                        end = nxt.t
                        break
                a.watched_by_video[ev.object_id] += end - ev.t
            elif act is Action.VIDEO_PAUSE:
                a.pauses += 1
            elif act is Action.VIDEO_SEEK:
                if ev.seek_from is not None and ev.seek_to is not None:
                    a.seeks.append(abs(ev.seek_to - ev.seek_from))
            elif act is Action.VIDEO_SPEED:
                if ev.speed is not None:
                    a.speeds.append(ev.speed)

    F = FEATURE_INDEX
    videos = schedule.videos()
    quizzes = schedule.quizzes()
    cum_video_time = 0.0
    cum_watched: dict[str, float] = defaultdict(float)
    for w in range(W):
        a = acc[w]
        row = out[w]
        for name in _TRIGRAMS:
            row[F[name]] = counts[name][w]
        row[F["correct-time-quiz"]] = a.quiz_active / a.correct if a.correct else np.nan
        row[F["distinct-probs-quiz"]] = len(a.quizzes)
        row[F["num-submit-quiz"]] = a.submits / len(a.quizzes) if a.quizzes else np.nan
        cum_video_time += a.video_active
        row[F["total-time-vid"]] = cum_video_time

        for vid, secs in a.watched_by_video.items():
            cum_watched[vid] += secs
        if a.loaded:
            full = sum(
                1 for v in a.loaded if cum_watched[v] >= full_watch_fraction * objects[v].duration_sec
            )
            row[F["active-participation-weekly-vid"]] = full / len(a.loaded)
        released = [v.object_id for v in videos if v.scheduled_week <= w]
        if released:
            played = sum(1 for v in released if v in play_weeks and play_weeks[v] <= w)
            row[F["attendance-rate"]] = played / len(released)
        row[F["hourly-freq-regular"]] = _mean_pairwise_cosine([a.days[d] for d in sorted(a.days)])
        if a.opened:
            ratios = [min(1.0, a.watched_by_video.get(v, 0.0) / objects[v].duration_sec) for v in sorted(a.opened)]
            row[F["watch-ratio-vid"]] = float(np.mean(ratios))
        if a.session_durations:
            row[F["std-time-session"]] = float(np.std(a.session_durations))

        for name, first_view, pool in (
            ("eager-view-vid", first_view_video, videos),
            ("eager-view-quiz", first_view_quiz, quizzes),
        ):
            leads = [
                (o.scheduled_week - w) / W
                for o in pool
                if first_view.get(o.object_id) == w and w <= o.scheduled_week
            ]
            if leads:
                row[F[name]] = float(np.mean(leads))
        due = [v for v in videos if v.scheduled_week == w]
        if due:
            row[F["timely-view-vid"]] = sum(1 for v in due if first_view_video.get(v.object_id) == w) / len(due)
        if a.weekday_clicks:
            row[F["ratio-clicks-weekend"]] = a.weekend_clicks / a.weekday_clicks
        per_quiz = [a.quiz_active_by_obj.get(q, 0.0) / c for q, c in sorted(a.correct_by_quiz.items()) if c > 0]
        if per_quiz:
            row[F["std-correct-time-quiz"]] = float(np.std(per_quiz))

        if a.seeks:
            row[F["avg-len-seek-vid"]] = float(np.mean(a.seeks))
        if a.video_active > 0:
            row[F["freq-pause-vid"]] = a.pauses / (a.video_active / HOUR)
        total_active = a.video_active + a.quiz_active
        if total_active > 0:
            row[F["freq-play-vid"]] = a.plays / (total_active / HOUR)
        if a.speeds:
            row[F["speed-vid"]] = float(np.mean(a.speeds))
        elif a.video_events:
            row[F["speed-vid"]] = 1.0
    return out


def extract_features(
    events: Sequence[Interaction],
    schedule: CourseSchedule,
    labels: Sequence[StudentLabel],
    gap_threshold: float = DEFAULT_GAP_THRESHOLD,
    full_watch_fraction: float = 0.9,
) -> FeatureMatrix:
    """Compute the raw ``students x weeks x 22`` tensor; undefined ratios stay NaN.

    Students are ordered as in ``labels``. Per-event quantities land in the week
    of the event; session-level statistics in the week the session starts;
    trigram counts in the week of the trigram's last event.
    """
    report = validate_course(schedule, events, labels)
    if not report.ok:
        raise ValidationError("inconsistent dataset: " + "; ".join(report.findings()[:5]))
    objects = schedule.object_map()
    by_student = group_by_student(events)
    students = [lab.student_id for lab in labels]
    values = np.empty((len(students), schedule.weeks, len(FEATURE_NAMES)))
    for i, sid in enumerate(students):
        evs = sorted(by_student.get(sid, []), key=lambda e: e.t)
        values[i] = _student_features(evs, schedule, objects, gap_threshold, full_watch_fraction)
    return FeatureMatrix(
        students=students,
        weeks=schedule.weeks,
        values=values,
        nan_mask=np.isnan(values),
        labels=np.array([lab.passed for lab in labels], dtype=bool),
        course_id=schedule.course_id,
    )


def impute_nan(matrix: FeatureMatrix) -> FeatureMatrix:
    """Replace NaNs with the per-feature minimum over all students and weeks (0 if never defined)."""
    values = matrix.values.copy()
    mask = np.isnan(values) | matrix.nan_mask
    mins = np.zeros(values.shape[2])
    for f in range(values.shape[2]):
        col = values[:, :, f]
        defined = col[~mask[:, :, f]]
        if defined.size:
            mins[f] = defined.min()
        col[mask[:, :, f]] = mins[f]
    return replace(matrix, values=values, nan_mask=mask, per_feature_min=mins)


# ---------------------------------------------------------------------------
# scaling

@dataclass(frozen=True)
class MinMaxStats:
    features: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "min": [float(v) for v in self.minimum],
            "max": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MinMaxStats":
        return cls(tuple(doc["features"]), np.asarray(doc["min"], float), np.asarray(doc["max"], float))


def fit_minmax(matrix: FeatureMatrix, train_ids: Sequence[str]) -> MinMaxStats:
    sub = matrix.subset(train_ids).values
    return MinMaxStats(matrix.features, sub.min(axis=(0, 1)), sub.max(axis=(0, 1)))


def normalize_features(matrix: FeatureMatrix, stats: MinMaxStats) -> FeatureMatrix:
    missing = [f for f in matrix.features if f not in stats.features]
    if missing:
        raise ValidationError(f"scaling stats missing features: {missing}")
    order = [stats.features.index(f) for f in matrix.features]
    lo, hi = stats.minimum[order], stats.maximum[order]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (matrix.values - lo) / safe, 0.0)
    return replace(matrix, values=np.clip(scaled, 0.0, 1.0))


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return repr(float(x))


def format_feature_csv(matrix: FeatureMatrix) -> str:
    buf = io.StringIO()
    buf.write("student_id,week,feature,value,imputed\n")
    for i, sid in enumerate(matrix.students):
        for w in range(matrix.weeks):
            for f, name in enumerate(matrix.features):
                buf.write(f"{sid},{w},{name},{_fmt(matrix.values[i, w, f])},{int(matrix.nan_mask[i, w, f])}\n")
    return buf.getvalue()


def write_feature_matrix(csv_path: Path, matrix: FeatureMatrix) -> Path:
    csv_path = Path(csv_path)
    csv_path.write_text(format_feature_csv(matrix), encoding="utf-8")
    sidecar = csv_path.with_suffix(".json")
    doc = {
        "course_id": matrix.course_id,
        "students": matrix.students,
        "weeks": matrix.weeks,
        "features": list(matrix.features),
        "per_feature_min": None if matrix.per_feature_min is None else [float(v) for v in matrix.per_feature_min],
        "labels": None if matrix.labels is None else [int(v) for v in matrix.labels],
    }
    sidecar.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return sidecar


def read_feature_matrix(csv_path: Path) -> FeatureMatrix:
    csv_path = Path(csv_path)
    doc = json.loads(csv_path.with_suffix(".json").read_text(encoding="utf-8"))
    students, features = doc["students"], tuple(doc["features"])
    s_idx = {s: i for i, s in enumerate(students)}
    f_idx = {f: i for i, f in enumerate(features)}
    shape = (len(students), doc["weeks"], len(features))
    values = np.full(shape, np.nan)
    mask = np.zeros(shape, dtype=bool)
    with csv_path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (s_idx[row["student_id"]], int(row["week"]), f_idx[row["feature"]])
            values[key] = float(row["value"])
            mask[key] = row["imputed"] == "1"
    pfm = doc.get("per_feature_min")
    labels = doc.get("labels")
    return FeatureMatrix(
        students=students,
        weeks=doc["weeks"],
        values=values,
        nan_mask=mask,
        features=features,
        per_feature_min=None if pfm is None else np.asarray(pfm, float),
        labels=None if labels is None else np.asarray(labels, bool),
        course_id=doc.get("course_id", ""),
    )
