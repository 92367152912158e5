"""Interaction data model, event-log IO, sessionization and a synthetic course generator."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError

SECONDS_PER_WEEK = 604800
DEFAULT_GAP_THRESHOLD = 1800


class Action(str, Enum):
    VIDEO_LOAD = "video.load"
    VIDEO_PLAY = "video.play"
    VIDEO_PAUSE = "video.pause"
    VIDEO_STOP = "video.stop"
    VIDEO_SEEK = "video.seek"
    VIDEO_SPEED = "video.speed"
    QUIZ_SUBMIT = "quiz.submit"

    @property
    def is_video(self) -> bool:
        return self.value.startswith("video.")


class Kind(str, Enum):
    VIDEO = "Video"
    QUIZ = "Quiz"


@dataclass(frozen=True)
class Interaction:
    student_id: str
    t: int
    action: Action
    object_id: str
    correct: Optional[bool] = None
    seek_from: Optional[float] = None
    seek_to: Optional[float] = None
    speed: Optional[float] = None
    position: Optional[float] = None

    def to_json(self) -> str:
        rec = {"student_id": self.student_id, "t": self.t, "action": self.action.value, "object_id": self.object_id}
        for key in ("correct", "seek_from", "seek_to", "speed", "position"):
            val = getattr(self, key)
            if val is not None:
                rec[key] = val
        return json.dumps(rec, separators=(",", ":"))


@dataclass(frozen=True)
class LearningObject:
    object_id: str
    kind: Kind
    scheduled_week: int
    duration_sec: Optional[float] = None


@dataclass(frozen=True)
class CourseSchedule:
    course_id: str
    weeks: int
    objects: tuple[LearningObject, ...]
    seconds_per_week: int = SECONDS_PER_WEEK
    metadata: Optional[dict] = None

    def __post_init__(self):
        if self.weeks < 1:
            raise ValidationError(f"course {self.course_id!r}: weeks must be positive")
        if self.seconds_per_week < 1:
            raise ValidationError(f"course {self.course_id!r}: seconds_per_week must be positive")

    def object_map(self) -> dict[str, LearningObject]:
        return {o.object_id: o for o in self.objects}

    def videos(self) -> list[LearningObject]:
        return [o for o in self.objects if o.kind is Kind.VIDEO]

    def quizzes(self) -> list[LearningObject]:
        return [o for o in self.objects if o.kind is Kind.QUIZ]

    def to_dict(self) -> dict:
        objs = []
        for o in self.objects:
            rec = {"object_id": o.object_id, "kind": o.kind.value, "scheduled_week": o.scheduled_week}
            if o.duration_sec is not None:
                rec["duration_sec"] = o.duration_sec
            objs.append(rec)
        out = {
            "course_id": self.course_id,
            "weeks": self.weeks,
            "seconds_per_week": self.seconds_per_week,
            "objects": objs,
        }
        if self.metadata is not None:
            out["metadata"] = self.metadata
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "CourseSchedule":
        try:
            objects = tuple(
                LearningObject(
                    object_id=str(o["object_id"]),
                    kind=Kind(o["kind"]),
                    scheduled_week=int(o["scheduled_week"]),
                    duration_sec=o.get("duration_sec"),
                )
                for o in doc["objects"]
            )
            return cls(
                course_id=str(doc["course_id"]),
                weeks=int(doc["weeks"]),
                seconds_per_week=int(doc.get("seconds_per_week", SECONDS_PER_WEEK)),
                objects=objects,
                metadata=doc.get("metadata"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed schedule document: {exc}") from exc


@dataclass(frozen=True)
class StudentLabel:
    student_id: str
    passed: bool


@dataclass(frozen=True)
class Session:
    student_id: str
    events: tuple[Interaction, ...]

    @property
    def start(self) -> int:
        return self.events[0].t

    @property
    def end(self) -> int:
        return self.events[-1].t

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SyntheticConfig:
    n_students: int = 200
    weeks: int = 6
    n_videos_per_week: int = 2
    n_quizzes_per_week: int = 2
    pass_rate: float = 0.5
    engagement_decay_fail: float = 0.6
    quiz_accuracy_pass: float = 0.85
    quiz_accuracy_fail: float = 0.35
    proactivity_shift_pass: int = 1
    seed: int = 0
    course_id: str = "synthetic"
    seconds_per_week: int = SECONDS_PER_WEEK
    metadata: Optional[dict] = None

    def validate(self) -> None:
        problems = []
        if self.n_students < 4:
            problems.append("n_students must be >= 4")
        if self.weeks < 1:
            problems.append("weeks must be >= 1")
        if self.n_videos_per_week < 0 or self.n_quizzes_per_week < 0:
            problems.append("object counts must be >= 0")
        if self.n_videos_per_week + self.n_quizzes_per_week < 1:
            problems.append("at least one object per week is required")
        if not 0 < self.pass_rate < 1:
            problems.append("pass_rate must be in (0, 1)")
        if not 0 < self.engagement_decay_fail <= 1:
            problems.append("engagement_decay_fail must be in (0, 1]")
        for name in ("quiz_accuracy_pass", "quiz_accuracy_fail"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must be in [0, 1]")
        if self.proactivity_shift_pass < 0:
            problems.append("proactivity_shift_pass must be >= 0")
        if self.seconds_per_week < 86400:
            problems.append("seconds_per_week must be at least one day")
        if problems:
            raise ValidationError("invalid synthetic config: " + "; ".join(problems))


# ---------------------------------------------------------------------------
# parsing

_OPTIONAL_FIELDS = ("correct", "seek_from", "seek_to", "speed", "position")


def _parse_line(lineno: int, line: str, objects: dict[str, LearningObject]) -> Interaction:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
    if not isinstance(rec, dict):
        raise ValidationError(f"line {lineno}: expected a JSON object")
    for key in ("student_id", "t", "action", "object_id"):
        if key not in rec:
            raise ValidationError(f"line {lineno}: missing field {key!r}")
    t = rec["t"]
    if isinstance(t, bool) or not isinstance(t, int):
        raise ValidationError(f"line {lineno}: timestamp must be an integer")
    if t < 0:
        raise ValidationError(f"line {lineno}: negative timestamp {t}")
    try:
        action = Action(rec["action"])
    except ValueError:
        raise ValidationError(f"line {lineno}: unknown action {rec['action']!r}") from None
    object_id = str(rec["object_id"])
    obj = objects.get(object_id)
    if obj is None:
        raise ValidationError(f"line {lineno}: unknown object_id {object_id!r}")
    if action.is_video != (obj.kind is Kind.VIDEO):
        raise ValidationError(
            f"line {lineno}: action {action.value} does not match {obj.kind.value} object {object_id!r}"
        )
    extras = {k: rec[k] for k in _OPTIONAL_FIELDS if rec.get(k) is not None}
    if "correct" in extras and not isinstance(extras["correct"], bool):
        raise ValidationError(f"line {lineno}: 'correct' must be boolean")
    for key in ("seek_from", "seek_to", "speed", "position"):
        if key in extras:
            val = extras[key]
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                raise ValidationError(f"line {lineno}: {key!r} must be a finite number")
            if val < 0 or (key == "speed" and val == 0):
                raise ValidationError(f"line {lineno}: {key!r} out of range ({val})")
    return Interaction(student_id=str(rec["student_id"]), t=t, action=action, object_id=object_id, **extras)


def parse_events(stream: bytes | str | Iterable[str], schedule: CourseSchedule) -> list[Interaction]:
    """Parse a JSON Lines event log; blank lines are skipped.

    Returns events sorted by ``(student_id, timestamp)``; the sort is stable, so
    events sharing a timestamp keep their file order.
    """
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    lines = stream.splitlines() if isinstance(stream, str) else stream
    objects = schedule.object_map()
    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        events.append(_parse_line(lineno, line, objects))
    events.sort(key=lambda e: (e.student_id, e.t))
    return events


def format_events(events: Sequence[Interaction]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def read_events(path: Path, schedule: CourseSchedule) -> list[Interaction]:
    return parse_events(Path(path).read_bytes(), schedule)


def write_events(path: Path, events: Sequence[Interaction]) -> None:
    Path(path).write_text(format_events(events), encoding="utf-8")


def read_schedule(path: Path) -> CourseSchedule:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg})") from exc
    return CourseSchedule.from_dict(doc)


def write_schedule(path: Path, schedule: CourseSchedule) -> None:
    Path(path).write_text(json.dumps(schedule.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def parse_labels(text: str) -> list[StudentLabel]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or list(reader.fieldnames)[:2] != ["student_id", "passed"]:
        raise ValidationError("labels CSV must have header 'student_id,passed'")
    labels = []
    for lineno, row in enumerate(reader, start=2):
        if row["passed"] not in ("0", "1"):
            raise ValidationError(f"labels line {lineno}: passed must be 0 or 1")
        labels.append(StudentLabel(row["student_id"], row["passed"] == "1"))
    return labels


def format_labels(labels: Sequence[StudentLabel]) -> str:
    return "student_id,passed\n" + "".join(f"{lab.student_id},{int(lab.passed)}\n" for lab in labels)


def read_labels(path: Path) -> list[StudentLabel]:
    return parse_labels(Path(path).read_text(encoding="utf-8"))


def write_labels(path: Path, labels: Sequence[StudentLabel]) -> None:
    Path(path).write_text(format_labels(labels), encoding="utf-8")


# ---------------------------------------------------------------------------
# weeks and sessions

def assign_week(timestamp: int, schedule: CourseSchedule) -> int:
    return min(max(int(timestamp) // schedule.seconds_per_week, 0), schedule.weeks - 1)


def sessionize(events: Sequence[Interaction], gap_threshold_sec: float = DEFAULT_GAP_THRESHOLD) -> list[Session]:
    """Split one student's time-ordered events into sessions.

    A new session starts whenever the gap to the previous event exceeds
    ``gap_threshold_sec``.
    """
    sessions: list[Session] = []
    current: list[Interaction] = []
    for ev in events:
        if current:
            if ev.student_id != current[-1].student_id:
                raise ValueError("sessionize expects events of a single student")
            if ev.t < current[-1].t:
                raise ValueError("events must be sorted by timestamp")
            if ev.t - current[-1].t > gap_threshold_sec:
                sessions.append(Session(current[0].student_id, tuple(current)))
                current = []
        current.append(ev)
    if current:
        sessions.append(Session(current[0].student_id, tuple(current)))
    return sessions


def group_by_student(events: Iterable[Interaction]) -> dict[str, list[Interaction]]:
    out: dict[str, list[Interaction]] = {}
    for ev in events:
        out.setdefault(ev.student_id, []).append(ev)
    return out


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    orphan_event_students: list[str] = field(default_factory=list)
    orphan_label_students: list[str] = field(default_factory=list)
    duplicate_labels: list[str] = field(default_factory=list)
    out_of_range_weeks: list[str] = field(default_factory=list)
    duplicate_object_ids: list[str] = field(default_factory=list)
    other: list[str] = field(default_factory=list)

    def findings(self) -> list[str]:
        out = [f"events without label: {s}" for s in self.orphan_event_students]
        out += [f"label without events: {s}" for s in self.orphan_label_students]
        out += [f"duplicate label: {s}" for s in self.duplicate_labels]
        out += [f"object scheduled outside course weeks: {o}" for o in self.out_of_range_weeks]
        out += [f"duplicate object_id: {o}" for o in self.duplicate_object_ids]
        return out + list(self.other)

    @property
    def ok(self) -> bool:
        return not self.findings()


def validate_course(
    schedule: CourseSchedule, events: Sequence[Interaction], labels: Sequence[StudentLabel]
) -> ValidationReport:
    report = ValidationReport()
    seen: set[str] = set()
    for obj in schedule.objects:
        if obj.object_id in seen:
            report.duplicate_object_ids.append(obj.object_id)
        seen.add(obj.object_id)
        if not 0 <= obj.scheduled_week < schedule.weeks:
            report.out_of_range_weeks.append(obj.object_id)
        if (obj.kind is Kind.VIDEO) != (obj.duration_sec is not None):
            report.other.append(f"duration_sec must be set iff object is a video: {obj.object_id}")
        elif obj.duration_sec is not None and not obj.duration_sec > 0:
            report.other.append(f"non-positive video duration: {obj.object_id}")

    label_ids: list[str] = [lab.student_id for lab in labels]
    label_set = set()
    for sid in label_ids:
        if sid in label_set:
            report.duplicate_labels.append(sid)
        label_set.add(sid)
    event_students = sorted({ev.student_id for ev in events})
    report.orphan_event_students = [s for s in event_students if s not in label_set]
    event_set = set(event_students)
    report.orphan_label_students = sorted(s for s in label_set if s not in event_set)

    objects = schedule.object_map()
    for ev in events:
        obj = objects.get(ev.object_id)
        if obj is None:
            report.other.append(f"event references unknown object: {ev.object_id}")
        elif ev.action.is_video != (obj.kind is Kind.VIDEO):
            report.other.append(f"action/object kind mismatch: {ev.student_id}@{ev.t}")
    return report


# ---------------------------------------------------------------------------
# synthetic generation

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _video_block(rng, sid, t, obj, passed, emit):
    """One viewing of a video; returns the time after the block."""
    duration = obj.duration_sec
    # occasionally play straight from the previous player without a load
    if rng.random() < 0.8:
        emit(Interaction(sid, t, Action.VIDEO_LOAD, obj.object_id, position=0.0))
        t += int(rng.integers(5, 30))
    watch_frac = rng.uniform(0.9, 1.0) if passed else rng.uniform(0.2, 0.7)
    remaining = watch_frac * duration
    pos = 0.0
    emit(Interaction(sid, t, Action.VIDEO_PLAY, obj.object_id, position=pos))
    # split the viewing into play segments separated by pauses / seeks / speed changes
    n_breaks = int(rng.integers(0, 3))
    for _ in range(n_breaks):
        seg = int(max(1, remaining * rng.uniform(0.2, 0.5)))
        seg = min(seg, 1500)
        t += seg
        pos += seg
        remaining -= seg
        kind = rng.random()
        if kind < 0.5:
            emit(Interaction(sid, t, Action.VIDEO_PAUSE, obj.object_id, position=round(pos, 1)))
            t += int(rng.integers(5, 120))
            if passed and rng.random() < 0.5:
                emit(Interaction(sid, t, Action.VIDEO_SPEED, obj.object_id, speed=float(rng.choice([1.25, 1.5]))))
                t += int(rng.integers(2, 10))
            emit(Interaction(sid, t, Action.VIDEO_PLAY, obj.object_id, position=round(pos, 1)))
        else:
            target = round(float(rng.uniform(0, duration)), 1)
            emit(Interaction(sid, t, Action.VIDEO_SEEK, obj.object_id, seek_from=round(pos, 1), seek_to=target))
            pos = target
    seg = int(max(1, min(remaining, 1500)))
    t += seg
    emit(Interaction(sid, t, Action.VIDEO_STOP if rng.random() < 0.3 else Action.VIDEO_PAUSE, obj.object_id,
                     position=round(min(pos + seg, duration), 1)))
    return t + int(rng.integers(10, 120))


def _quiz_block(rng, sid, t, obj, accuracy, emit):
    attempts = 0
    while True:
        t += int(rng.integers(30, 400))
        correct = bool(rng.random() < accuracy)
        emit(Interaction(sid, t, Action.QUIZ_SUBMIT, obj.object_id, correct=correct))
        attempts += 1
        if correct or attempts >= 3:
            break
    return t + int(rng.integers(10, 60))


def generate_synthetic_course(
    config: SyntheticConfig,
) -> tuple[CourseSchedule, list[Interaction], list[StudentLabel]]:
    """Generate a deterministic synthetic course with pass/fail behavioural archetypes.

    Passing students visit each object ``proactivity_shift_pass`` weeks before its
    scheduled week (floored at week 0), watch most of each video and answer
    quizzes with ``quiz_accuracy_pass``. Failing students visit objects in their
    scheduled week, each with probability ``engagement_decay_fail ** week``, so
    their expected weekly event count decays geometrically.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    spw = config.seconds_per_week
    day = 86400
    days_per_week = max(1, spw // day)

    objects = []
    for w in range(config.weeks):
        for i in range(config.n_videos_per_week):
            dur = float(rng.integers(240, 1200))
            objects.append(LearningObject(f"v{w:02d}_{i:02d}", Kind.VIDEO, w, dur))
        for i in range(config.n_quizzes_per_week):
            objects.append(LearningObject(f"q{w:02d}_{i:02d}", Kind.QUIZ, w))
    schedule = CourseSchedule(config.course_id, config.weeks, tuple(objects), spw, config.metadata)

    n = config.n_students
    n_pass = _round_half_up(n * config.pass_rate)
    width = len(str(n - 1))
    student_ids = [f"s{i:0{width}d}" for i in range(n)]
    passed_flags = np.zeros(n, dtype=bool)
    passed_flags[rng.permutation(n)[:n_pass]] = True
    labels = [StudentLabel(sid, bool(p)) for sid, p in zip(student_ids, passed_flags)]

    by_week: list[list[LearningObject]] = [[] for _ in range(config.weeks)]
    for obj in objects:
        by_week[obj.scheduled_week].append(obj)

    events: list[Interaction] = []
    for sid, passed in zip(student_ids, passed_flags):
        srng = np.random.default_rng([config.seed, int(sid[1:]) + 1])
        student_events: list[Interaction] = []
        preferred_hour = int(srng.integers(7, 21))
        # activity week -> objects visited that week
        visits: dict[int, list[LearningObject]] = {}
        for w in range(config.weeks):
            for obj in by_week[w]:
                if passed:
                    aw = max(0, w - config.proactivity_shift_pass)
                elif srng.random() < config.engagement_decay_fail ** w:
                    aw = w
                else:
                    continue
                visits.setdefault(aw, []).append(obj)
        for aw in sorted(visits):
            todo = visits[aw]
            n_days = min(len(todo), days_per_week, int(srng.integers(1, 4)))
            chosen = np.sort(srng.choice(days_per_week, size=n_days, replace=False))
            chunks = np.array_split(np.arange(len(todo)), n_days)
            for d, chunk in zip(chosen, chunks):
                hour = preferred_hour if passed else int(srng.integers(0, 24))
                t = aw * spw + int(d) * day + hour * 3600 + int(srng.integers(0, 1800))
                for idx in chunk:
                    obj = todo[int(idx)]
                    if obj.kind is Kind.VIDEO:
                        t = _video_block(srng, sid, t, obj, passed, student_events.append)
                    else:
                        acc = config.quiz_accuracy_pass if passed else config.quiz_accuracy_fail
                        t = _quiz_block(srng, sid, t, obj, acc, student_events.append)
        horizon = config.weeks * spw - 1
        student_events = [e if e.t <= horizon else _with_time(e, horizon) for e in student_events]
        student_events.sort(key=lambda e: e.t)
        if not student_events:
            # every student gets at least one event so labels never orphan
            obj = by_week[0][0]
            act = Action.VIDEO_LOAD if obj.kind is Kind.VIDEO else Action.QUIZ_SUBMIT
            extra = {"position": 0.0} if obj.kind is Kind.VIDEO else {"correct": False}
            student_events.append(Interaction(sid, int(srng.integers(0, spw)), act, obj.object_id, **extra))
        events.extend(student_events)
    events.sort(key=lambda e: (e.student_id, e.t))
    return schedule, events, labels


def _with_time(ev: Interaction, t: int) -> Interaction:
    return Interaction(ev.student_id, t, ev.action, ev.object_id, ev.correct, ev.seek_from, ev.seek_to,
                       ev.speed, ev.position)
