"""Named synthetic course presets.

The course presets carry the instructional-design metadata of nine real
courses (setting, field, level, language, weeks, quiz/video ratio, students,
success rate). The synthetic generator only borrows weeks, quiz/video ratio and
success rate from them; student counts are capped for desk-scale runs.
"""

from __future__ import annotations

from .clickstream import SyntheticConfig
from .errors import ValidationError

MAX_DESK_STUDENTS = 200

COURSE_METADATA = {
    "mooc-la": {"course_title": "Algebra (part 2)", "course_code": "MOOC LA", "setting": "MOOC",
                "field": "Math", "level": "Prop", "language": "French", "weeks": 4,
                "quiz_video_ratio": 2.13, "students": 170, "success_rate": 0.67},
    "flip-la": {"course_title": "Algebre lineaire", "course_code": "Flip LA", "setting": "Flipped",
                "field": "Math", "level": "BSc", "language": "French", "weeks": 10,
                "quiz_video_ratio": 1.76, "students": 214, "success_rate": 0.59},
    "mooc-fp": {"course_title": "Functional Programming Principles in Scala", "course_code": "MOOC FP",
                "setting": "MOOC", "field": "CS", "level": "BSc", "language": "English", "weeks": 6,
                "quiz_video_ratio": 0.52, "students": 3565, "success_rate": 0.48},
    "flip-fp": {"course_title": "Functional programming", "course_code": "Flip FP", "setting": "Flipped",
                "field": "CS", "level": "MSc", "language": "English", "weeks": 10,
                "quiz_video_ratio": 0.21, "students": 218, "success_rate": 0.62},
    "va1": {"course_title": "African Cities - An introduction to urban planning", "course_code": "VA1",
            "setting": "MOOC", "field": "SS", "level": "BSc", "language": "English", "weeks": 12,
            "quiz_video_ratio": 5.42, "students": 5643, "success_rate": 0.10},
    "va2": {"course_title": "African Cities - An introduction to urban planning", "course_code": "VA2",
            "setting": "MOOC", "field": "SS", "level": "Prop", "language": "French", "weeks": 12,
            "quiz_video_ratio": 5.42, "students": 4699, "success_rate": 0.05},
    "an1": {"course_title": "Analyse Numérique pour Ingénieurs", "course_code": "AN1", "setting": "MOOC",
            "field": "Math", "level": "BSc", "language": "French", "weeks": 9,
            "quiz_video_ratio": 9.14, "students": 506, "success_rate": 0.08},
    "an2": {"course_title": "Analyse Numérique pour Ingénieurs", "course_code": "AN2", "setting": "MOOC",
            "field": "Math", "level": "BSc", "language": "French", "weeks": 9,
            "quiz_video_ratio": 9.14, "students": 506, "success_rate": 0.71},
    "geo": {"course_title": "Éléments de Géomatique", "course_code": "Geo", "setting": "MOOC",
            "field": "Eng.", "level": "BSc", "language": "French", "weeks": 11,
            "quiz_video_ratio": 3.89, "students": 452, "success_rate": 0.45},
}

PAIR_PRESETS = {
    "setting-fp": ("flip-fp", "mooc-fp"),
    "setting-la": ("flip-la", "mooc-la"),
    "active-learning": ("geo", "an2"),
    "optimality": ("an1", "an2"),
    "language": ("va1", "va2"),
    "demo": ("demo-a", "demo-b"),
    "separable": ("separable",),
}

# small stand-ins for quick runs and model sanity checks
EXTRA_COURSES = {
    # two offerings of one quiz-heavy design that differ only in cohort success
    # rate, like the an1/an2 pair, shortened to five weeks for quick runs
    "demo-a": dict(n_students=160, weeks=5, n_videos_per_week=2, n_quizzes_per_week=18, pass_rate=0.08,
                   engagement_decay_fail=0.6, quiz_accuracy_pass=0.85, quiz_accuracy_fail=0.35,
                   proactivity_shift_pass=1),
    "demo-b": dict(n_students=160, weeks=5, n_videos_per_week=2, n_quizzes_per_week=18, pass_rate=0.71,
                   engagement_decay_fail=0.6, quiz_accuracy_pass=0.85, quiz_accuracy_fail=0.35,
                   proactivity_shift_pass=1),
    "separable": dict(n_students=200, weeks=6, n_videos_per_week=2, n_quizzes_per_week=2, pass_rate=0.5,
                      engagement_decay_fail=0.4, quiz_accuracy_pass=0.95, quiz_accuracy_fail=0.15,
                      proactivity_shift_pass=1),
}


def _objects_per_week(ratio: float) -> tuple[int, int]:
    if ratio >= 1:
        return 2, max(1, round(2 * ratio))
    return max(1, round(1 / ratio)), 1


def course_config(name: str, seed: int = 0) -> SyntheticConfig:
    """Synthetic config for a named course preset."""
    if name in EXTRA_COURSES:
        return SyntheticConfig(course_id=name, seed=seed, **EXTRA_COURSES[name])
    if name not in COURSE_METADATA:
        raise ValidationError(f"unknown course preset {name!r}")
    meta = COURSE_METADATA[name]
    videos, quizzes = _objects_per_week(meta["quiz_video_ratio"])
    flipped = meta["setting"] == "Flipped"
    return SyntheticConfig(
        n_students=min(meta["students"], MAX_DESK_STUDENTS),
        weeks=meta["weeks"],
        n_videos_per_week=videos,
        n_quizzes_per_week=quizzes,
        pass_rate=meta["success_rate"],
        # compulsory flipped courses lose fewer failing students over time
        engagement_decay_fail=0.8 if flipped else 0.6,
        quiz_accuracy_pass=0.85,
        quiz_accuracy_fail=0.35,
        proactivity_shift_pass=0 if flipped else 1,
        seed=seed,
        course_id=name,
        metadata=dict(meta),
    )


def preset_courses(name: str) -> tuple[str, ...]:
    if name in PAIR_PRESETS:
        return PAIR_PRESETS[name]
    if name in COURSE_METADATA or name in EXTRA_COURSES:
        return (name,)
    raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PAIR_PRESETS)}")
