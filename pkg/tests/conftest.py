from __future__ import annotations

import json

import pytest

MINI_COURSE = {
    "n_students": 24, "weeks": 3, "n_videos_per_week": 1, "n_quizzes_per_week": 2, "pass_rate": 0.5,
    "engagement_decay_fail": 0.6, "quiz_accuracy_pass": 0.85, "quiz_accuracy_fail": 0.35,
    "proactivity_shift_pass": 1,
}

# A two-course run small enough for the unit suite; every stage still executes.
MINI_CONFIG = {
    "seed": 5,
    "courses": [
        {"course_id": "mini-a", "synthetic": MINI_COURSE},
        {"course_id": "mini-b", "synthetic": {**MINI_COURSE, "engagement_decay_fail": 0.8}},
    ],
    "train": {"hidden_sizes": [4, 6], "max_epochs": 8, "patience": 3},
    "explain": {"n_per_class": 3, "lime": {"n_samples": 300}, "shap": {"n_coalitions": 256},
                "confounder": {"step": 0.2, "max_iters": 50}},
}


@pytest.fixture
def mini_config_file(tmp_path):
    path = tmp_path / "mini.json"
    path.write_text(json.dumps(MINI_CONFIG), encoding="utf-8")
    return path


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN (deselected or errored before its verdict)")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
