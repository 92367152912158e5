"""Shared loaders for the committed micro-clickstream fixtures."""

from __future__ import annotations

import json
import math
from pathlib import Path

from coursexai.clickstream import read_events, read_labels, read_schedule

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_names() -> list[str]:
    return sorted(p.name for p in FIXTURES.iterdir() if (p / "expected.json").exists())


def load_fixture(name: str):
    root = FIXTURES / name
    schedule = read_schedule(root / "schedule.json")
    events = read_events(root / "events.jsonl", schedule)
    labels = read_labels(root / "labels.csv")
    doc = json.loads((root / "expected.json").read_text(encoding="utf-8"))
    return schedule, events, labels, doc


def expected_value(cell):
    """Decode one expected cell: null -> None (NaN), number, or an exact fraction / root."""
    if cell is None or isinstance(cell, (int, float)):
        return cell
    if "num" in cell:
        return cell["num"] / cell["den"]
    return math.sqrt(cell["sqrt_num"] / cell["sqrt_den"])


def is_count(name: str) -> bool:
    return name in {
        "check-check-check-quiz", "distinct-probs-quiz", "play-stop-play-vid",
        "play-pause-load-vid", "pause-speedchange-play-vid",
    }
