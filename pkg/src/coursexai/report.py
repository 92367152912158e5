"""Static SVG heatmaps and a markdown summary.

SVG text is assembled by hand with fixed number formatting so identical
inputs always give identical bytes.
"""

from __future__ import annotations

import logging
from html import escape
from typing import Mapping, Sequence

import numpy as np

from .compare import AggregatedRanking, ComparisonMatrix, PairInsight
from .errors import ValidationError

log = logging.getLogger(__name__)

DISPLAY_THRESHOLD = 1e-4
POSITIVE_RGB = "26,152,80"
NEGATIVE_RGB = "215,48,39"
CELL = 22
LABEL_W = 230
TITLE_H = 26


def select_heatmap_features(rankings: Sequence[AggregatedRanking]) -> list[int]:
    """Union of each ranking's top positive and top negative feature, in feature order."""
    chosen: set[int] = set()
    for r in rankings:
        s = np.asarray(r.scores)
        hi, lo = int(np.argmax(s)), int(np.argmin(s))
        if s[hi] > 0:
            chosen.add(hi)
        if s[lo] < 0:
            chosen.add(lo)
    return sorted(chosen)


def _svg_open(width: int, height: int) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]


def _cell(x: int, y: int, value: float) -> str:
    if abs(value) < DISPLAY_THRESHOLD or not np.isfinite(value):
        return f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="none" stroke="#dddddd"/>'
    rgb = POSITIVE_RGB if value > 0 else NEGATIVE_RGB
    return (f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({rgb})" '
            f'fill-opacity="{min(abs(value), 1.0):.4f}" stroke="#dddddd"/>')


def pair_heatmap_svg(
    panels: Mapping[tuple[str, str], np.ndarray],
    rankings: Sequence[AggregatedRanking],
    features: Sequence[str],
    methods: Sequence[str],
    courses: Sequence[str],
) -> tuple[str, list[int]]:
    """Feature x week heatmaps, one panel per (method, course).

    ``panels[(method, course)]`` holds the ``W x F`` mean signed scores over
    sampled students; each panel is scaled by its own max |score|. Returns the
    SVG text and the selected feature indices.
    """
    if not panels:
        raise ValidationError("no explanations to plot")
    rows = select_heatmap_features(rankings)
    scaled = {}
    for key, mat in panels.items():
        mat = np.asarray(mat, dtype=float)
        top = np.abs(mat).max() if mat.size else 0.0
        scaled[key] = mat / top if top > 0 else np.zeros_like(mat)
    shown = [scaled[k][:, rows] for k in scaled if rows]
    if not rows or all(np.all(np.abs(s) < DISPLAY_THRESHOLD) for s in shown):
        log.warning("all heatmap cells fall below the display threshold %g", DISPLAY_THRESHOLD)

    weeks = {c: next(m.shape[0] for (mm, cc), m in panels.items() if cc == c) for c in courses}
    panel_w = {c: weeks[c] * CELL + 20 for c in courses}
    body_h = max(1, len(rows)) * CELL
    width = LABEL_W + sum(panel_w.values()) + 20
    height = TITLE_H + len(methods) * (body_h + TITLE_H + 18) + 40
    out = _svg_open(width, height)
    out.append(f'<text x="8" y="18" font-size="13" font-weight="bold">'
               f'{escape(" vs ".join(courses))}: normalized importance by week</text>')
    y0 = TITLE_H + 8
    for method in methods:
        out.append(f'<text x="8" y="{y0 + 12}" font-weight="bold">{escape(method)}</text>')
        x0 = LABEL_W
        for course in courses:
            out.append(f'<text x="{x0}" y="{y0 + 12}">{escape(course)}</text>')
            mat = scaled.get((method, course))
            for r, f in enumerate(rows):
                y = y0 + TITLE_H - 8 + r * CELL
                for w in range(weeks[course]):
                    val = 0.0 if mat is None else float(mat[w, f])
                    out.append(_cell(x0 + w * CELL, y, val))
            x0 += panel_w[course]
        for r, f in enumerate(rows):
            y = y0 + TITLE_H - 8 + r * CELL + 15
            out.append(f'<text x="8" y="{y}">{escape(features[f])}</text>')
        y0 += body_h + TITLE_H + 18
    x0 = LABEL_W
    for course in courses:
        for w in range(weeks[course]):
            out.append(f'<text x="{x0 + w * CELL + 7}" y="{y0 + 4}" font-size="9">{w}</text>')
        x0 += panel_w[course]
    out.append(f'<text x="8" y="{y0 + 22}" font-size="9">green: pass indicator, red: fail indicator; '
               f'|score| &lt; {DISPLAY_THRESHOLD:g} blank</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n", rows


def matrix_heatmap_svg(matrix: ComparisonMatrix) -> str:
    names = matrix.label_strings()
    n = len(names)
    size = 44
    left, top = 180, 60
    width, height = left + n * size + 20, top + n * size + 30
    out = _svg_open(width, height)
    out.append(f'<text x="8" y="18" font-size="13" font-weight="bold">{escape(matrix.metric)} agreement</text>')
    for i, name in enumerate(names):
        out.append(f'<text x="8" y="{top + i * size + 26}">{escape(name)}</text>')
        out.append(f'<text x="{left + i * size + 4}" y="{top - 6}" font-size="8" '
                   f'transform="rotate(-30 {left + i * size + 4} {top - 6})">{escape(name)}</text>')
        for j in range(n):
            v = float(matrix.values[i, j])
            rgb = "49,130,189" if v >= 0 else NEGATIVE_RGB
            out.append(f'<rect x="{left + j * size}" y="{top + i * size}" width="{size}" height="{size}" '
                       f'fill="rgb({rgb})" fill-opacity="{min(abs(v), 1.0):.4f}" stroke="#999999"/>')
            out.append(f'<text x="{left + j * size + 8}" y="{top + i * size + 26}" font-size="10">{v:.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def summary_markdown(metrics: Mapping[str, dict], agreement: Mapping[str, tuple[float, float]],
                     insights: Sequence[PairInsight]) -> str:
    lines = ["# Explainer comparison summary", "", "## Models", "",
             "| course | balanced accuracy | n_train | n_test |", "|---|---|---|---|"]
    for cid, m in metrics.items():
        lines.append(f"| {cid} | {m['bac']:.4f} | {m['n_train']} | {m['n_test']} |")
    lines += ["", "## Agreement (mean off-diagonal)", "", "| metric | within method | across methods |",
              "|---|---|---|"]
    for metric, (within, across) in agreement.items():
        lines.append(f"| {metric} | {within:.4f} | {across:.4f} |")
    lines += ["", "## Course-pair insights", "",
              "| pair | method | direction | feature | delta | period |", "|---|---|---|---|---|---|"]
    for ins in insights:
        pair = f"{ins.course_a} -> {ins.course_b}"
        for direction, items in (("rises", ins.positive), ("falls", ins.negative)):
            for it in items:
                lines.append(f"| {pair} | {ins.method} | {direction} | {it['feature']} | "
                             f"{it['delta']:+.4g} | {it['period']} |")
        if ins.zero_change:
            lines.append(f"| {pair} | {ins.method} | none | (no change) | 0 | - |")
    return "\n".join(lines) + "\n"
