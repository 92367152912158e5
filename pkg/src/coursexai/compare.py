"""Agreement statistics between explanations and course-pair insights."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError

PERIODS = ("beginning", "middle", "end")
THROUGHOUT = "throughout"


def importance_ranks(scores) -> np.ndarray:
    """Rank 1 = largest |score|; ties get the average rank."""
    return rankdata(-np.abs(np.asarray(scores, dtype=float)), method="average")


def top_k(scores, k: int) -> list[int]:
    """Indices of the k largest |score|; ties broken by lowest index."""
    return np.argsort(-np.abs(np.asarray(scores, dtype=float)), kind="stable")[:k].tolist()


def spearman_rho(scores_a, scores_b) -> float:
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValidationError("spearman_rho needs two vectors of equal length >= 2")
    ra, rb = importance_ranks(a), importance_ranks(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        raise ValidationError("spearman_rho is undefined for constant |scores|")
    # ranks are half-integers, so the centred sums below are exact for any practical length
    da, db = ra - ra.mean(), rb - rb.mean()
    rho = float(np.dot(da, db) / np.sqrt(np.dot(da, da) * np.dot(db, db)))
    return min(1.0, max(-1.0, rho))


def jaccard_topk(scores_a, scores_b, k: int = 10) -> float:
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if k < 1 or k > min(a.size, b.size):
        raise ValidationError(f"k={k} must lie in [1, {min(a.size, b.size)}]")
    sa, sb = set(top_k(a, k)), set(top_k(b, k))
    return len(sa & sb) / len(sa | sb)


def cohens_kappa(annotations_a, annotations_b) -> float:
    """Binary Cohen's kappa; NaN when chance agreement is 1 (both raters constant and equal)."""
    a = np.asarray(annotations_a, dtype=bool)
    b = np.asarray(annotations_b, dtype=bool)
    if a.shape != b.shape or a.size < 1:
        raise ValidationError("annotation vectors must have equal, non-zero length")
    p_o = float(np.mean(a == b))
    pa, pb = a.mean(), b.mean()
    p_e = float(pa * pb + (1 - pa) * (1 - pb))
    if p_e == 1.0:
        return float("nan")
    return (p_o - p_e) / (1 - p_e)


def mean_cohens_kappa(annotations_a, annotations_b) -> float:
    """Mean of per-category kappas over columns of two ``responses x categories`` tables."""
    A = np.asarray(annotations_a, dtype=bool)
    B = np.asarray(annotations_b, dtype=bool)
    if A.shape != B.shape or A.ndim != 2:
        raise ValidationError("expected two response x category tables of equal shape")
    kappas = [cohens_kappa(A[:, j], B[:, j]) for j in range(A.shape[1])]
    kappas = [k for k in kappas if not np.isnan(k)]
    if not kappas:
        return float("nan")
    return float(np.mean(kappas))


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class AggregatedRanking:
    course_id: str
    method: str
    features: tuple[str, ...]
    scores: np.ndarray
    week_profile: Optional[np.ndarray] = None
    n_students: int = 0

    @property
    def ranks(self) -> np.ndarray:
        return importance_ranks(self.scores)

    def to_dict(self) -> dict:
        return {
            "course_id": self.course_id,
            "method": self.method,
            "features": list(self.features),
            "scores": [float(v) for v in self.scores],
            "ranks": [float(v) for v in self.ranks],
            "week_profile": None if self.week_profile is None else self.week_profile.tolist(),
            "n_students": self.n_students,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AggregatedRanking":
        wp = doc.get("week_profile")
        return cls(doc["course_id"], doc["method"], tuple(doc["features"]), np.asarray(doc["scores"], float),
                   None if wp is None else np.asarray(wp, float), doc.get("n_students", 0))


def aggregate_students(per_feature_scores: Sequence[np.ndarray], course_id: str, method: str,
                       features: Sequence[str], week_scores: Optional[Sequence[np.ndarray]] = None,
                       methods: Optional[Sequence[str]] = None, courses: Optional[Sequence[str]] = None
                       ) -> AggregatedRanking:
    """Mean of week-aggregated signed scores over students.

    ``week_scores`` (per student, ``W x F``) optionally supplies the
    |importance|-by-week profile used for period labels. ``methods`` and
    ``courses`` tag each input so mixed batches can be rejected.
    """
    if len(per_feature_scores) < 1:
        raise ValidationError("aggregate_students needs at least one explanation")
    for tags, expected in ((methods, method), (courses, course_id)):
        if tags is not None and any(t != expected for t in tags):
            raise ValidationError("explanations mix methods or courses")
    S = np.vstack([np.asarray(s, dtype=float) for s in per_feature_scores])
    if S.shape[1] != len(features):
        raise ValidationError("score length does not match feature universe")
    profile = None
    if week_scores is not None:
        profile = np.mean([np.abs(np.asarray(ws, dtype=float)) for ws in week_scores], axis=0)
    return AggregatedRanking(course_id, method, tuple(features), S.mean(axis=0), profile, len(S))


# ---------------------------------------------------------------------------
# matrices

@dataclass
class ComparisonMatrix:
    labels: list[tuple[str, str]]
    values: np.ndarray
    metric: str

    def label_strings(self) -> list[str]:
        return [f"{m}:{c}" for m, c in self.labels]

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = self.label_strings()
        buf.write(self.metric + "," + ",".join(names) + "\n")
        for name, row in zip(names, self.values):
            buf.write(name + "," + ",".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonMatrix":
        lines = [ln.split(",") for ln in text.strip().splitlines()]
        metric, names = lines[0][0], lines[0][1:]
        labels = [tuple(n.split(":", 1)) for n in names]
        vals = np.array([[float(v) for v in ln[1:]] for ln in lines[1:]])
        return cls(labels, vals, metric)


METRICS = {"jaccard": jaccard_topk, "spearman": spearman_rho}


def cross_matrix(rankings: Sequence[AggregatedRanking], metric: str = "jaccard", k: int = 10,
                 method_order: Optional[Sequence[str]] = None) -> ComparisonMatrix:
    """All pairwise agreement values, rows ordered method-major then course."""
    if len(rankings) < 2:
        raise ValidationError("cross_matrix needs at least two rankings")
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}")
    universe = rankings[0].features
    if any(r.features != universe for r in rankings):
        raise ValidationError("rankings use different feature universes")
    methods = list(method_order) if method_order else sorted({r.method for r in rankings})
    order = sorted(rankings, key=lambda r: (methods.index(r.method) if r.method in methods else len(methods),
                                            r.method, r.course_id))
    n = len(order)
    M = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = order[i].scores, order[j].scores
            if metric == "jaccard":
                val = jaccard_topk(a, b, min(k, len(universe)))
            else:
                val = spearman_rho(a, b)
            M[i, j] = M[j, i] = val
    return ComparisonMatrix([(r.method, r.course_id) for r in order], M, metric)


def within_vs_cross_method(matrix: ComparisonMatrix) -> tuple[float, float]:
    """Mean off-diagonal agreement within the same method and across methods."""
    within, across = [], []
    n = len(matrix.labels)
    for i in range(n):
        for j in range(i + 1, n):
            (within if matrix.labels[i][0] == matrix.labels[j][0] else across).append(matrix.values[i, j])
    return (float(np.mean(within)) if within else float("nan"),
            float(np.mean(across)) if across else float("nan"))


# ---------------------------------------------------------------------------
# course-pair insights

def dominant_period(profile) -> str:
    """Name the third of the course holding >= 50% of |importance| mass, else 'throughout'."""
    prof = np.abs(np.asarray(profile, dtype=float))
    total = prof.sum()
    if total <= 0:
        return THROUGHOUT
    for name, chunk in zip(PERIODS, np.array_split(np.arange(prof.size), 3)):
        if chunk.size and prof[chunk].sum() >= 0.5 * total:
            return name
    return THROUGHOUT


@dataclass
class PairInsight:
    course_a: str
    course_b: str
    method: str
    positive: list[dict] = field(default_factory=list)
    negative: list[dict] = field(default_factory=list)
    zero_change: bool = False

    def to_dict(self) -> dict:
        return {
            "pair": [self.course_a, self.course_b],
            "method": self.method,
            "positive": self.positive,
            "negative": self.negative,
            "zero_change": self.zero_change,
        }


def pair_insights(first: AggregatedRanking, second: AggregatedRanking, n_top: int = 2) -> PairInsight:
    """Features whose aggregated importance rises / falls most from ``first`` to ``second``.

    Rising features take their period from the second course's week profile,
    falling features from the first course's.
    """
    if first.features != second.features:
        raise ValidationError("course pair uses different feature universes")
    F = len(first.features)
    if F < 2 * n_top:
        raise ValidationError(f"pair insights need at least {2 * n_top} features")
    delta = second.scores - first.scores
    up = np.argsort(-delta, kind="stable")[:n_top]
    down = np.argsort(delta, kind="stable")[:n_top]

    def entry(f, ranking):
        period = dominant_period(ranking.week_profile[:, f]) if ranking.week_profile is not None else THROUGHOUT
        return {"feature": first.features[f], "delta": float(delta[f]), "period": period}

    return PairInsight(
        first.course_id,
        second.course_id,
        first.method if first.method == second.method else f"{first.method}/{second.method}",
        positive=[entry(int(f), second) for f in up],
        negative=[entry(int(f), first) for f in down],
        zero_change=bool(np.all(delta == 0)),
    )


def write_insight(path: Path, insight: PairInsight) -> None:
    Path(path).write_text(json.dumps(insight.to_dict(), indent=2) + "\n", encoding="utf-8")
