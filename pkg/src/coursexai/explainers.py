"""Instance-level attribution methods over the flattened week x feature space.

Every explainer sees the model only as a function from rows of flattened
``W*F`` vectors (week-major) to pass probabilities.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import comb

from .errors import NumericError, ValidationError

LIME = "LIME"
SHAP = "SHAP"
CONFOUNDER = "Confounder"
EXACT_SHAPLEY = "ExactShapley"
METHODS = (LIME, SHAP, CONFOUNDER, EXACT_SHAPLEY)

PredictFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Explanation:
    student_id: str
    method: str
    scores: np.ndarray
    normalized: np.ndarray
    signs: np.ndarray
    base_value: Optional[float] = None
    details: dict = field(default_factory=dict)

    @classmethod
    def from_raw(cls, student_id, method, raw, base_value=None, details=None) -> "Explanation":
        raw = np.asarray(raw, dtype=float)
        normalized, signs = normalize_scores(raw)
        return cls(student_id, method, raw, normalized, signs, base_value, details or {})


@dataclass(frozen=True)
class Background:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValidationError("background mean and std must be vectors of equal length")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))) or np.any(self.std < 0):
            raise ValidationError("background must be finite with non-negative std")

    @classmethod
    def from_matrix(cls, values: np.ndarray) -> "Background":
        """Per-dimension mean and std of a ``students x W x F`` tensor."""
        flat = np.asarray(values, dtype=float).reshape(len(values), -1)
        return cls(flat.mean(axis=0), flat.std(axis=0))

    @property
    def dims(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class LimeConfig:
    n_features: int = 10
    n_samples: int = 5000
    kernel_width: Optional[float] = None
    ridge: float = 1.0
    seed: int = 0

    def validate(self):
        if self.n_features < 1:
            raise ValidationError("LIME n_features must be >= 1")
        if self.n_samples < 10 * self.n_features:
            raise ValidationError("LIME n_samples must be >= 10 * n_features")


@dataclass(frozen=True)
class ShapConfig:
    n_coalitions: Union[int, str] = 2048
    seed: int = 0


@dataclass(frozen=True)
class ConfounderConfig:
    step: float = 0.1
    max_iters: int = 200
    threshold: float = 0.5


def student_seed(seed: int, student_id: str) -> np.random.SeedSequence:
    """Independent, order-free substream for one student."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(student_id.encode("utf-8"))])


def _as_fn(predictor) -> PredictFn:
    return predictor.predict_flat if hasattr(predictor, "predict_flat") else predictor


def _query(fn: PredictFn, X: np.ndarray) -> np.ndarray:
    out = np.asarray(fn(X), dtype=float).reshape(-1)
    if out.shape[0] != len(X) or not np.all(np.isfinite(out)):
        raise NumericError("predictor returned a malformed or non-finite output")
    return out


# ---------------------------------------------------------------------------
# normalization and aggregation

def normalize_scores(raw) -> tuple[np.ndarray, np.ndarray]:
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise NumericError("attribution scores must be finite")
    mags = np.abs(raw)
    top = mags.max() if mags.size else 0.0
    normalized = mags / top if top > 0 else np.zeros_like(mags)
    return normalized, np.sign(raw).astype(int)


def aggregate_weeks(explanation_or_scores, weeks: int, n_features: int) -> np.ndarray:
    """Mean over weeks of signed scores; returns one value per feature."""
    scores = getattr(explanation_or_scores, "scores", explanation_or_scores)
    scores = np.asarray(scores, dtype=float)
    if scores.size != weeks * n_features:
        raise ValidationError(f"expected {weeks * n_features} scores, got {scores.size}")
    return scores.reshape(weeks, n_features).mean(axis=0)


def sample_students(probabilities, labels, student_ids=None, n_per_class: int = 50) -> list:
    """Evenly spaced picks along each class ordered by predicted probability.

    Within a class of size N sorted ascending, picks ranks
    ``floor(i * (N - 1) / (k - 1))`` for ``i = 0..k-1`` with ``k = min(n_per_class, N)``.
    """
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=bool)
    ids = np.arange(len(p)) if student_ids is None else np.asarray(list(student_ids), dtype=object)
    if not (len(p) == len(y) == len(ids)):
        raise ValidationError("probabilities, labels and ids differ in length")
    picked = []
    for cls in (False, True):
        members = np.flatnonzero(y == cls)
        if len(members) == 0:
            raise ValidationError(f"class {'pass' if cls else 'fail'} is empty")
        ordered = members[np.argsort(p[members], kind="stable")]
        N = len(ordered)
        k = min(n_per_class, N)
        ranks = [0] if k == 1 else [(i * (N - 1)) // (k - 1) for i in range(k)]
        picked.extend(ids[ordered[ranks]].tolist())
    return picked


# ---------------------------------------------------------------------------
# LIME

def _weighted_ridge(Z, y, w, lam):
    sw = w.sum()
    zm = (w @ Z) / sw
    ym = (w @ y) / sw
    Zc = Z - zm
    yc = y - ym
    A = Zc.T @ (Zc * w[:, None]) + lam * np.eye(Z.shape[1])
    return np.linalg.solve(A, Zc.T @ (w * yc))


def lime_explain(predictor, instance, background: Background, config: LimeConfig = LimeConfig(),
                 student_id: str = "") -> Explanation:
    """Local weighted-ridge surrogate over Gaussian perturbations of the instance.

    Coefficients live in standardized units (one background std per dimension).
    """
    config.validate()
    fn = _as_fn(predictor)
    x = np.asarray(instance, dtype=float).ravel()
    D = x.size
    if D != background.dims:
        raise ValidationError(f"instance has {D} dims, background {background.dims}")
    active = np.flatnonzero(background.std > 0)
    rng = np.random.default_rng(student_seed(config.seed, student_id))
    Z = np.zeros((config.n_samples, D))
    Z[:, active] = rng.standard_normal((config.n_samples, active.size))
    X = x + Z * background.std
    width = config.kernel_width if config.kernel_width is not None else 0.75 * math.sqrt(D)
    w = np.exp(-np.sum(Z ** 2, axis=1) / width ** 2)
    if not w.sum() > 0:
        raise NumericError("all LIME sample weights are zero; kernel width too small")
    y = _query(fn, X)

    raw = np.zeros(D)
    if active.size:
        Za = Z[:, active]
        coef_all = _weighted_ridge(Za, y, w, config.ridge)
        k = min(config.n_features, active.size)
        chosen = np.sort(np.argsort(-np.abs(coef_all), kind="stable")[:k])
        coef = _weighted_ridge(Za[:, chosen], y, w, config.ridge)
        raw[active[chosen]] = coef
    return Explanation.from_raw(student_id, LIME, raw, details={"selected": np.flatnonzero(raw).tolist()})


# ---------------------------------------------------------------------------
# Shapley values

def _masked_inputs(masks: np.ndarray, x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return np.where(masks, x, ref)


def exact_shapley(predictor, instance, background: Background, student_id: str = "",
                  max_dims: int = 15) -> Explanation:
    """Shapley values by enumerating all 2^D coalitions.

    Absent dimensions take the background mean.
    """
    fn = _as_fn(predictor)
    x = np.asarray(instance, dtype=float).ravel()
    D = x.size
    if D > max_dims:
        raise ValidationError(f"exact Shapley enumeration limited to {max_dims} dims, got {D}")
    if D != background.dims:
        raise ValidationError(f"instance has {D} dims, background {background.dims}")
    codes = np.arange(1 << D)
    masks = ((codes[:, None] >> np.arange(D)) & 1).astype(bool)
    v = _query(fn, _masked_inputs(masks, x, background.mean))
    sizes = masks.sum(axis=1)
    fact = [math.factorial(i) for i in range(D + 1)]
    weight_by_size = np.array([fact[s] * fact[D - s - 1] / fact[D] if s < D else 0.0 for s in range(D + 1)])
    phi = np.zeros(D)
    for d in range(D):
        without = codes[~masks[:, d]]
        phi[d] = np.sum(weight_by_size[sizes[without]] * (v[without | (1 << d)] - v[without]))
    return Explanation.from_raw(student_id, EXACT_SHAPLEY, phi, base_value=float(v[0]),
                                details={"prediction": float(v[-1])})


def shapley_kernel_weight(D: int, size: int) -> float:
    return (D - 1) / (comb(D, size, exact=True) * size * (D - size))


def _coalition_design(D: int, n_coalitions, rng) -> tuple[np.ndarray, np.ndarray, bool]:
    """Coalition masks (excluding empty/full) and their kernel weights."""
    total = (1 << D) - 2
    exhaustive = n_coalitions == "exhaustive" or (isinstance(n_coalitions, (int, np.integer)) and n_coalitions >= total)
    if n_coalitions == "auto":
        n_coalitions = min(total, 2 * D + 2048)
        exhaustive = n_coalitions >= total
    if exhaustive:
        codes = np.arange(1, (1 << D) - 1)
        masks = ((codes[:, None] >> np.arange(D)) & 1).astype(bool)
        sizes = masks.sum(axis=1)
        weights = np.array([shapley_kernel_weight(D, int(s)) for s in sizes])
        return masks, weights, True
    if not isinstance(n_coalitions, (int, np.integer)) or n_coalitions < 2 * D + 2:
        raise ValidationError(f"n_coalitions must be >= 2D+2 = {2 * D + 2} or 'exhaustive'")

    n_sizes = math.ceil((D - 1) / 2)
    n_paired = (D - 1) // 2
    mass = np.array([(D - 1) / (s * (D - s)) for s in range(1, n_sizes + 1)])
    mass[:n_paired] *= 2
    mass /= mass.sum()

    rows: list[np.ndarray] = []
    wts: list[float] = []
    remaining = int(n_coalitions)
    left = mass.copy()
    n_full = 0
    for i, s in enumerate(range(1, n_sizes + 1)):
        paired = i < n_paired
        n_sub = comb(D, s, exact=True) * (2 if paired else 1)
        share = left[i] / left[i:].sum()
        if remaining * share / n_sub < 1.0 - 1e-8:
            break
        w_each = mass[i] / comb(D, s, exact=True) / (2 if paired else 1)
        for idx in combinations(range(D), s):
            m = np.zeros(D, dtype=bool)
            m[list(idx)] = True
            rows.append(m)
            wts.append(w_each)
            if paired:
                rows.append(~m)
                wts.append(w_each)
        remaining -= n_sub
        n_full += 1
    if n_full < n_sizes and remaining > 0:
        rest = mass[n_full:] / mass[n_full:].sum()
        rest_mass = mass[n_full:].sum()
        counts: dict[bytes, int] = {}
        order: list[np.ndarray] = []
        draws = 0
        while remaining > 0 and draws < 50 * n_coalitions:
            draws += 1
            i = n_full + int(rng.choice(len(rest), p=rest))
            s = i + 1
            m = np.zeros(D, dtype=bool)
            m[rng.choice(D, size=s, replace=False)] = True
            pair = [m, ~m] if i < n_paired else [m]
            for mm in pair:
                key = np.packbits(mm).tobytes()
                if key in counts:
                    counts[key] += 1
                else:
                    counts[key] = 1
                    order.append(mm)
                    remaining -= 1
        tot = sum(counts.values())
        for mm in order:
            rows.append(mm)
            wts.append(rest_mass * counts[np.packbits(mm).tobytes()] / tot)
    return np.array(rows), np.array(wts), False


def kernel_shap(predictor, instance, background: Background, n_coalitions: Union[int, str] = 2048,
                seed: int = 0, student_id: str = "") -> Explanation:
    """Shapley-kernel weighted least squares with the efficiency constraint enforced.

    ``n_coalitions`` may be an int, ``"exhaustive"`` or ``"auto"``. Small coalition
    sizes are enumerated completely while the budget allows; the rest are sampled
    in complementary pairs.
    """
    fn = _as_fn(predictor)
    x = np.asarray(instance, dtype=float).ravel()
    D = x.size
    if D < 1:
        raise ValidationError("kernel_shap needs at least one dimension")
    if D != background.dims:
        raise ValidationError(f"instance has {D} dims, background {background.dims}")
    ref = background.mean
    v0, fx = _query(fn, np.vstack([ref, x]))
    details: dict = {"prediction": float(fx)}
    if D == 1:
        return Explanation.from_raw(student_id, SHAP, [fx - v0], base_value=float(v0), details=details)

    rng = np.random.default_rng(student_seed(seed, student_id))
    masks, weights, exhaustive = _coalition_design(D, n_coalitions, rng)
    details["exhaustive"] = exhaustive
    details["n_coalitions"] = int(len(masks))
    vals = _query(fn, _masked_inputs(masks, x, ref))

    delta = fx - v0
    Z = masks.astype(float)
    y = vals - v0 - Z[:, -1] * delta
    Zr = Z[:, :-1] - Z[:, -1:]
    A = Zr.T @ (Zr * weights[:, None])
    b = Zr.T @ (weights * y)
    try:
        if np.linalg.cond(A) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        beta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        details["regularized"] = 1e-6
        beta = np.linalg.solve(A + 1e-6 * np.eye(D - 1), b)
    phi = np.append(beta, delta - beta.sum())
    return Explanation.from_raw(student_id, SHAP, phi, base_value=float(v0), details=details)


# ---------------------------------------------------------------------------
# counterfactual confounder

def counterfactual_confounder(predictor, instance, background: Background,
                              config: ConfounderConfig = ConfounderConfig(), student_id: str = "") -> Explanation:
    """Greedy counterfactual search whose importances are emitted with flipped signs.

    Each iteration moves the one coordinate (by at most ``step`` toward its
    background mean) that pushes the probability furthest toward the decision
    boundary. A dimension's counterfactual importance is its absolute total
    displacement signed by the local sensitivity (probability change times
    displacement). The emitted scores negate that importance on purpose.
    """
    fn = _as_fn(predictor)
    x0 = np.asarray(instance, dtype=float).ravel()
    D = x0.size
    if D != background.dims:
        raise ValidationError(f"instance has {D} dims, background {background.dims}")
    target = background.mean
    x = x0.copy()
    p = float(_query(fn, x[None])[0])
    passing = p >= config.threshold
    disp = np.zeros(D)
    dprob = np.zeros(D)
    iters = 0
    while iters < config.max_iters and (p >= config.threshold) == passing:
        remaining = target - x
        movable = np.flatnonzero(np.abs(remaining) > 1e-12)
        if movable.size == 0:
            break
        delta = np.sign(remaining[movable]) * np.minimum(config.step, np.abs(remaining[movable]))
        trial = np.repeat(x[None], movable.size, axis=0)
        trial[np.arange(movable.size), movable] += delta
        probs = _query(fn, trial)
        change = probs - p
        toward = -change if passing else change
        best = int(np.argmax(toward))
        if toward[best] <= 0:
            break
        d = movable[best]
        x[d] += delta[best]
        disp[d] += delta[best]
        dprob[d] += change[best]
        p = float(probs[best])
        iters += 1
    flipped = (p >= config.threshold) != passing
    importance = np.abs(disp) * np.sign(dprob * disp)
    details = {
        "flipped": bool(flipped),
        "iterations": iters,
        "final_probability": p,
        "counterfactual_importance": importance.tolist(),
    }
    return Explanation.from_raw(student_id, CONFOUNDER, -importance, details=details)


# ---------------------------------------------------------------------------
# batch driver

def explain_one(method: str, predictor, instance, background: Background, student_id: str,
                config=None) -> Explanation:
    if method == LIME:
        return lime_explain(predictor, instance, background, config or LimeConfig(), student_id)
    if method == SHAP:
        cfg = config or ShapConfig()
        return kernel_shap(predictor, instance, background, cfg.n_coalitions, cfg.seed, student_id)
    if method == CONFOUNDER:
        return counterfactual_confounder(predictor, instance, background, config or ConfounderConfig(), student_id)
    if method == EXACT_SHAPLEY:
        return exact_shapley(predictor, instance, background, student_id)
    raise ValidationError(f"unknown explanation method {method!r}")


def _explain_star(args):
    return explain_one(*args)


def explain_students(method: str, predictor, instances: Sequence[np.ndarray], student_ids: Sequence[str],
                     background: Background, config=None, workers: int = 1) -> list[Explanation]:
    """Explain many students; results do not depend on ``workers`` or order."""
    jobs = [(method, predictor, inst, background, sid, config) for inst, sid in zip(instances, student_ids)]
    if workers <= 1 or len(jobs) < 2:
        return [_explain_star(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_explain_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return repr(float(x))


def format_explanations_csv(explanations: Sequence[Explanation], weeks: int, features: Sequence[str]) -> str:
    buf = io.StringIO()
    buf.write("student_id,method,feature,week,raw,normalized,sign\n")
    F = len(features)
    for exp in explanations:
        for w in range(weeks):
            for f, name in enumerate(features):
                d = w * F + f
                buf.write(f"{exp.student_id},{exp.method},{name},{w},{_fmt(exp.scores[d])},"
                          f"{_fmt(exp.normalized[d])},{int(exp.signs[d])}\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_explanations(csv_path: Path, explanations: Sequence[Explanation], weeks: int,
                       features: Sequence[str], method: str, seed: int, config=None) -> Path:
    csv_path = Path(csv_path)
    csv_path.write_text(format_explanations_csv(explanations, weeks, features), encoding="utf-8")
    meta = {
        "method": method,
        "seed": seed,
        "weeks": weeks,
        "features": list(features),
        "config": _jsonable(asdict(config)) if config is not None else None,
        "students": [
            {"student_id": e.student_id, "base_value": e.base_value, "details": _jsonable(e.details)}
            for e in explanations
        ],
    }
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def read_explanations(csv_path: Path) -> tuple[list[Explanation], dict]:
    csv_path = Path(csv_path)
    meta = json.loads(csv_path.with_suffix(".json").read_text(encoding="utf-8"))
    weeks, features = meta["weeks"], meta["features"]
    F = len(features)
    f_idx = {f: i for i, f in enumerate(features)}
    raw: dict[str, np.ndarray] = {}
    with csv_path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vec = raw.setdefault(row["student_id"], np.zeros(weeks * F))
            vec[int(row["week"]) * F + f_idx[row["feature"]]] = float(row["raw"])
    out = []
    for rec in meta["students"]:
        sid = rec["student_id"]
        out.append(Explanation.from_raw(sid, meta["method"], raw[sid], rec["base_value"], rec["details"]))
    return out, meta
