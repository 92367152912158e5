"""Resumable pipeline stages: generate, extract, train, explain, compare, report.

Every stage reads its inputs from, and writes its outputs to, the output
directory, and records file digests in ``manifest.json``. Wall-clock timings
go to ``timings.json`` so the manifest stays byte-stable across reruns.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .clickstream import (
    SyntheticConfig,
    generate_synthetic_course,
    read_events,
    read_labels,
    read_schedule,
    validate_course,
    write_events,
    write_labels,
    write_schedule,
)
from .compare import (
    AggregatedRanking,
    aggregate_students,
    cross_matrix,
    pair_insights,
    within_vs_cross_method,
)
from .errors import MissingInputError, ValidationError
from .explainers import (
    CONFOUNDER,
    LIME,
    SHAP,
    Background,
    ConfounderConfig,
    LimeConfig,
    ShapConfig,
    aggregate_weeks,
    explain_students,
    read_explanations,
    sample_students,
    write_explanations,
)
from .features import (
    MinMaxStats,
    extract_features,
    fit_minmax,
    impute_nan,
    normalize_features,
    read_feature_matrix,
    write_feature_matrix,
)
from .model import SplitSpec, TrainConfig, balanced_accuracy, load_predictor, save_predictor, stratified_split, train
from .presets import course_config, preset_courses
from .report import matrix_heatmap_svg, pair_heatmap_svg, summary_markdown

log = logging.getLogger(__name__)

STAGES = ("generate", "extract", "train", "explain", "compare", "report")
DEFAULT_METHODS = (LIME, SHAP, CONFOUNDER)


@dataclass
class CourseInput:
    course_id: str
    synthetic: Optional[SyntheticConfig] = None
    path: Optional[str] = None


@dataclass
class PipelineConfig:
    courses: list[CourseInput]
    out: str = "runs/default"
    seed: int = 0
    split: SplitSpec = SplitSpec()
    train: TrainConfig = TrainConfig()
    methods: tuple[str, ...] = DEFAULT_METHODS
    lime: LimeConfig = LimeConfig()
    shap: ShapConfig = ShapConfig()
    confounder: ConfounderConfig = ConfounderConfig()
    n_per_class: int = 50
    metrics: tuple[str, ...] = ("jaccard", "spearman")
    top_k: int = 10
    pairs: list[tuple[str, str]] = field(default_factory=list)
    workers: int = 1

    def canonical(self) -> dict:
        """Config as plain data, without the output directory."""
        doc = asdict(self)
        doc.pop("out")
        doc.pop("workers")
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _course_seed(seed: int, course_id: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(course_id.encode())) % (2 ** 63)


def _course_from_doc(doc: dict, seed: int) -> list[CourseInput]:
    if "preset" in doc:
        return [CourseInput(name, course_config(name, _course_seed(seed, name))) for name in preset_courses(doc["preset"])]
    if "path" in doc:
        cid = doc.get("course_id") or Path(doc["path"]).name
        return [CourseInput(cid, path=str(doc["path"]))]
    if "synthetic" in doc:
        cid = doc.get("course_id", "synthetic")
        params = dict(doc["synthetic"])
        params.setdefault("seed", _course_seed(seed, cid))
        return [CourseInput(cid, _build(SyntheticConfig, f"courses.{cid}.synthetic", {"course_id": cid, **params}))]
    raise ValidationError(f"course entry needs 'preset', 'path' or 'synthetic': {doc}")


def _build(cls, section: str, params: dict):
    try:
        return cls(**params)
    except TypeError as exc:
        raise ValidationError(f"bad '{section}' config: {exc}") from None


_TOP_LEVEL_KEYS = {"seed", "preset", "courses", "out", "workers", "split", "train", "explain", "compare", "pairs"}


def load_config(doc: Optional[dict] = None, *, out: Optional[str] = None, seed: Optional[int] = None,
                preset: Optional[str] = None, workers: Optional[int] = None) -> PipelineConfig:
    """Build a PipelineConfig from a config document; explicit arguments override its keys."""
    doc = dict(doc or {})
    unknown = sorted(set(doc) - _TOP_LEVEL_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    if seed is not None:
        doc["seed"] = seed
    if preset is None and "preset" in doc:
        if "courses" in doc:
            raise ValidationError("config sets both 'preset' and 'courses'")
        preset = doc["preset"]
    if preset is not None:
        doc["courses"] = [{"preset": preset}]
    if out is not None:
        doc["out"] = out
    if workers is not None:
        doc["workers"] = workers
    s = int(doc.get("seed", 0))
    course_docs = doc.get("courses") or [{"preset": "demo"}]
    courses = [c for d in course_docs for c in _course_from_doc(d, s)]
    ids = [c.course_id for c in courses]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate course ids: {ids}")

    tr = dict(doc.get("train", {}))
    if "hidden_sizes" in tr:
        tr["hidden_sizes"] = tuple(tr["hidden_sizes"])
    tr.setdefault("seed", s)
    ex = doc.get("explain", {})
    lime = _build(LimeConfig, "explain.lime", {"seed": s, **ex.get("lime", {})})
    shap = _build(ShapConfig, "explain.shap", {"seed": s, **ex.get("shap", {})})
    conf = _build(ConfounderConfig, "explain.confounder", ex.get("confounder", {}))
    cmp_doc = doc.get("compare", {})
    pairs = [tuple(p) for p in doc.get("pairs", [])]
    if not pairs:
        pairs = [(ids[i], ids[i + 1]) for i in range(0, len(ids) - 1, 2)]
    for a, b in pairs:
        if a not in ids or b not in ids:
            raise ValidationError(f"pair ({a}, {b}) references an unknown course")
    cfg = PipelineConfig(
        courses=courses,
        out=str(doc.get("out", "runs/default")),
        seed=s,
        split=_build(SplitSpec, "split", {"seed": s, **doc.get("split", {})}),
        train=_build(TrainConfig, "train", tr),
        methods=tuple(ex.get("methods", DEFAULT_METHODS)),
        lime=lime,
        shap=shap,
        confounder=conf,
        n_per_class=int(ex.get("n_per_class", 50)),
        metrics=tuple(cmp_doc.get("metrics", ("jaccard", "spearman"))),
        top_k=int(cmp_doc.get("k", 10)),
        pairs=pairs,
        workers=int(doc.get("workers", 1)),
    )
    cfg.train.validate()
    cfg.lime.validate()
    return cfg


# ---------------------------------------------------------------------------
# manifest

def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Output directory plus manifest bookkeeping for one config."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def require(self, path: Path) -> Path:
        if not path.exists():
            raise MissingInputError(f"missing input: {path}")
        return path

    def _rel(self, p: Path) -> str:
        return Path(p).relative_to(self.out).as_posix()

    def record(self, stage: str, inputs: list[Path], outputs: list[Path], seconds: float) -> None:
        mpath = self.path("manifest.json")
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
        manifest.update({"tool": "coursexai", "version": __version__, "config_hash": self.config.config_hash()})
        stages = manifest.setdefault("stages", {})
        stages[stage] = {
            "inputs": {self._rel(p): file_digest(p) for p in sorted(set(inputs))},
            "outputs": {self._rel(p): file_digest(p) for p in sorted(set(outputs))},
        }
        manifest["stages"] = {k: stages[k] for k in STAGES if k in stages}
        mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tpath = self.path("timings.json")
        timings = json.loads(tpath.read_text()) if tpath.exists() else {}
        timings[stage] = round(seconds, 3)
        tpath.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def course_dir(self, cid: str) -> Path:
        return self.path("courses", cid)


def _mkdir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# stages

def run_generate(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    inputs, outputs = [], []
    for course in run.config.courses:
        d = _mkdir(run.course_dir(course.course_id))
        if course.path is not None:
            src = Path(course.path)
            for name in ("schedule.json", "events.jsonl", "labels.csv"):
                if not (src / name).exists():
                    raise MissingInputError(f"missing input: {src / name}")
            schedule = read_schedule(src / "schedule.json")
            events = read_events(src / "events.jsonl", schedule)
            labels = read_labels(src / "labels.csv")
        else:
            schedule, events, labels = generate_synthetic_course(course.synthetic)
        report = validate_course(schedule, events, labels)
        if not report.ok:
            raise ValidationError(f"course {course.course_id}: " + "; ".join(report.findings()[:5]))
        write_schedule(d / "schedule.json", schedule)
        write_events(d / "events.jsonl", events)
        write_labels(d / "labels.csv", labels)
        outputs += [d / "schedule.json", d / "events.jsonl", d / "labels.csv"]
        log.info("generate %s: %d events, %d students", course.course_id, len(events), len(labels))
    run.record("generate", inputs, outputs, time.perf_counter() - t0)
    return outputs


def run_extract(run: Run, gap_threshold: float = 1800, full_watch_fraction: float = 0.9) -> list[Path]:
    t0 = time.perf_counter()
    inputs, outputs = [], []
    for course in run.config.courses:
        d = run.course_dir(course.course_id)
        paths = [run.require(d / n) for n in ("schedule.json", "events.jsonl", "labels.csv")]
        inputs += paths
        schedule = read_schedule(paths[0])
        events = read_events(paths[1], schedule)
        labels = read_labels(paths[2])
        matrix = impute_nan(extract_features(events, schedule, labels, gap_threshold, full_watch_fraction))
        fd = _mkdir(run.path("features", course.course_id))
        sidecar = write_feature_matrix(fd / "features.csv", matrix)
        outputs += [fd / "features.csv", sidecar]
    run.record("extract", inputs, outputs, time.perf_counter() - t0)
    return outputs


def _load_features(run: Run, cid: str):
    path = run.require(run.path("features", cid, "features.csv"))
    run.require(path.with_suffix(".json"))
    return read_feature_matrix(path), [path, path.with_suffix(".json")]


def run_train(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    cfg = run.config
    inputs, outputs = [], []
    for course in cfg.courses:
        cid = course.course_id
        matrix, used = _load_features(run, cid)
        inputs += used
        train_ids, test_ids = stratified_split(matrix.students, matrix.labels, cfg.split)
        stats = fit_minmax(matrix, train_ids)
        scaled = normalize_features(matrix, stats)
        predictor = train(scaled, train_ids, cfg.train)
        test = scaled.subset(test_ids)
        bac = balanced_accuracy(predictor.predict(test.values), test.labels, cfg.train.threshold)
        md = _mkdir(run.path("models", cid))
        save_predictor(md / "model.json", predictor, extra={"scaling": stats.to_dict()})
        _write_json(md / "split.json", {"train": train_ids, "test": test_ids, "seed": cfg.split.seed,
                                        "train_fraction": cfg.split.train_fraction})
        _write_json(md / "metrics.json", {"bac": bac, "threshold": cfg.train.threshold, "n_train": len(train_ids),
                                          "n_test": len(test_ids), "seed": cfg.train.seed})
        outputs += [md / "model.json", md / "split.json", md / "metrics.json"]
        log.info("train %s: balanced accuracy %.3f", cid, bac)
    run.record("train", inputs, outputs, time.perf_counter() - t0)
    return outputs


def _method_config(cfg: PipelineConfig, method: str):
    return {LIME: cfg.lime, SHAP: cfg.shap, CONFOUNDER: cfg.confounder}.get(method)


def run_explain(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    cfg = run.config
    inputs, outputs = [], []
    for course in cfg.courses:
        cid = course.course_id
        matrix, used = _load_features(run, cid)
        md = run.path("models", cid)
        inputs += used + [run.require(md / "model.json"), run.require(md / "split.json")]
        predictor, extra = load_predictor(md / "model.json")
        scaled = normalize_features(matrix, MinMaxStats.from_dict(extra["scaling"]))
        split = json.loads((md / "split.json").read_text())
        background = Background.from_matrix(scaled.subset(split["train"]).values)
        probs = predictor.predict(scaled.values)
        picked = sample_students(probs, scaled.labels, scaled.students, cfg.n_per_class)
        ed = _mkdir(run.path("explanations", cid))
        _write_json(ed / "sample.json", {"students": picked,
                                         "probabilities": {s: float(probs[i]) for i, s in enumerate(scaled.students)
                                                           if s in set(picked)}})
        outputs.append(ed / "sample.json")
        sub = scaled.subset(picked)
        instances = [v.ravel() for v in sub.values]
        for method in cfg.methods:
            mcfg = _method_config(cfg, method)
            exps = explain_students(method, predictor, instances, picked, background, mcfg, cfg.workers)
            seed = getattr(mcfg, "seed", cfg.seed)
            sidecar = write_explanations(ed / f"{method}.csv", exps, matrix.weeks, matrix.features, method, seed, mcfg)
            outputs += [ed / f"{method}.csv", sidecar]
            log.info("explain %s/%s: %d students", cid, method, len(exps))
    run.record("explain", inputs, outputs, time.perf_counter() - t0)
    return outputs


def _rankings(run: Run, inputs: list[Path]) -> tuple[list[AggregatedRanking], dict]:
    cfg = run.config
    rankings, panels = [], {}
    for course in cfg.courses:
        cid = course.course_id
        for method in cfg.methods:
            path = run.require(run.path("explanations", cid, f"{method}.csv"))
            inputs += [path, run.require(path.with_suffix(".json"))]
            exps, meta = read_explanations(path)
            W, feats = meta["weeks"], meta["features"]
            per_feature = [aggregate_weeks(e, W, len(feats)) for e in exps]
            week_scores = [e.scores.reshape(W, len(feats)) for e in exps]
            rankings.append(aggregate_students(per_feature, cid, method, feats, week_scores))
            panels[(method, cid)] = np.mean(week_scores, axis=0)
    return rankings, panels


def run_compare(run: Run) -> list[Path]:
    t0 = time.perf_counter()
    cfg = run.config
    inputs: list[Path] = []
    outputs = []
    rankings, _ = _rankings(run, inputs)
    cd = _mkdir(run.path("compare"))
    outputs.append(_write_json(cd / "rankings.json", [r.to_dict() for r in rankings]))
    if len(rankings) >= 2:
        for metric in cfg.metrics:
            matrix = cross_matrix(rankings, metric, cfg.top_k, method_order=cfg.methods)
            p = cd / f"{metric}.csv"
            p.write_text(matrix.to_csv(), encoding="utf-8")
            outputs.append(p)
    by_key = {(r.method, r.course_id): r for r in rankings}
    for a, b in cfg.pairs:
        insights = [pair_insights(by_key[(m, a)], by_key[(m, b)]).to_dict() for m in cfg.methods]
        outputs.append(_write_json(cd / f"insights_{a}__{b}.json", insights))
    run.record("compare", inputs, outputs, time.perf_counter() - t0)
    return outputs


def run_report(run: Run) -> list[Path]:
    from .compare import ComparisonMatrix, PairInsight

    t0 = time.perf_counter()
    cfg = run.config
    inputs: list[Path] = []
    outputs = []
    rankings, panels = _rankings(run, inputs)
    if not rankings:
        raise ValidationError("no explanations to report")
    rd = _mkdir(run.path("report"))
    features = list(rankings[0].features)
    by_key = {(r.method, r.course_id): r for r in rankings}
    pairs = cfg.pairs or [(c.course_id,) for c in cfg.courses]
    for pair in pairs:
        pair = tuple(pair)
        sub = [by_key[(m, c)] for m in cfg.methods for c in pair]
        svg, _rows = pair_heatmap_svg({k: v for k, v in panels.items() if k[1] in pair}, sub, features,
                                      cfg.methods, pair)
        p = rd / f"heatmap_{'__'.join(pair)}.svg"
        p.write_text(svg, encoding="utf-8")
        outputs.append(p)
    agreement = {}
    for metric in cfg.metrics:
        src = run.path("compare", f"{metric}.csv")
        if not src.exists():
            continue
        inputs.append(src)
        matrix = ComparisonMatrix.from_csv(src.read_text())
        agreement[metric] = within_vs_cross_method(matrix)
        p = rd / f"{metric}.svg"
        p.write_text(matrix_heatmap_svg(matrix), encoding="utf-8")
        outputs.append(p)
    insights = []
    for a, b in cfg.pairs:
        src = run.require(run.path("compare", f"insights_{a}__{b}.json"))
        inputs.append(src)
        for doc in json.loads(src.read_text()):
            insights.append(PairInsight(doc["pair"][0], doc["pair"][1], doc["method"], doc["positive"],
                                        doc["negative"], doc["zero_change"]))
    metrics = {}
    for course in cfg.courses:
        src = run.require(run.path("models", course.course_id, "metrics.json"))
        inputs.append(src)
        metrics[course.course_id] = json.loads(src.read_text())
    p = rd / "summary.md"
    p.write_text(summary_markdown(metrics, agreement, insights), encoding="utf-8")
    outputs.append(p)
    run.record("report", inputs, outputs, time.perf_counter() - t0)
    return outputs


STAGE_FUNCS = {
    "generate": run_generate,
    "extract": run_extract,
    "train": run_train,
    "explain": run_explain,
    "compare": run_compare,
    "report": run_report,
}


def run_pipeline(config: PipelineConfig, stages=STAGES) -> Run:
    run = Run(config)
    for stage in stages:
        STAGE_FUNCS[stage](run)
    return run
