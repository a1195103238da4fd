"""End-to-end feature engineering and training, with the ablation stand-ins.

The stages communicate through plain objects that all serialise to JSON, so
the command line can run them one at a time. ``PipelineCache`` keeps the
expensive intermediate results (decompositions, template trees, embeddings)
so parameter sweeps reuse them.
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import NEGATIVE, DataError, PlatformTopology, load_logs, load_metrics, load_topology, split_indices
from .features import FeatureMatrix, Window, build_matrix, node_count, tfidf_select
from .khbn import KhbnModel, train
from .logcluster import EmbeddingTable, PatternSet, template_vector, train_embeddings
from .logtpl import EMPTY_TEMPLATE_ID, TemplateTree, preprocess
from .tsdetect import AnomalyReport, DetectionConfig, SeriesDetector

logger = logging.getLogger(__name__)

RAW_THRESHOLD = "RawThreshold"


@dataclass(frozen=True)
class Toggles:
    anomaly_detection: bool = True
    template_extraction: bool = True
    clustering: bool = True

    @property
    def name(self) -> str:
        off = [f.name for f in fields(self) if not getattr(self, f.name)]
        return "full" if not off else "no_" + "_".join(off)


ABLATIONS = (
    Toggles(),
    Toggles(anomaly_detection=False),
    Toggles(template_extraction=False),
    Toggles(clustering=False),
)


@dataclass
class PipelineConfig:
    """Every tunable of the workflow in one place."""

    detection: DetectionConfig = field(default_factory=DetectionConfig)
    max_leaves: int = 16
    dim: int = 32
    embed_window: int = 2
    epochs: int = 15
    distance_threshold: float = 0.3
    theta: float | None = None
    k: int = 200
    pc_alpha: float = 0.05
    max_condition_size: int = 2
    max_parents: int = 3
    confidence_floor: float = 0.2
    train_fraction: float = 0.6
    raw_z: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.detection, dict):
            self.detection = DetectionConfig.from_dict(self.detection)
        checks = [
            (self.max_leaves >= 1, "max_leaves must be at least 1"),
            (self.dim >= 2, "dim must be at least 2"),
            (self.embed_window >= 1, "embed_window must be at least 1"),
            (self.epochs >= 1, "epochs must be at least 1"),
            (0 < self.distance_threshold < 2, "distance_threshold must lie in (0, 2)"),
            (self.theta is None or -1 <= self.theta <= 1, "theta must lie in [-1, 1]"),
            (self.k >= 1, "k must be at least 1"),
            (0 < self.pc_alpha < 1, "pc_alpha must lie in (0, 1)"),
            (self.max_condition_size >= 0, "max_condition_size must be non-negative"),
            (self.max_parents >= 0, "max_parents must be non-negative"),
            (0 <= self.confidence_floor <= 1, "confidence_floor must lie in [0, 1]"),
            (0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)"),
            (self.raw_z > 0, "raw_z must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detection"] = self.detection.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed config ({exc})") from exc
        return cls.from_dict(doc)

    def with_alpha(self, alpha: float) -> "PipelineConfig":
        return replace(self, detection=self.detection.with_alpha(alpha))


# ---------------------------------------------------------------------------
# metrics


def kpi_reports(series, windows, cfg: DetectionConfig, detectors: dict | None = None) -> list[AnomalyReport]:
    """Detector reports for every (series, window); ``detectors`` caches decompositions."""
    spans = [(w.start, w.end) for w in windows]
    out = []
    for s in series:
        det = None if detectors is None else detectors.get(s.metric_id)
        if det is None:
            det = SeriesDetector(s, cfg)
            if detectors is not None:
                detectors[s.metric_id] = det
        out.extend(det.report(span, cfg) for span in spans)
    return out


def raw_threshold_reports(series, windows, z: float = 3.0, lookback: int | None = None) -> list[AnomalyReport]:
    """Ablation stand-in: flag a window when any raw value in it has |z| > ``z``.

    Mean and standard deviation come from the window plus its lookback, with
    no decomposition and no statistical test.
    """
    out = []
    for s in series:
        ts, vals = s.timestamps, s.values
        for w in windows:
            back = lookback if lookback is not None else w.end - w.start
            lo = int(np.searchsorted(ts, w.start - back))
            split = int(np.searchsorted(ts, w.start))
            hi = int(np.searchsorted(ts, w.end))
            seg = vals[lo:hi]
            findings = frozenset()
            if hi > split and len(seg) >= 2:
                sd = float(np.std(seg))
                if sd > 0 and np.any(np.abs(vals[split:hi] - np.mean(seg)) > z * sd):
                    findings = frozenset({RAW_THRESHOLD})
            out.append(AnomalyReport(s.metric_id, (w.start, w.end), findings))
    return out


# ---------------------------------------------------------------------------
# logs


@dataclass
class LogModel:
    """Fitted template tree, embeddings and patterns over one log corpus."""

    tree: TemplateTree
    embeddings: EmbeddingTable
    patterns: PatternSet
    record_templates: list  # template id per training record

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.to_dict(),
            "embeddings": self.embeddings.to_dict(),
            "patterns": self.patterns.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogModel":
        return cls(TemplateTree.from_dict(d["tree"]), EmbeddingTable.from_dict(d["embeddings"]), PatternSet.from_dict(d["patterns"]), [])

    def template_vectors(self) -> dict:
        return {tid: template_vector(t.tokens, self.embeddings) for tid, t in sorted(self.tree.templates.items())}

    def pattern_of(self, template_id: int) -> int:
        if template_id == EMPTY_TEMPLATE_ID:
            return 0
        pid = self.patterns.template_pattern.get(template_id)
        if pid is None:
            tpl = self.tree.templates.get(template_id)
            vec = template_vector(tpl.tokens, self.embeddings) if tpl else np.zeros(self.embeddings.dim)
            pid, _ = self.patterns.assign_template(template_id, vec)
        return pid


def fit_templates(messages, max_leaves: int) -> tuple[TemplateTree, list[int]]:
    tree = TemplateTree(max_leaves)
    ids = tree.fit(messages)
    tree.freeze()
    return tree, ids


def fit_embeddings(tree: TemplateTree, cfg: PipelineConfig) -> EmbeddingTable:
    corpus = [list(t.tokens) for _, t in sorted(tree.templates.items())]
    return train_embeddings(corpus, dim=cfg.dim, window=cfg.embed_window, epochs=cfg.epochs, seed=cfg.seed)


def fit_patterns(tree: TemplateTree, table: EmbeddingTable, cfg: PipelineConfig) -> PatternSet:
    vecs = {tid: template_vector(t.tokens, table) for tid, t in sorted(tree.templates.items())}
    return PatternSet.build(vecs, cfg.distance_threshold, cfg.theta)


def fit_logs(logs, cfg: PipelineConfig, cache: "PipelineCache | None" = None) -> LogModel:
    messages = [r.message for r in logs]
    cache = cache or PipelineCache()
    key = ("tree", cfg.max_leaves)
    if key not in cache.store:
        cache.store[key] = fit_templates(messages, cfg.max_leaves)
    tree, ids = cache.store[key]
    ekey = ("emb", cfg.max_leaves, cfg.dim, cfg.embed_window, cfg.epochs, cfg.seed)
    if ekey not in cache.store:
        cache.store[ekey] = fit_embeddings(tree, cfg)
    table = cache.store[ekey]
    pkey = ekey + ("pat", cfg.distance_threshold, cfg.theta)
    if pkey not in cache.store:
        cache.store[pkey] = fit_patterns(tree, table, cfg)
    pats = cache.store[pkey]
    return LogModel(tree, table, PatternSet.from_dict(pats.to_dict()), list(ids))


def _majority_owner(keys, modules) -> dict:
    votes: dict = {}
    for k, m in zip(keys, modules):
        if k:
            votes.setdefault(k, Counter())[m] += 1
    return {str(k): sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))[0][0] for k, c in votes.items()}


def log_occurrences(logs, model: LogModel | None, toggles: Toggles) -> tuple[list, dict]:
    """(timestamp, feature key) pairs plus key -> owning module (majority vote).

    The key is a pattern id (full pipeline), a template id (clustering off) or
    an id per distinct unmasked message (template extraction off).
    """
    if not toggles.template_extraction:
        index: dict = {}
        keys = []
        for r in logs:
            toks = tuple(preprocess(r.message, mask=False))
            keys.append(index.setdefault(toks, len(index) + 1) if toks else 0)
    else:
        if model is None:
            raise ValueError("a fitted log model is required")
        if len(model.record_templates) == len(logs):
            tids = model.record_templates
        else:
            tids = [model.tree.extract(r.message, incremental=False) for r in logs]
        if toggles.clustering:
            keys = [model.pattern_of(t) for t in tids]
        else:
            keys = list(tids)
    occ = [(r.timestamp, k) for r, k in zip(logs, keys) if k]
    return occ, _majority_owner(keys, [r.module_id for r in logs])


# ---------------------------------------------------------------------------
# assembly


@dataclass
class Corpus:
    """The four inputs of one platform, as written by the simulator."""

    series: list
    logs: list
    topology: PlatformTopology
    windows: list


def load_window_list(path) -> list:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [Window(int(d["start"]), int(d["end"]), d["polarity"], tuple(d["label"]) if d.get("label") else None) for d in doc]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed windows file ({exc})") from exc


def load_corpus(directory) -> Corpus:
    """metrics.jsonl, logs.txt, topology.json and windows.json from one directory."""
    d = Path(directory)
    missing = [n for n in ("metrics.jsonl", "logs.txt", "topology.json", "windows.json") if not (d / n).is_file()]
    if missing:
        raise DataError(f"{d}: missing {', '.join(missing)}")
    return Corpus(load_metrics(d / "metrics.jsonl"), load_logs(d / "logs.txt"), load_topology(d / "topology.json"), load_window_list(d / "windows.json"))


@dataclass
class PipelineCache:
    store: dict = field(default_factory=dict)
    detectors: dict = field(default_factory=dict)


def featurize(
    corpus,
    cfg: PipelineConfig,
    toggles: Toggles = Toggles(),
    cache: PipelineCache | None = None,
    log_model: LogModel | None = None,
    reports: list | None = None,
) -> tuple[FeatureMatrix, PlatformTopology]:
    """Feature matrix over every window of ``corpus`` plus the topology with pattern owners.

    ``reports`` short-circuits anomaly detection with precomputed reports.
    """
    cache = cache or PipelineCache()
    if reports is not None:
        pass
    elif toggles.anomaly_detection:
        rkey = ("reports", json.dumps(cfg.detection.to_dict(), sort_keys=True))
        if rkey not in cache.store:
            cache.store[rkey] = kpi_reports(corpus.series, corpus.windows, cfg.detection, cache.detectors)
        reports = cache.store[rkey]
    else:
        reports = raw_threshold_reports(corpus.series, corpus.windows, cfg.raw_z, cfg.detection.lookback)
    if toggles.template_extraction and log_model is None:
        log_model = fit_logs(corpus.logs, cfg, cache)
    occ, owner = log_occurrences(corpus.logs, log_model, toggles)
    topo = corpus.topology.with_pattern_owner(owner)
    m = build_matrix(reports, occ, corpus.windows, topo)
    return m, topo


def split_matrix(m: FeatureMatrix, train_fraction: float, seed: int) -> tuple[FeatureMatrix, FeatureMatrix]:
    tr, te, _ = split_indices([w.polarity for w in m.windows], [w.label for w in m.windows], train_fraction, seed)
    return m.rows(tr), m.rows(te)


def train_model(train_m: FeatureMatrix, topo: PlatformTopology, cfg: PipelineConfig) -> tuple[KhbnModel, FeatureMatrix]:
    """TF-IDF selection on the training rows, then structure, CPTs."""
    sel = tfidf_select(train_m, cfg.k)
    model = train(
        sel,
        topo,
        alpha=cfg.pc_alpha,
        max_condition_size=cfg.max_condition_size,
        max_parents=cfg.max_parents,
        confidence_floor=cfg.confidence_floor,
    )
    return model, sel


def predict(model: KhbnModel, test_m: FeatureMatrix, confidence_floor: float | None = None) -> list:
    """Diagnoses for every negative row of ``test_m`` (restricted to the model's features)."""
    neg = [i for i, w in enumerate(test_m.windows) if w.polarity == NEGATIVE]
    rows = test_m.rows(neg).restrict(model.feature_ids)
    return list(zip(rows.windows, model.infer_matrix(rows, confidence_floor)))


@dataclass
class RunResult:
    report: object  # eval.EvalReport
    nodes: int
    seconds: float
    model: KhbnModel | None = None
    diagnoses: list = field(default_factory=list)


def run(
    corpus,
    cfg: PipelineConfig,
    toggles: Toggles = Toggles(),
    cache: PipelineCache | None = None,
    log_model: LogModel | None = None,
) -> RunResult:
    """Featurize, split, select, train, infer and evaluate one platform."""
    from .eval import evaluate

    t0 = time.perf_counter()
    m, topo = featurize(corpus, cfg, toggles, cache, log_model)
    tr, te = split_matrix(m, cfg.train_fraction, cfg.seed)
    model, sel = train_model(tr, topo, cfg)
    diags = predict(model, te)
    if not diags:
        raise DataError("the test split has no negative samples")
    report = evaluate([(d.top_type, w.label[1]) for w, d in diags])
    return RunResult(report, node_count(sel, topo), time.perf_counter() - t0, model, diags)
