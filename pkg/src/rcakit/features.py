"""Binary feature matrices from anomaly reports and log patterns, plus TF-IDF selection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NEGATIVE, POSITIVE, Dataset, PlatformTopology, Sample

logger = logging.getLogger(__name__)


def kpi_id(metric_id: str) -> str:
    return f"kpi:{metric_id}"


def log_id(pattern_id) -> str:
    return f"log:{pattern_id}"


@dataclass(frozen=True)
class Window:
    start: int
    end: int
    polarity: str = POSITIVE
    label: tuple | None = None

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("window start must precede its end")
        if self.label is not None:
            object.__setattr__(self, "label", tuple(self.label))


@dataclass(eq=False)
class FeatureMatrix:
    feature_ids: tuple
    bits: np.ndarray  # (rows, features) uint8
    windows: tuple
    selection_scores: dict | None = None
    warnings: tuple = ()
    platform_id: str = ""

    def __post_init__(self):
        self.feature_ids = tuple(self.feature_ids)
        self.windows = tuple(self.windows)
        self.bits = np.asarray(self.bits, dtype=np.uint8).reshape(len(self.windows), len(self.feature_ids))
        if self.bits.size and self.bits.max() > 1:
            raise ValueError("feature bits must be 0 or 1")

    def __len__(self):
        return len(self.windows)

    @property
    def labels(self) -> list:
        return [w.label for w in self.windows]

    def column(self, feature_id: str) -> np.ndarray:
        return self.bits[:, self.feature_ids.index(feature_id)]

    def restrict(self, feature_ids) -> "FeatureMatrix":
        """Keep ``feature_ids`` (in the given order); unknown ids become zero columns."""
        pos = {f: i for i, f in enumerate(self.feature_ids)}
        out = np.zeros((len(self.windows), len(feature_ids)), dtype=np.uint8)
        for j, f in enumerate(feature_ids):
            i = pos.get(f)
            if i is not None:
                out[:, j] = self.bits[:, i]
        scores = None
        if self.selection_scores is not None:
            scores = {f: self.selection_scores[f] for f in feature_ids if f in self.selection_scores}
        return FeatureMatrix(tuple(feature_ids), out, self.windows, scores, self.warnings, self.platform_id)

    def rows(self, index) -> "FeatureMatrix":
        index = list(index)
        return FeatureMatrix(self.feature_ids, self.bits[index], [self.windows[i] for i in index], self.selection_scores, self.warnings, self.platform_id)

    # conversions --------------------------------------------------------
    def to_dataset(self) -> Dataset:
        samples = []
        for w, row in zip(self.windows, self.bits):
            feats = {f: int(b) for f, b in zip(self.feature_ids, row)}
            samples.append(Sample(w.start, w.end, feats, w.polarity, w.label))
        return Dataset(self.platform_id, self.feature_ids, samples, self.warnings)

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "FeatureMatrix":
        fids = tuple(ds.feature_ids)
        bits = np.zeros((len(ds.samples), len(fids)), dtype=np.uint8)
        pos = {f: i for i, f in enumerate(fids)}
        windows = []
        for r, s in enumerate(ds.samples):
            for f, b in s.features.items():
                bits[r, pos[f]] = b
            windows.append(Window(s.window_start, s.window_end, s.polarity, s.label))
        return cls(fids, bits, windows, None, ds.warnings, ds.platform_id)

    def to_dict(self) -> dict:
        return {
            "platform_id": self.platform_id,
            "feature_ids": list(self.feature_ids),
            "rows": ["".join(str(int(b)) for b in row) for row in self.bits],
            "windows": [[w.start, w.end, w.polarity, list(w.label) if w.label else None] for w in self.windows],
            "selection_scores": self.selection_scores,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMatrix":
        fids = tuple(d["feature_ids"])
        bits = np.array([[int(c) for c in row] for row in d["rows"]], dtype=np.uint8).reshape(len(d["rows"]), len(fids))
        windows = [Window(int(s), int(e), p, tuple(lab) if lab else None) for s, e, p, lab in d["windows"]]
        return cls(fids, bits, windows, d.get("selection_scores"), tuple(d.get("warnings", ())), d.get("platform_id", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_matrix(
    reports,
    occurrences,
    windows,
    topo: PlatformTopology,
    metric_ids=None,
    pattern_ids=None,
) -> FeatureMatrix:
    """One row per window.

    ``reports``: AnomalyReport objects; a metric's bit is 1 when a report with
    findings overlaps the window. ``occurrences``: (timestamp, pattern_id)
    pairs; a pattern's bit is 1 when it occurs inside [start, end).
    Feature ids default to every metric and pattern the topology owns.
    """
    if metric_ids is None:
        metric_ids = sorted(topo.metric_owner)
    if pattern_ids is None:
        pattern_ids = sorted(topo.pattern_owner, key=_pattern_sort_key)
    for m in metric_ids:
        if m not in topo.metric_owner:
            raise ValueError(f"metric {m!r} has no owner module in the topology")
    for p in pattern_ids:
        if str(p) not in topo.pattern_owner:
            raise ValueError(f"pattern {p!r} has no owner module in the topology")
    fids = tuple([kpi_id(m) for m in metric_ids] + [log_id(p) for p in pattern_ids])
    windows = list(windows)
    starts = np.array([w.start for w in windows], dtype=np.int64)
    ends = np.array([w.end for w in windows], dtype=np.int64)
    bits = np.zeros((len(windows), len(fids)), dtype=np.uint8)
    covered = np.zeros(len(windows), dtype=bool)
    col = {f: i for i, f in enumerate(fids)}

    for r in reports:
        lo, hi = r.window
        hit = (starts < hi) & (ends > lo)
        if not r.too_short:
            covered |= hit
        if r.findings:
            j = col.get(kpi_id(r.metric_id))
            if j is not None:
                bits[hit, j] = 1

    order = np.argsort(starts, kind="stable")
    sorted_starts = starts[order]
    for ts, pid in occurrences:
        # windows are allowed to overlap, so test every candidate that starts before ts
        k = int(np.searchsorted(sorted_starts, ts, side="right"))
        cand = order[:k]
        inside = cand[ends[cand] > ts]
        if len(inside) == 0:
            continue
        covered[inside] = True
        j = col.get(log_id(pid))
        if j is not None:
            bits[inside, j] = 1

    warnings = []
    n_empty = int((~covered).sum())
    if n_empty:
        warnings.append(f"{n_empty} window(s) had no telemetry and were left all-zero")
        logger.warning(warnings[-1])
    return FeatureMatrix(fids, bits, windows, None, tuple(warnings), topo.platform_id)


def _pattern_sort_key(p):
    p = str(p)
    return (0, int(p), "") if p.isdigit() else (1, 0, p)


def tfidf_scores(m: FeatureMatrix) -> dict:
    """max over cause types of TF(f, type) * ln(T / (1 + #types where f appears))."""
    groups: dict[str, list[int]] = {}
    for i, w in enumerate(m.windows):
        if w.polarity == NEGATIVE and w.label is not None:
            groups.setdefault(w.label[1], []).append(i)
    types = sorted(groups)
    t = len(types)
    if t == 0:
        return {f: 0.0 for f in m.feature_ids}
    tf = np.array([m.bits[groups[ty]].mean(axis=0) for ty in types])  # (T, F)
    df = (tf > 0).sum(axis=0)
    idf = np.log(t / (1.0 + df))
    score = (tf * idf[None, :]).max(axis=0)
    return {f: float(s) for f, s in zip(m.feature_ids, score)}


def tfidf_select(m: FeatureMatrix, k: int = 200) -> FeatureMatrix:
    """Keep the k best-scoring features in their original order."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k >= len(m.feature_ids):
        return m
    scores = tfidf_scores(m)
    ranked = sorted(range(len(m.feature_ids)), key=lambda i: (-scores[m.feature_ids[i]], i))
    keep = sorted(ranked[:k])
    out = m.restrict([m.feature_ids[i] for i in keep])
    out.selection_scores = {m.feature_ids[i]: scores[m.feature_ids[i]] for i in keep}
    return out


def node_count(m: FeatureMatrix, topo: PlatformTopology) -> int:
    """Network size for a matrix: feature, module and type nodes."""
    return len(m.feature_ids) + len(topo.modules) + len(topo.cause_types)
