"""Telemetry and topology types, file loaders, and dataset assembly."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

POSITIVE = "positive"
NEGATIVE = "negative"

# Default failure window: 10 minutes.
DEFAULT_WINDOW_SECONDS = 600


class DataError(ValueError):
    """Raised when an input file or value violates the data contracts."""


@dataclass(frozen=True, eq=False)
class TimeSeries:
    metric_id: str
    module_id: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vs = np.asarray(self.values, dtype=float)
        if ts.ndim != 1 or vs.ndim != 1:
            raise DataError(f"{self.metric_id}: timestamps and values must be 1-d")
        if len(ts) == 0:
            raise DataError(f"{self.metric_id}: empty series")
        if len(ts) != len(vs):
            raise DataError(f"{self.metric_id}: {len(ts)} timestamps but {len(vs)} values")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise DataError(f"{self.metric_id}: timestamps must be strictly increasing")
        ts.flags.writeable = False
        vs.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vs)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.metric_id == other.metric_id
            and self.module_id == other.module_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    def slice_time(self, start: int, end: int) -> "TimeSeries":
        """Points with start <= ts < end."""
        lo = int(np.searchsorted(self.timestamps, start, side="left"))
        hi = int(np.searchsorted(self.timestamps, end, side="left"))
        return TimeSeries(self.metric_id, self.module_id, self.timestamps[lo:hi], self.values[lo:hi])


@dataclass(frozen=True)
class LogRecord:
    timestamp: int
    module_id: str
    message: str

    def __post_init__(self):
        if not self.message.strip():
            raise DataError("log message is empty")


@dataclass(frozen=True)
class PlatformTopology:
    """Modules, ownership of metrics and log patterns, cause types and dependencies."""

    platform_id: str
    modules: frozenset
    metric_owner: Mapping[str, str]
    cause_types: Mapping[str, str]
    module_dependencies: frozenset = frozenset()
    pattern_owner: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "modules", frozenset(self.modules))
        object.__setattr__(self, "metric_owner", dict(self.metric_owner))
        object.__setattr__(self, "cause_types", dict(self.cause_types))
        object.__setattr__(self, "pattern_owner", dict(self.pattern_owner))
        deps = frozenset(tuple(d) for d in self.module_dependencies)
        object.__setattr__(self, "module_dependencies", deps)
        for kind, mapping in (
            ("metric", self.metric_owner),
            ("cause type", self.cause_types),
            ("pattern", self.pattern_owner),
        ):
            for key, module in mapping.items():
                if module not in self.modules:
                    raise DataError(f"{kind} {key!r} references unknown module {module!r}")
        for src, dst in deps:
            if src not in self.modules or dst not in self.modules:
                raise DataError(f"dependency {src!r}->{dst!r} references an unknown module")
            if src == dst:
                raise DataError(f"module {src!r} depends on itself")

    def types_of(self, module_id: str) -> list[str]:
        return sorted(t for t, m in self.cause_types.items() if m == module_id)

    def owner_of_feature(self, feature_id: str) -> str:
        kind, _, key = feature_id.partition(":")
        if kind == "kpi":
            return self.metric_owner[key]
        if kind == "log":
            return self.pattern_owner[key]
        raise KeyError(feature_id)

    def with_pattern_owner(self, pattern_owner: Mapping[str, str]) -> "PlatformTopology":
        return PlatformTopology(
            self.platform_id,
            self.modules,
            self.metric_owner,
            self.cause_types,
            self.module_dependencies,
            pattern_owner,
        )

    def to_dict(self) -> dict:
        return {
            "platform_id": self.platform_id,
            "modules": sorted(self.modules),
            "metric_owner": dict(sorted(self.metric_owner.items())),
            "pattern_owner": dict(sorted(self.pattern_owner.items())),
            "cause_types": dict(sorted(self.cause_types.items())),
            "module_dependencies": sorted([list(d) for d in self.module_dependencies]),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PlatformTopology":
        try:
            return cls(
                platform_id=str(doc["platform_id"]),
                modules=frozenset(doc["modules"]),
                metric_owner=doc.get("metric_owner", {}),
                cause_types=doc["cause_types"],
                module_dependencies=frozenset(tuple(d) for d in doc.get("module_dependencies", [])),
                pattern_owner=doc.get("pattern_owner", {}),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed topology document: {exc}") from exc


@dataclass(frozen=True)
class Sample:
    window_start: int
    window_end: int
    features: Mapping[str, int]
    polarity: str = POSITIVE
    label: tuple[str, str] | None = None

    def __post_init__(self):
        if self.window_start >= self.window_end:
            raise DataError("window_start must precede window_end")
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise DataError(f"unknown polarity {self.polarity!r}")
        if any(v not in (0, 1) for v in self.features.values()):
            raise DataError("feature bits must be 0 or 1")
        if self.label is not None:
            object.__setattr__(self, "label", tuple(self.label))

    def to_dict(self) -> dict:
        return {
            "window": [self.window_start, self.window_end],
            "polarity": self.polarity,
            "label": list(self.label) if self.label else None,
            "features": dict(sorted(self.features.items())),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Sample":
        start, end = doc["window"]
        label = doc.get("label")
        return cls(int(start), int(end), dict(doc["features"]), doc["polarity"], tuple(label) if label else None)


@dataclass(frozen=True)
class Dataset:
    platform_id: str
    feature_ids: tuple
    samples: tuple
    warnings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        known = set(self.feature_ids)
        for s in self.samples:
            extra = set(s.features) - known
            if extra:
                raise DataError(f"sample features not in feature_ids: {sorted(extra)[:3]}")

    @property
    def negatives(self) -> list[Sample]:
        return [s for s in self.samples if s.polarity == NEGATIVE]

    def validate_labels(self, topo: PlatformTopology) -> None:
        for s in self.samples:
            if s.polarity == NEGATIVE and s.label is None:
                raise DataError("negative sample without a label")
            if s.label is not None:
                module, type_id = s.label
                if topo.cause_types.get(type_id) != module:
                    raise DataError(f"label {s.label} not in topology cause types")

    def to_dict(self) -> dict:
        return {
            "platform_id": self.platform_id,
            "feature_ids": list(self.feature_ids),
            "samples": [s.to_dict() for s in self.samples],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Dataset":
        try:
            return cls(
                doc["platform_id"],
                tuple(doc["feature_ids"]),
                tuple(Sample.from_dict(s) for s in doc["samples"]),
                tuple(doc.get("warnings", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed dataset document: {exc}") from exc


# ---------------------------------------------------------------------------
# File formats


def load_metrics(path) -> list[TimeSeries]:
    """Read JSON-lines metric points and group them into sorted series."""
    groups: dict[str, dict] = {}
    seen = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                metric_id = str(rec["metric_id"])
                module_id = str(rec["module_id"])
                ts = int(rec["ts"] if "ts" in rec else rec["timestamp"])
                value = float(rec["value"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: cannot parse metric record ({exc})") from exc
            seen += 1
            g = groups.setdefault(metric_id, {"module": module_id, "points": {}})
            if g["module"] != module_id:
                raise DataError(f"{path}:{lineno}: metric {metric_id!r} reported by two modules")
            if ts in g["points"]:
                raise DataError(f"{path}:{lineno}: duplicate timestamp {ts} for metric {metric_id!r}")
            g["points"][ts] = value
    if seen == 0:
        raise DataError(f"{path}: no metric records")
    out = []
    for metric_id in sorted(groups):
        g = groups[metric_id]
        ts = sorted(g["points"])
        out.append(TimeSeries(metric_id, g["module"], np.array(ts), np.array([g["points"][t] for t in ts])))
    return out


def write_metrics(series: Iterable[TimeSeries], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in series:
            for t, v in zip(s.timestamps.tolist(), s.values.tolist()):
                fh.write(json.dumps({"metric_id": s.metric_id, "module_id": s.module_id, "ts": t, "value": v}))
                fh.write("\n")


_LOG_LINE = re.compile(r"^(\S+)\s+(\S+)\s+(.*\S)\s*$")


def _parse_iso(stamp: str) -> int:
    if stamp.endswith("Z"):
        stamp = stamp[:-1] + "+00:00"
    dt = datetime.fromisoformat(stamp)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def load_logs(path) -> list[LogRecord]:
    """Read ``<ISO8601> <module_id> <message>`` lines, sorted by time (stable)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            m = _LOG_LINE.match(line)
            if not m:
                raise DataError(f"{path}:{lineno}: expected '<timestamp> <module> <message>'")
            try:
                ts = _parse_iso(m.group(1))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad timestamp {m.group(1)!r}") from exc
            records.append(LogRecord(ts, m.group(2), m.group(3)))
    records.sort(key=lambda r: r.timestamp)
    return records


def write_logs(records: Iterable[LogRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{format_iso(r.timestamp)} {r.module_id} {r.message}\n")


def load_topology(path) -> PlatformTopology:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed topology document ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: topology must be a JSON object")
    return PlatformTopology.from_dict(doc)


def save_topology(topo: PlatformTopology, path) -> None:
    Path(path).write_text(json.dumps(topo.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed dataset document ({exc})") from exc
    return Dataset.from_dict(doc)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(ds.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------


def split_indices(polarities, labels, train_fraction: float, seed: int) -> tuple[list[int], list[int], list[str]]:
    """Stratified split over row indices: positives all train, negatives split per cause type.

    Each type with at least two negatives keeps at least one on each side.
    Returns (train indices, test indices, warnings), both index lists sorted.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test, warnings = [], [], []
    by_type: dict[str, list[int]] = {}
    for i, (pol, lab) in enumerate(zip(polarities, labels)):
        if pol == POSITIVE:
            train.append(i)
        elif lab is None:
            raise DataError("negative sample without a label")
        else:
            by_type.setdefault(lab[1], []).append(i)
    for type_id in sorted(by_type):
        group = by_type[type_id]
        order = rng.permutation(len(group))
        n = len(group)
        if n < 2:
            warnings.append(f"type {type_id!r} has {n} negative sample(s); it cannot be both trained and tested")
            n_train = n
        else:
            n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
        train.extend(group[i] for i in order[:n_train])
        test.extend(group[i] for i in order[n_train:])
    for w in warnings:
        logger.warning(w)
    return sorted(train), sorted(test), warnings


def split_dataset(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split: positives all train, negatives split per cause type."""
    samples = list(d.samples)
    tr, te, warnings = split_indices([s.polarity for s in samples], [s.label for s in samples], train_fraction, seed)
    train = sorted((samples[i] for i in tr), key=lambda s: s.window_start)
    test = sorted((samples[i] for i in te), key=lambda s: s.window_start)
    return (
        Dataset(d.platform_id, d.feature_ids, train, warnings),
        Dataset(d.platform_id, d.feature_ids, test, warnings),
    )
