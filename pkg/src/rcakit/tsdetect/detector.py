"""Per-metric anomaly detection: period, decomposition, then the four routed tests."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..data import TimeSeries
from .decompose import DecompositionResult, decompose
from .period import detect_period
from .stattests import esd, test_long_trend, test_mean_change, test_variance_change

SPIKE_DIP = "SpikeDip"
VARIANCE_CHANGE = "VarianceChange"
MEAN_CHANGE = "MeanChange"
LONG_TREND = "LongTrend"
KINDS = (SPIKE_DIP, VARIANCE_CHANGE, MEAN_CHANGE, LONG_TREND)

# which decomposition component feeds each test
ROUTING = {
    SPIKE_DIP: "remainder",
    VARIANCE_CHANGE: "remainder",
    MEAN_CHANGE: "trend",
    LONG_TREND: "trend",
}


@dataclass
class DetectionConfig:
    alpha_spike: float = 0.05
    alpha_variance: float = 0.05
    alpha_mean: float = 0.05
    alpha_trend: float = 0.05
    min_length: int = 20
    max_period: int = 48
    acf_threshold: float = 0.5
    max_anomalies: int = 10
    lam: float = 20.0
    cycles: int = 2
    lookback: int | None = None  # seconds before the window; None means one window length
    # "trend+remainder" feeds the deseasonalised series to the trend-routed tests;
    # "trend" feeds the bare trend component
    trend_input: str = "trend+remainder"

    def __post_init__(self):
        for name in ("alpha_spike", "alpha_variance", "alpha_mean", "alpha_trend"):
            a = getattr(self, name)
            if not 0 < a < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {a}")
        if self.min_length < 10:
            raise ValueError("min_length must be at least 10")
        if self.max_period < 2:
            raise ValueError("max_period must be at least 2")
        if self.max_anomalies < 1:
            raise ValueError("max_anomalies must be at least 1")
        if self.trend_input not in ("trend", "trend+remainder"):
            raise ValueError(f"unknown trend_input {self.trend_input!r}")

    def with_alpha(self, alpha: float) -> "DetectionConfig":
        d = asdict(self)
        d.update(alpha_spike=alpha, alpha_variance=alpha, alpha_mean=alpha, alpha_trend=alpha)
        return DetectionConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown detection config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "DetectionConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class AnomalyReport:
    metric_id: str
    window: tuple[int, int]
    findings: frozenset = frozenset()
    statistics: dict = field(default_factory=dict)
    spike_times: tuple = ()
    too_short: bool = False

    def to_dict(self) -> dict:
        return {
            "metric_id": self.metric_id,
            "window": list(self.window),
            "findings": sorted(self.findings),
            "statistics": {k: list(v) for k, v in sorted(self.statistics.items())},
            "spike_times": list(self.spike_times),
            "too_short": self.too_short,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyReport":
        return cls(
            metric_id=d["metric_id"],
            window=tuple(d["window"]),
            findings=frozenset(d["findings"]),
            statistics={k: (float(v[0]), float(v[1]), bool(v[2])) for k, v in d["statistics"].items()},
            spike_times=tuple(int(t) for t in d.get("spike_times", ())),
            too_short=bool(d.get("too_short", False)),
        )


def run_tests(dec: DecompositionResult, lo: int, split: int, hi: int, cfg: DetectionConfig):
    """Route the four tests over index range [lo, hi) with the change point at ``split``.

    Returns (findings, statistics, spike indices in absolute positions).
    """
    rem = dec.remainder[lo:hi]
    if cfg.trend_input == "trend":
        tr = dec.trend[lo:hi]
    else:
        tr = dec.trend[lo:hi] + dec.remainder[lo:hi]
    s = split - lo
    findings, stats = set(), {}

    flagged, summary = esd(rem, cfg.alpha_spike, cfg.max_anomalies)
    # only spikes inside the inspected window count; the lookback is context
    spikes = [lo + i for i in flagged if i >= s]
    stats[SPIKE_DIP] = (summary.statistic, summary.threshold, bool(spikes))
    if spikes:
        findings.add(SPIKE_DIP)

    for name, res in (
        (VARIANCE_CHANGE, test_variance_change(rem, s, cfg.alpha_variance)),
        (MEAN_CHANGE, test_mean_change(tr, s, cfg.alpha_mean)),
        (LONG_TREND, test_long_trend(tr, cfg.alpha_trend)),
    ):
        stats[name] = res.as_tuple()
        if res.decision:
            findings.add(name)
    return frozenset(findings), stats, spikes


def _decompose_series(values: np.ndarray, cfg: DetectionConfig) -> DecompositionResult:
    period = detect_period(values, cfg.max_period, cfg.acf_threshold)
    if period > len(values) // 2:
        period = 0
    return decompose(values, period, lam=cfg.lam, cycles=cfg.cycles)


def detect_anomalies(s: TimeSeries, cfg: DetectionConfig | None = None, window: tuple[int, int] | None = None) -> AnomalyReport:
    """Detect anomalies in ``s``.

    Without ``window`` the whole series is inspected with the change point at its
    midpoint. With ``window=(start, end)`` the series is cut to the window plus a
    lookback of equal length (or ``cfg.lookback`` seconds) and the change point is
    the window start.
    """
    cfg = cfg or DetectionConfig()
    ts, vals = s.timestamps, s.values
    if window is None:
        lo, hi = 0, len(ts)
        split = len(ts) // 2
        win = (int(ts[0]), int(ts[-1]) + 1)
    else:
        start, end = window
        back = cfg.lookback if cfg.lookback is not None else end - start
        lo = int(np.searchsorted(ts, start - back))
        split = int(np.searchsorted(ts, start))
        hi = int(np.searchsorted(ts, end))
        win = (int(start), int(end))
    n = hi - lo
    if n < cfg.min_length or split - lo < 5 or hi - split < 5:
        return AnomalyReport(s.metric_id, win, too_short=True)
    dec = _decompose_series(vals[lo:hi], cfg)
    findings, stats, spikes = run_tests(dec, 0, split - lo, n, cfg)
    return AnomalyReport(s.metric_id, win, findings, stats, tuple(int(ts[lo + i]) for i in spikes))


class SeriesDetector:
    """Decomposes a long series once and tests many windows against it."""

    def __init__(self, s: TimeSeries, cfg: DetectionConfig | None = None):
        self.series = s
        self.cfg = cfg or DetectionConfig()
        self.too_short = len(s) < self.cfg.min_length
        self.dec = None if self.too_short else _decompose_series(s.values, self.cfg)

    def report(self, window: tuple[int, int], cfg: DetectionConfig | None = None) -> AnomalyReport:
        cfg = cfg or self.cfg
        s = self.series
        start, end = window
        win = (int(start), int(end))
        if self.too_short:
            return AnomalyReport(s.metric_id, win, too_short=True)
        ts = s.timestamps
        back = cfg.lookback if cfg.lookback is not None else end - start
        lo = int(np.searchsorted(ts, start - back))
        split = int(np.searchsorted(ts, start))
        hi = int(np.searchsorted(ts, end))
        if hi - lo < cfg.min_length or split - lo < 5 or hi - split < 5:
            return AnomalyReport(s.metric_id, win, too_short=True)
        findings, stats, spikes = run_tests(self.dec, lo, split, hi, cfg)
        return AnomalyReport(s.metric_id, win, findings, stats, tuple(int(ts[i]) for i in spikes))


def detect_windows(series: list[TimeSeries], windows: list[tuple[int, int]], cfg: DetectionConfig | None = None) -> list[AnomalyReport]:
    """Reports for every (series, window) pair, decomposing each series once."""
    out = []
    for s in series:
        det = SeriesDetector(s, cfg)
        out.extend(det.report(w) for w in windows)
    return out
