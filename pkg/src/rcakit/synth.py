"""Deterministic fault-injection simulator for multi-source telemetry.

Time is laid out in slots of ``lookback + window`` points. The first part of a
slot is always normal; the second part is the sample window, which is either
normal (a positive sample) or carries exactly one injected root cause (a
negative sample). Every slot also carries background log chatter.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NEGATIVE, POSITIVE, LogRecord, PlatformTopology, TimeSeries, save_topology, write_logs, write_metrics
from .features import Window
from .tsdetect.detector import KINDS, LONG_TREND, MEAN_CHANGE, SPIKE_DIP, VARIANCE_CHANGE

SPIKE_SIGMA = 8.0
VARIANCE_FACTOR = 8.0  # noise sd multiplier; weaker inflation left some injections undetectable
SHIFT_SIGMA = 5.0
DRIFT_SIGMA_PER_PERIOD = 2.0
BURST = (10, 50)
EPOCH = 1_700_000_000


@dataclass(frozen=True)
class MetricSpec:
    metric_id: str
    module_id: str
    base: float
    amplitude: float
    period: int  # points; 0 = no seasonality
    noise: float
    phase: float = 0.0


@dataclass(frozen=True)
class LogFamily:
    """Messages sharing ``base`` words and differing in one synonym slot."""

    family_id: str
    module_id: str
    base: tuple
    variants: tuple
    variable: str = "int"  # int | ip | hex | path

    def message(self, variant: int, rng: random.Random) -> str:
        words = list(self.base[:2]) + [self.variants[variant]] + list(self.base[2:])
        return " ".join(words) + " " + _variable(self.variable, rng)


@dataclass(frozen=True)
class FaultSignature:
    type_id: str
    module_id: str
    metrics: tuple  # ((metric_id, kind), ...)
    log_family: str


@dataclass
class PlatformSpec:
    platform_id: str
    modules: tuple
    metrics: tuple
    families: dict  # family_id -> LogFamily
    signatures: tuple
    chatter: dict  # module_id -> tuple of family ids emitted in every slot
    sporadic: dict  # module_id -> tuple of family ids emitted occasionally
    dependencies: tuple = ()
    seed: int = 0
    step: int = 20
    window_points: int = 30
    lookback_points: int = 30
    sporadic_rate: float = 0.1
    variants_per_fault: tuple = (1, 2)

    def validate(self) -> None:
        mods = set(self.modules)
        mids = {m.metric_id for m in self.metrics}
        for m in self.metrics:
            if m.module_id not in mods:
                raise ValueError(f"metric {m.metric_id!r} references unknown module {m.module_id!r}")
        for fam in self.families.values():
            if fam.module_id not in mods:
                raise ValueError(f"log family {fam.family_id!r} references unknown module")
        seen = set()
        for sig in self.signatures:
            if sig.type_id in seen:
                raise ValueError(f"duplicate type {sig.type_id!r}")
            seen.add(sig.type_id)
            if sig.module_id not in mods:
                raise ValueError(f"type {sig.type_id!r} references unknown module")
            for metric_id, kind in sig.metrics:
                if metric_id not in mids:
                    raise ValueError(f"type {sig.type_id!r} references unknown metric {metric_id!r}")
                if kind not in KINDS:
                    raise ValueError(f"unknown anomaly kind {kind!r}")
            if sig.log_family not in self.families:
                raise ValueError(f"type {sig.type_id!r} references unknown log family")
        for a, b in self.dependencies:
            if a not in mods or b not in mods:
                raise ValueError("dependency references an unknown module")

    @property
    def slot_points(self) -> int:
        return self.lookback_points + self.window_points

    def topology(self) -> PlatformTopology:
        return PlatformTopology(
            self.platform_id,
            frozenset(self.modules),
            {m.metric_id: m.module_id for m in self.metrics},
            {s.type_id: s.module_id for s in self.signatures},
            frozenset(self.dependencies),
        )

    def without_types(self, type_ids) -> "PlatformSpec":
        drop = set(type_ids)
        out = PlatformSpec(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.signatures = tuple(s for s in self.signatures if s.type_id not in drop)
        return out


@dataclass
class GeneratedCorpus:
    spec: PlatformSpec
    series: list
    logs: list
    topology: PlatformTopology
    windows: list  # features.Window, labelled for negatives
    injections: list = field(default_factory=list)  # (window index, type_id, metric_id, kind)

    @property
    def negatives(self) -> list:
        return [w for w in self.windows if w.polarity == NEGATIVE]

    def write(self, out_dir) -> None:
        """metrics.jsonl, logs.txt, topology.json, windows.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(self.series, out / "metrics.jsonl")
        write_logs(self.logs, out / "logs.txt")
        save_topology(self.topology, out / "topology.json")
        write_windows(self.windows, out / "windows.json")


def write_windows(windows, path) -> None:
    doc = [{"start": w.start, "end": w.end, "polarity": w.polarity, "label": list(w.label) if w.label else None} for w in windows]
    Path(path).write_text(json.dumps(doc, indent=0) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# generation


def _variable(kind: str, rng: random.Random) -> str:
    if kind == "ip":
        return ".".join(str(rng.randrange(1, 255)) for _ in range(4))
    if kind == "hex":
        return "0x" + "".join(rng.choice("0123456789abcdef") for _ in range(10))
    if kind == "path":
        return "/data/" + "/".join(str(rng.randrange(100)) for _ in range(3))
    return str(rng.randrange(1, 100000))


def _slot_schedule(spec: PlatformSpec, n_normal: int, n_faults_per_type: int, rng: np.random.Generator) -> list:
    """Shuffled slot contents: None for normal, else a FaultSignature."""
    slots = [None] * n_normal
    for sig in spec.signatures:
        slots.extend([sig] * n_faults_per_type)
    order = rng.permutation(len(slots))
    return [slots[i] for i in order]


def _inject(values: np.ndarray, lo: int, hi: int, kind: str, m: MetricSpec, rng: np.random.Generator) -> None:
    n = hi - lo
    sign = 1.0 if rng.random() < 0.5 else -1.0
    sigma = m.noise
    if kind == SPIKE_DIP:
        k = int(rng.integers(1, 4))
        pos = lo + rng.choice(n, size=k, replace=False)
        values[pos] += sign * SPIKE_SIGMA * sigma
    elif kind == VARIANCE_CHANGE:
        extra = sigma * np.sqrt(VARIANCE_FACTOR**2 - 1.0)
        values[lo:hi] += rng.normal(0.0, extra, n)
    elif kind == MEAN_CHANGE:
        values[lo:hi] += sign * SHIFT_SIGMA * sigma
    elif kind == LONG_TREND:
        period = m.period if m.period else 24
        values[lo:hi] += sign * DRIFT_SIGMA_PER_PERIOD * sigma / period * np.arange(1, n + 1)
    else:
        raise ValueError(f"unknown anomaly kind {kind!r}")


def generate(spec: PlatformSpec, n_normal: int, n_faults_per_type: int) -> GeneratedCorpus:
    """Simulate one platform. Fully determined by ``spec`` (including its seed)."""
    if n_normal < 1 or n_faults_per_type < 1:
        raise ValueError("n_normal and n_faults_per_type must be at least 1")
    spec.validate()
    seed = int(hashlib.sha256(f"{spec.platform_id}:{spec.seed}".encode()).hexdigest()[:12], 16)
    rng = np.random.default_rng(seed)
    lrng = random.Random(seed)
    schedule = _slot_schedule(spec, n_normal, n_faults_per_type, rng)
    sp, lb, wp = spec.slot_points, spec.lookback_points, spec.window_points
    total = len(schedule) * sp
    idx = np.arange(total)
    ts = EPOCH + idx * spec.step
    by_metric = {m.metric_id: m for m in spec.metrics}

    values = {}
    for m in spec.metrics:
        seasonal = m.amplitude * np.sin(2 * np.pi * idx / m.period + m.phase) if m.period else 0.0
        values[m.metric_id] = m.base + seasonal + rng.normal(0.0, m.noise, total)

    logs: list[LogRecord] = []
    windows: list[Window] = []
    injections = []
    slot_seconds = sp * spec.step
    for s, sig in enumerate(schedule):
        slot_start = EPOCH + s * slot_seconds
        w_start = slot_start + lb * spec.step
        w_end = w_start + wp * spec.step
        # background chatter over the whole slot, sporadic messages now and then
        for mod in spec.modules:
            for fid in spec.chatter.get(mod, ()):
                fam = spec.families[fid]
                for _ in range(lrng.randint(1, 2)):
                    t = slot_start + lrng.randrange(slot_seconds)
                    logs.append(LogRecord(t, mod, fam.message(lrng.randrange(len(fam.variants)), lrng)))
            for fid in spec.sporadic.get(mod, ()):
                if lrng.random() < spec.sporadic_rate:
                    fam = spec.families[fid]
                    t = slot_start + lrng.randrange(slot_seconds)
                    logs.append(LogRecord(t, mod, fam.message(lrng.randrange(len(fam.variants)), lrng)))
        if sig is None:
            windows.append(Window(w_start, w_end, POSITIVE, None))
            continue
        windows.append(Window(w_start, w_end, NEGATIVE, (sig.module_id, sig.type_id)))
        lo = s * sp + lb
        for metric_id, kind in sig.metrics:
            _inject(values[metric_id], lo, lo + wp, kind, by_metric[metric_id], rng)
            injections.append((len(windows) - 1, sig.type_id, metric_id, kind))
        fam = spec.families[sig.log_family]
        k = lrng.randint(*spec.variants_per_fault)
        chosen = lrng.sample(range(len(fam.variants)), min(k, len(fam.variants)))
        for _ in range(lrng.randint(*BURST)):
            t = w_start + lrng.randrange(w_end - w_start)
            logs.append(LogRecord(t, sig.module_id, fam.message(lrng.choice(chosen), lrng)))

    series = [TimeSeries(m.metric_id, m.module_id, ts.copy(), np.round(values[m.metric_id], 6)) for m in spec.metrics]
    logs.sort(key=lambda r: r.timestamp)
    return GeneratedCorpus(spec, series, logs, spec.topology(), windows, injections)


# ---------------------------------------------------------------------------
# standard benchmark

_ONSETS = "b c d f g h j k l m n p r t v z br dr gl kr pl st tr".split()
_VOWELS = "a e i o u ai ou".split()
_CODAS = ["", "", "n", "r", "l", "k", "m", "x"]


def lexicon(name: str, size: int, taken: set) -> list:
    """``size`` pseudo-words derived from ``name``, avoiding words in ``taken``.

    Words never end in ``s`` so stemming leaves them intact up to a fixed point,
    and their stems are registered in ``taken`` so families never share tokens.
    """
    from .logtpl import stem

    rng = random.Random(hashlib.sha256(name.encode()).hexdigest())
    out = []
    while len(out) < size:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(rng.randint(2, 3))) + rng.choice(_CODAS)
        st = stem(w)
        if st in taken or len(st) < 4:
            continue
        taken.add(st)
        out.append(w)
    return out


def _family(fid: str, module: str, n_variants: int, variable: str, taken: set) -> LogFamily:
    words = lexicon(fid, 3 + n_variants, taken)
    return LogFamily(fid, module, tuple(words[:3]), tuple(words[3:]), variable)


# (module, type name, group) ; group "kpi" = own signature metric, "log" = own log family
_SHARED_TYPES = {
    "host": [
        ("cpu_over_limit", "kpi", "cpu", MEAN_CHANGE),
        ("oom", "kpi", "mem", SPIKE_DIP),
        ("io_hang", "kpi", "iowait", VARIANCE_CHANGE),
        ("disk_failure", "log", None, SPIKE_DIP),
        ("machine_breakdown", "log", None, MEAN_CHANGE),
    ],
    "network": [
        ("martnet_exception", "kpi", "retransmit", SPIKE_DIP),
        ("qos_exception", "kpi", "latency", LONG_TREND),
        ("lvs_exception", "log", None, MEAN_CHANGE),
    ],
}

_PLATFORM_TYPES = {
    "batch": {
        "resource_scheduler": [
            ("master_failover", "kpi", "pending", MEAN_CHANGE),
            ("apiserver_overload", "kpi", "qps", VARIANCE_CHANGE),
            ("worker_lost", "log", None, SPIKE_DIP),
            ("quota_exhausted", "log", None, LONG_TREND),
        ],
        "storage": [
            ("server_unavailable", "kpi", "availability", MEAN_CHANGE),
            ("master_queue_full", "kpi", "queue", LONG_TREND),
            ("write_slow", "kpi", "write_latency", VARIANCE_CHANGE),
            ("master_failover", "log", None, SPIKE_DIP),
            ("chunkserver_failover", "log", None, MEAN_CHANGE),
        ],
        "other": [
            ("tunnel", "kpi", "tunnel_lag", MEAN_CHANGE),
            ("frontend", "kpi", "frontend_errors", SPIKE_DIP),
            ("upstream", "log", None, VARIANCE_CHANGE),
        ],
    },
    "stream": {
        "resource_scheduler": [
            ("nm_decommissioned", "kpi", "lost_nodes", MEAN_CHANGE),
            ("rm_switch", "log", None, SPIKE_DIP),
            ("resource_preemption", "log", None, VARIANCE_CHANGE),
        ],
        "storage": [
            ("service_unavailable", "kpi", "availability", MEAN_CHANGE),
            ("usage_over_limit", "kpi", "usage", LONG_TREND),
            ("call_queue_full", "log", None, SPIKE_DIP),
        ],
        "other": [
            ("upstream_queue", "kpi", "consumer_lag", LONG_TREND),
            ("upstream_logs", "log", None, MEAN_CHANGE),
            ("checkpoint", "log", None, SPIKE_DIP),
        ],
    },
    "serving": {
        "resource_scheduler": [
            ("server_overload", "kpi", "load", VARIANCE_CHANGE),
            ("node_fail", "log", None, SPIKE_DIP),
            ("apiserver_overload", "log", None, MEAN_CHANGE),
        ],
        "storage": [
            ("server_unavailable", "kpi", "availability", MEAN_CHANGE),
            ("master_failover", "kpi", "master_switches", SPIKE_DIP),
            ("write_slow", "log", None, VARIANCE_CHANGE),
            ("chunkserver_failover", "log", None, MEAN_CHANGE),
        ],
        "other": [
            ("pop", "kpi", "pop_errors", SPIKE_DIP),
            ("dns", "log", None, MEAN_CHANGE),
            ("gateway", "log", None, LONG_TREND),
        ],
    },
}

BENCHMARK_SIZES = {"batch": (840, 10), "stream": (316, 4), "serving": (170, 2)}
MODULES = ("resource_scheduler", "storage", "host", "network", "other")
SHARED_MODULES = frozenset({"host", "network"})
_VARIABLES = ("int", "ip", "hex", "path")


def _metric(metric_id: str, module: str, key: str, seed: int) -> MetricSpec:
    """Level, scale, seasonality and phase derived from the metric id only."""
    r = random.Random(hashlib.sha256(f"{key}:{seed}".encode()).hexdigest())
    noise = round(r.uniform(0.5, 3.0), 3)
    seasonal = r.random() < 0.7
    return MetricSpec(
        metric_id,
        module,
        base=round(r.uniform(20, 100), 3),
        amplitude=round(8.0 * noise, 3) if seasonal else 0.0,
        period=24 if seasonal else 0,
        noise=noise,
        phase=round(r.uniform(0, 2 * np.pi), 4),
    )


def platform_spec(platform_id: str, seed: int = 0, n_variants: int = 12) -> PlatformSpec:
    """One of the benchmark platforms: ``batch``, ``stream`` or ``serving``."""
    if platform_id not in _PLATFORM_TYPES:
        raise ValueError(f"unknown benchmark platform {platform_id!r}")
    taken: set = set()
    metrics, families, signatures = [], {}, []
    chatter, sporadic = {}, {}
    # shared modules first, so their vocabularies are identical on every platform
    for mod in sorted(SHARED_MODULES) + [m for m in MODULES if m not in SHARED_MODULES]:
        shared = mod in SHARED_MODULES
        prefix = "" if shared else f"{platform_id}."
        types = _SHARED_TYPES[mod] if shared else _PLATFORM_TYPES[platform_id][mod]
        fam_key = lambda name: f"{prefix}{mod}.{name}"  # noqa: E731
        fault_fam = _family(fam_key("fault"), mod, n_variants, "int", taken)
        families[fault_fam.family_id] = fault_fam
        chatter[mod] = ()
        for i in range(2):
            fam = _family(fam_key(f"chatter{i}"), mod, 3, _VARIABLES[i], taken)
            families[fam.family_id] = fam
            chatter[mod] += (fam.family_id,)
        fam = _family(fam_key("sporadic"), mod, 4, "hex", taken)
        families[fam.family_id] = fam
        sporadic[mod] = (fam.family_id,)

        shared_metric = f"{prefix}{mod}.errors"
        if any(g == "log" for _, g, _, _ in types):
            metrics.append(_metric(shared_metric, mod, shared_metric, 0 if shared else seed))
        bg = f"{prefix}{mod}.heartbeat"
        metrics.append(_metric(bg, mod, bg, 0 if shared else seed))
        for i, (name, group, metric_name, kind) in enumerate(types):
            type_id = f"{prefix}{mod}.{name}"
            if group == "kpi":
                mid = f"{prefix}{mod}.{metric_name}"
                metrics.append(_metric(mid, mod, mid, 0 if shared else seed))
                signatures.append(FaultSignature(type_id, mod, ((mid, kind),), fault_fam.family_id))
            else:
                fam = _family(type_id, mod, n_variants, _VARIABLES[i % 4], taken)
                families[fam.family_id] = fam
                signatures.append(FaultSignature(type_id, mod, ((shared_metric, kind),), fam.family_id))
    metrics.sort(key=lambda m: m.metric_id)
    signatures.sort(key=lambda s: s.type_id)
    return PlatformSpec(
        platform_id,
        MODULES,
        tuple(metrics),
        families,
        tuple(signatures),
        chatter,
        sporadic,
        dependencies=(("host", "storage"), ("network", "resource_scheduler")),
        seed=seed,
    )


def standard_benchmark(seed: int = 0, scale: float = 1.0) -> dict:
    """Three platforms keyed by id, sized at about 1/5 of the production datasets.

    ``scale`` shrinks the normal-window counts (for quick tests); fault counts
    are kept.
    """
    out = {}
    for pid, (n_normal, n_faults) in BENCHMARK_SIZES.items():
        spec = platform_spec(pid, seed)
        out[pid] = generate(spec, max(1, int(round(n_normal * scale))), n_faults)
    return out


LARGEST = "batch"
SMALLEST = "serving"
