import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcakit.data import (
    NEGATIVE,
    POSITIVE,
    DataError,
    Dataset,
    LogRecord,
    PlatformTopology,
    Sample,
    TimeSeries,
    load_dataset,
    load_logs,
    load_metrics,
    load_topology,
    save_dataset,
    save_topology,
    split_dataset,
    write_logs,
    write_metrics,
)

TABLE2 = {
    "platform_id": "p",
    "modules": ["resource_scheduler", "storage", "host", "network", "other"],
    "metric_owner": {"cpu": "host", "disk": "storage"},
    "cause_types": {
        "rs.worker_lost": "resource_scheduler",
        "st.chunk_failover": "storage",
        "host.oom": "host",
        "host.cpu": "host",
        "net.qos": "network",
        "other.frontend": "other",
    },
    "module_dependencies": [["host", "storage"]],
}


def _write_lines(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def test_load_metrics_groups_and_sorts(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(
        p,
        [
            {"metric_id": "cpu", "module_id": "host", "ts": 60, "value": 2.0},
            {"metric_id": "cpu", "module_id": "host", "ts": 0, "value": 1.0},
            {"metric_id": "mem", "module_id": "host", "ts": 0, "value": 5.0},
        ],
    )
    series = load_metrics(p)
    assert [s.metric_id for s in series] == ["cpu", "mem"]
    assert series[0].timestamps.tolist() == [0, 60]
    assert series[0].values.tolist() == [1.0, 2.0]


def test_load_metrics_rejects_duplicates_and_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    _write_lines(p, [{"metric_id": "cpu", "module_id": "h", "ts": 0, "value": 1}, {"metric_id": "cpu", "module_id": "h", "ts": 0, "value": 2}])
    with pytest.raises(DataError, match="duplicate"):
        load_metrics(p)
    p.write_text('{"metric_id": "cpu", "module_id": "h", "ts": 0, "value": 1}\nnot json\n')
    with pytest.raises(DataError, match=":2:"):
        load_metrics(p)
    p.write_text("\n")
    with pytest.raises(DataError, match="no metric records"):
        load_metrics(p)


def test_timeseries_invariants():
    with pytest.raises(DataError):
        TimeSeries("m", "h", [0, 0], [1, 2])
    with pytest.raises(DataError):
        TimeSeries("m", "h", [0, 1], [1])
    with pytest.raises(DataError):
        TimeSeries("m", "h", [], [])
    s = TimeSeries("m", "h", [0, 10, 20], [1, 2, 3])
    assert s.slice_time(10, 20).values.tolist() == [2.0]


def test_log_record_rejects_blank():
    with pytest.raises(DataError):
        LogRecord(0, "h", "   ")


def test_logs_round_trip(tmp_path):
    recs = [LogRecord(1_700_000_100, "host", "disk full on /dev/sda"), LogRecord(1_700_000_000, "net", "link down")]
    p = tmp_path / "logs.txt"
    write_logs(recs, p)
    back = load_logs(p)
    assert [r.timestamp for r in back] == [1_700_000_000, 1_700_000_100]
    assert back[1].message == "disk full on /dev/sda"
    p.write_text("garbage\n")
    with pytest.raises(DataError):
        load_logs(p)


def test_topology_table2_valid(tmp_path):
    p = tmp_path / "topology.json"
    p.write_text(json.dumps(TABLE2))
    topo = load_topology(p)
    assert len(topo.modules) == 5
    assert topo.types_of("host") == ["host.cpu", "host.oom"]
    save_topology(topo, tmp_path / "t2.json")
    assert load_topology(tmp_path / "t2.json") == topo


def test_topology_errors(tmp_path):
    bad = dict(TABLE2, cause_types={"x": "ghost"})
    with pytest.raises(DataError, match="unknown module"):
        PlatformTopology.from_dict(bad)
    with pytest.raises(DataError, match="itself"):
        PlatformTopology.from_dict(dict(TABLE2, module_dependencies=[["host", "host"]]))
    p = tmp_path / "t.json"
    p.write_text("{")
    with pytest.raises(DataError):
        load_topology(p)
    # empty dependency set is valid
    assert PlatformTopology.from_dict(dict(TABLE2, module_dependencies=[])).module_dependencies == frozenset()


def _dataset(n_per_type=10, types=("a.x", "a.y"), n_pos=5):
    samples = []
    t = 0
    for _ in range(n_pos):
        samples.append(Sample(t, t + 10, {"f": 0}, POSITIVE))
        t += 10
    for ty in types:
        for _ in range(n_per_type):
            samples.append(Sample(t, t + 10, {"f": 1}, NEGATIVE, ("a", ty)))
            t += 10
    return Dataset("p", ("f",), samples)


def test_split_sixty_forty():
    tr, te = split_dataset(_dataset(10, ("a.x",)), 0.6, seed=1)
    assert len(tr.negatives) == 6 and len(te.negatives) == 4
    assert all(s.polarity == NEGATIVE for s in te.samples)
    tr2, te2 = split_dataset(_dataset(10, ("a.x",)), 0.6, seed=1)
    assert tr2 == tr and te2 == te


def test_split_no_negatives_and_singleton_warning():
    tr, te = split_dataset(_dataset(0, ()), 0.6, 0)
    assert len(tr.samples) == 5 and len(te.samples) == 0
    tr, te = split_dataset(_dataset(1, ("a.x",)), 0.6, 0)
    assert tr.warnings and "cannot be both" in tr.warnings[0]


@settings(max_examples=50, deadline=None)
@given(
    counts=st.lists(st.integers(0, 12), min_size=1, max_size=4),
    frac=st.floats(0.05, 0.95),
    seed=st.integers(0, 1000),
    n_pos=st.integers(0, 5),
)
def test_split_properties(counts, frac, seed, n_pos):
    samples = [Sample(i * 10, i * 10 + 5, {}, POSITIVE) for i in range(n_pos)]
    t = 10_000
    for k, c in enumerate(counts):
        for _ in range(c):
            samples.append(Sample(t, t + 5, {}, NEGATIVE, ("m", f"m.t{k}")))
            t += 10
    d = Dataset("p", (), samples)
    tr, te = split_dataset(d, frac, seed)
    assert all(s.polarity == NEGATIVE for s in te.samples)
    assert sum(s.polarity == POSITIVE for s in tr.samples) == n_pos
    assert len(tr.samples) + len(te.samples) == len(samples)
    for k, c in enumerate(counts):
        n_te = sum(1 for s in te.samples if s.label[1] == f"m.t{k}")
        if c >= 2:
            assert 1 <= n_te <= c - 1


@settings(max_examples=30, deadline=None)
@given(
    rows=st.lists(
        st.tuples(st.sampled_from([POSITIVE, NEGATIVE]), st.lists(st.integers(0, 1), min_size=3, max_size=3)),
        max_size=8,
    )
)
def test_dataset_round_trip(tmp_path_factory, rows):
    fids = ("kpi:a", "kpi:b", "log:1")
    samples = []
    for i, (pol, bits) in enumerate(rows):
        label = ("m", "m.t") if pol == NEGATIVE else None
        samples.append(Sample(i * 10, i * 10 + 5, dict(zip(fids, bits)), pol, label))
    d = Dataset("p", fids, samples)
    p = tmp_path_factory.mktemp("ds") / "dataset.json"
    save_dataset(d, p)
    assert load_dataset(p) == d


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20))
def test_metrics_round_trip(tmp_path_factory, values):
    s = TimeSeries("m", "h", np.arange(len(values)) * 20, values)
    p = tmp_path_factory.mktemp("m") / "m.jsonl"
    write_metrics([s], p)
    assert load_metrics(p) == [s]


def test_dataset_label_validation():
    topo = PlatformTopology.from_dict(TABLE2)
    d = Dataset("p", (), [Sample(0, 1, {}, NEGATIVE, ("host", "host.oom"))])
    d.validate_labels(topo)
    with pytest.raises(DataError):
        Dataset("p", (), [Sample(0, 1, {}, NEGATIVE, ("host", "nope"))]).validate_labels(topo)
    with pytest.raises(DataError):
        Dataset("p", ("a",), [Sample(0, 1, {"b": 1})])
