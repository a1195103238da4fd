import itertools
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rcakit.data import TimeSeries
from rcakit.tsdetect import (
    LONG_TREND,
    MEAN_CHANGE,
    ROUTING,
    SPIKE_DIP,
    VARIANCE_CHANGE,
    AnomalyReport,
    DetectionConfig,
    RobustWindow,
    SeriesDetector,
    decompose,
    detect_anomalies,
    detect_period,
    update_window,
)
from rcakit.tsdetect import test_long_trend as long_trend
from rcakit.tsdetect import test_mean_change as mean_change
from rcakit.tsdetect import test_spikes_dips as spikes_dips
from rcakit.tsdetect import test_variance_change as variance_change
from rcakit.tsdetect.stattests import MAD_VAR_EFFICIENCY, mann_kendall_s

# ---------------------------------------------------------------------------
# reference oracles, written as plainly as possible


def reference_esd(x, alpha, max_anomalies):
    """Rosner's generalized ESD with median centre and 1.4826*MAD scale."""
    vals = [float(v) for v in x]
    n = len(vals)
    idx = list(range(n))
    removed, devs = [], []
    for _ in range(max_anomalies):
        med = statistics.median(vals)
        scale = max(1.4826 * statistics.median([abs(v - med) for v in vals]), 1e-9)
        best = max(range(len(vals)), key=lambda k: (abs(vals[k] - med), -k))
        devs.append(abs(vals[best] - med) / scale)
        removed.append(idx[best])
        del vals[best], idx[best]
    count = 0
    for i in range(1, len(devs) + 1):
        m = n - i + 1
        t = stats.t.ppf(1 - alpha / (2 * m), m - 2)
        lam = (m - 1) * t / math.sqrt((m - 2 + t * t) * m)
        if devs[i - 1] > lam:
            count = i
    return sorted(removed[:count])


def exact_sum_attainable(y, t, s, r):
    """False when no floats on the grids of t, s and r can sum to y exactly.

    t + s is a multiple of max(ulp(t + s), min(ulp(t), ulp(s))); adding r keeps
    the sum on the coarser of that grid and ulp(r).
    """
    sp = lambda v: float(np.spacing(abs(v)))
    g = min(max(sp(t + s), min(sp(t), sp(s))), sp(r))
    return math.fmod(y, g) == 0


def assert_additive(y, dec):
    recon = dec.trend + dec.seasonal + dec.remainder
    for i in np.nonzero(recon != y)[0]:
        t, s, r = dec.trend[i], dec.seasonal[i], dec.remainder[i]
        assert not exact_sum_attainable(y[i], t, s, r), f"point {i} could be exact"
        assert abs(recon[i] - y[i]) <= max(np.spacing(abs(t)), np.spacing(abs(s)), np.spacing(abs(r)))


def brute_mk(x):
    n = len(x)
    s = 0
    for i, j in itertools.combinations(range(n), 2):
        s += (x[j] > x[i]) - (x[j] < x[i])
    ties = {}
    for v in x:
        ties[v] = ties.get(v, 0) + 1
    var = n * (n - 1) * (2 * n + 5)
    for t in ties.values():
        var -= t * (t - 1) * (2 * t + 5)
    var /= 18
    if var == 0 or s == 0:
        z = 0.0
    else:
        z = (s - 1) / math.sqrt(var) if s > 0 else (s + 1) / math.sqrt(var)
    return s, var, z


# ---------------------------------------------------------------------------
# spikes and dips


def test_esd_single_outlier():
    rng = np.random.default_rng(0)
    x = np.append(rng.normal(size=99), 50.0)
    assert spikes_dips(x, 0.05, 10) == [99]


def test_esd_zero_and_ranking():
    assert spikes_dips(np.zeros(30)) == []
    rng = np.random.default_rng(1)
    x = rng.normal(size=60)
    x[10], x[40] = 30.0, -45.0
    assert spikes_dips(x, 0.05, max_anomalies=1) == [40]
    five = spikes_dips(x, 0.05, max_anomalies=5)
    assert {10, 40} <= set(five)
    assert five == reference_esd(x, 0.05, 5)


def test_esd_preconditions():
    with pytest.raises(ValueError):
        spikes_dips(np.zeros(5))
    with pytest.raises(ValueError):
        spikes_dips(np.zeros(20), alpha=1.5)


@pytest.mark.parametrize("seed", range(20))
def test_esd_matches_reference(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(20, 120))
    x = rng.standard_t(df=4, size=n)
    k = int(rng.integers(0, 4))
    x[rng.choice(n, k, replace=False)] += rng.choice([-1, 1], k) * rng.uniform(4, 12, k)
    alpha = float(rng.choice([0.01, 0.05, 0.1]))
    assert spikes_dips(x, alpha, 8) == reference_esd(x, alpha, 8)


# ---------------------------------------------------------------------------
# variance and mean change


def test_variance_change_examples():
    rng = np.random.default_rng(2)
    a = rng.normal(0, 1, 50)
    b = rng.normal(0, 3, 50)
    assert variance_change(np.concatenate([a, b]), 50).decision
    same = variance_change(np.concatenate([a, a]), 50)
    assert same.statistic == pytest.approx(1.0) and not same.decision
    assert not variance_change(np.concatenate([a, a * 1.01]), 50).decision
    assert not variance_change(np.zeros(20), 10).decision
    with pytest.raises(ValueError):
        variance_change(np.zeros(20), 3)


def test_variance_change_oracle_p_value():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 1, 40), rng.normal(0, 2, 30)])
    res = variance_change(x, 40, 0.05)
    a, b = x[:40], x[40:]
    va = (1.4826 * np.median(np.abs(a - np.median(a)))) ** 2
    vb = (1.4826 * np.median(np.abs(b - np.median(b)))) ** 2
    hi, lo, nh, nl = (vb, va, 30, 40) if vb >= va else (va, vb, 40, 30)
    p = 2 * stats.f.sf(hi / lo, MAD_VAR_EFFICIENCY * (nh - 1), MAD_VAR_EFFICIENCY * (nl - 1))
    assert res.statistic == pytest.approx(hi / lo)
    assert res.p_value == pytest.approx(min(p, 1.0))


def test_variance_change_null_level():
    """The robust F holds roughly its nominal level on Gaussian null pairs."""
    rng = np.random.default_rng(4)
    rejects = sum(variance_change(rng.normal(size=60), 30).decision for _ in range(400))
    assert rejects / 400 < 0.1


def test_mean_change_examples():
    rng = np.random.default_rng(5)
    step = np.concatenate([np.zeros(30), np.full(30, 5.0)]) + rng.normal(0, 0.1, 60)
    assert mean_change(step, 30).decision
    assert not mean_change(np.ones(30), 15).decision
    small = np.concatenate([np.zeros(20), np.full(20, 0.01)]) + rng.normal(0, 1, 40)
    assert not mean_change(small, 20).decision


def test_mean_change_oracle_welch():
    rng = np.random.default_rng(6)
    x = np.concatenate([rng.normal(0, 1, 25), rng.normal(1, 2, 35)])
    res = mean_change(x, 25)
    a, b = x[:25], x[25:]
    sa = 1.4826 * np.median(np.abs(a - np.median(a)))
    sb = 1.4826 * np.median(np.abs(b - np.median(b)))
    va, vb = np.pi / 2 * sa**2 / 25, np.pi / 2 * sb**2 / 35
    t = (np.median(b) - np.median(a)) / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / 24 + vb**2 / 34)
    assert res.statistic == pytest.approx(t)
    assert res.p_value == pytest.approx(2 * stats.t.sf(abs(t), df))


# ---------------------------------------------------------------------------
# Mann-Kendall


def test_mann_kendall_examples():
    up = long_trend([1, 2, 3, 4, 5])
    assert mann_kendall_s([1, 2, 3, 4, 5]) == 10
    assert up.statistic == pytest.approx(9 / math.sqrt(50 / 3))
    assert round(up.statistic, 2) == 2.20 and up.decision
    down = long_trend([5, 4, 3, 2, 1])
    assert round(down.statistic, 2) == -2.20 and down.decision
    flat = long_trend([3, 3, 3, 3, 3])
    assert mann_kendall_s([3] * 5) == 0 and not flat.decision
    with pytest.raises(ValueError):
        long_trend([1, 2, 3])


@pytest.mark.parametrize("seed", range(100))
def test_mann_kendall_closed_form_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 13))
    x = rng.integers(0, 6, n).tolist()  # small alphabet forces ties
    s, var, z = brute_mk(x)
    assert mann_kendall_s(x) == s
    assert long_trend(x).statistic == pytest.approx(z, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=5, max_size=12))
def test_mann_kendall_property(x):
    s, _, z = brute_mk(x)
    assert mann_kendall_s(x) == s
    assert long_trend(x).statistic == pytest.approx(z, abs=1e-12)


# ---------------------------------------------------------------------------
# period and decomposition


def test_detect_period_examples():
    t = np.arange(240)
    assert detect_period(np.sin(2 * np.pi * t / 24), 48) == 24
    assert detect_period(np.full(100, 3.0), 48) == 0
    noise = np.random.default_rng(7).normal(size=300)
    assert detect_period(noise, 48, 0.5) == 0
    with pytest.raises(ValueError):
        detect_period([1, 2, 3], 2)


def test_detect_period_outlier_robustness():
    rng = np.random.default_rng(8)
    t = np.arange(240)
    x = np.sin(2 * np.pi * t / 24) + rng.normal(0, 0.1, 240)
    base = detect_period(x, 48)
    y = x.copy()
    hit = rng.choice(240, 24, replace=False)
    y[hit] *= 10
    assert abs(detect_period(y, 48) - base) <= 1


def test_decompose_linear_ramp():
    y = np.arange(100, dtype=float)
    dec = decompose(y, 0)
    assert np.all(dec.seasonal == 0)
    assert np.max(np.abs(dec.remainder)) < 1e-6
    assert np.array_equal(dec.trend + dec.seasonal + dec.remainder, y)


def test_decompose_square_wave():
    y = np.tile([1.0, 1.0, -1.0, -1.0], 25)
    dec = decompose(y, 4)
    assert np.ptp(dec.trend) < 1e-3
    assert np.allclose(dec.seasonal[:4], [1, 1, -1, -1], atol=1e-3)
    assert np.array_equal(dec.trend + dec.seasonal + dec.remainder, y)


def test_decompose_period_bounds():
    with pytest.raises(ValueError):
        decompose(np.zeros(10), 6)
    with pytest.raises(ValueError):
        decompose(np.zeros(10), 1)


@settings(max_examples=40, deadline=None)
@given(
    values=st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=8, max_size=60),
    period=st.integers(0, 6),
)
def test_decompose_additivity(values, period):
    y = np.asarray(values)
    if period == 1 or period > len(y) // 2:
        period = 0
    dec = decompose(y, period)
    assert len(dec.trend) == len(dec.seasonal) == len(dec.remainder) == len(y)
    assert_additive(y, dec)
    if period == 0:
        assert np.all(dec.seasonal == 0)


def test_shift_equivariance():
    rng = np.random.default_rng(9)
    y = np.sin(np.arange(120) * 2 * np.pi / 12) + rng.normal(0, 0.2, 120)
    y[70] += 5
    a = decompose(y, 12)
    b = decompose(y + 100.0, 12)
    assert np.allclose(b.trend, a.trend + 100.0, atol=1e-4)
    assert spikes_dips(a.remainder) == spikes_dips(b.remainder)
    assert variance_change(a.remainder, 60).decision == variance_change(b.remainder, 60).decision


# ---------------------------------------------------------------------------
# detector


def _seasonal_series(n=240, shift=0.0, seed=10):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    y = 10 + 3 * np.sin(2 * np.pi * t / 24) + rng.normal(0, 0.3, n)
    y[n // 2 :] += shift
    return TimeSeries("cpu", "host", t * 60, y)


def test_routing_table():
    assert ROUTING[SPIKE_DIP] == "remainder" and ROUTING[VARIANCE_CHANGE] == "remainder"
    assert ROUTING[MEAN_CHANGE] == "trend" and ROUTING[LONG_TREND] == "trend"


def test_detect_clean_and_shift():
    clean = detect_anomalies(_seasonal_series())
    assert clean.findings == frozenset()
    shifted = detect_anomalies(_seasonal_series(shift=3.0))
    assert MEAN_CHANGE in shifted.findings
    for f in shifted.findings:
        assert shifted.statistics[f][2] is True


def test_detect_too_short_and_windowed():
    short = TimeSeries("m", "h", np.arange(10), np.zeros(10))
    assert detect_anomalies(short).too_short
    s = _seasonal_series(shift=3.0)
    mid = int(s.timestamps[120])
    rep = detect_anomalies(s, window=(mid, mid + 60 * 60))
    assert rep.window == (mid, mid + 3600)
    assert MEAN_CHANGE in rep.findings
    det = SeriesDetector(s)
    assert det.report((mid, mid + 3600)).window == rep.window


def test_report_round_trip_and_config():
    rep = detect_anomalies(_seasonal_series(shift=3.0))
    assert AnomalyReport.from_dict(rep.to_dict()) == rep
    cfg = DetectionConfig()
    assert DetectionConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        DetectionConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        DetectionConfig(alpha_mean=0)
    assert cfg.with_alpha(0.01).alpha_trend == 0.01


# ---------------------------------------------------------------------------
# rolling window


def test_window_examples():
    w = RobustWindow(10, [1, 3, 7])
    update_window(w, 5)
    assert w.buffer == [1, 3, 5, 7] and w.median == 4
    one = RobustWindow(1)
    for v in (3.0, -2.0, 8.0):
        update_window(one, v)
        assert one.median == v and one.mad == 0
    with pytest.raises(ValueError):
        update_window(w, float("nan"))


def test_window_matches_batch_10k():
    rng = np.random.default_rng(11)
    values = rng.integers(-50, 50, 10_000).astype(float)
    w = RobustWindow(37)
    for i, v in enumerate(values):
        update_window(w, v)
        tail = values[max(0, i - 36) : i + 1]
        med = statistics.median(tail)
        assert w.median == med
        assert w.mad == statistics.median([abs(x - med) for x in tail])


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40), cap=st.integers(1, 12))
def test_window_property(values, cap):
    w = RobustWindow(cap)
    for i, v in enumerate(values):
        w.push(v)
        tail = values[max(0, i - cap + 1) : i + 1]
        assert len(w) <= cap
        assert w.buffer == sorted(tail)
        med = statistics.median(tail)
        assert w.median == med
        assert w.mad == statistics.median([abs(x - med) for x in tail])
