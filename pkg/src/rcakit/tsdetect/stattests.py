"""Robust statistical tests for the four anomaly kinds."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special, stats

MAD_SCALE = 1.4826
MAD_FLOOR = 1e-9
# asymptotic efficiencies under normality: a MAD-based variance carries about
# 37% of the information of the sample variance, and var(median) = (pi/2) var(mean)
MAD_VAR_EFFICIENCY = 0.3675
MEDIAN_VAR_FACTOR = np.pi / 2


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    threshold: float
    p_value: float
    decision: bool

    def as_tuple(self) -> tuple[float, float, bool]:
        return (self.statistic, self.threshold, self.decision)


def _median(x: np.ndarray) -> float:
    """np.median without the wrapper overhead (no NaN handling)."""
    n = len(x)
    k = n // 2
    if n % 2:
        return float(np.partition(x, k)[k])
    part = np.partition(x, (k - 1, k))
    return float((part[k - 1] + part[k]) / 2)


def mad(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return _median(np.abs(x - _median(x)))


def robust_scale(x: np.ndarray) -> float:
    """Consistent-for-normal MAD scale, floored so it never reaches zero."""
    return max(MAD_SCALE * mad(x), MAD_FLOOR)


@lru_cache(maxsize=4096)
def esd_critical(n: int, i: int, alpha: float) -> float:
    """Rosner's critical value for the i-th (1-based) removal in a sample of n."""
    m = n - i + 1
    p = 1 - alpha / (2 * m)
    t = stats.t.ppf(p, m - 2)
    return (m - 1) * t / np.sqrt((m - 2 + t * t) * m)


def esd_statistics(x, max_anomalies: int) -> tuple[list[int], list[float]]:
    """Indices removed in order and their robust studentized deviations."""
    x = np.asarray(x, dtype=float)
    alive = np.ones(len(x), dtype=bool)
    idx = np.arange(len(x))
    order, devs = [], []
    for _ in range(max_anomalies):
        vals = x[alive]
        if len(vals) < 3:
            break
        center = _median(vals)
        scale = max(MAD_SCALE * _median(np.abs(vals - center)), MAD_FLOOR)
        z = np.abs(vals - center) / scale
        k = int(np.argmax(z))
        j = int(idx[alive][k])
        order.append(j)
        devs.append(float(z[k]))
        alive[j] = False
    return order, devs


def test_spikes_dips(remainder, alpha: float = 0.05, max_anomalies: int = 10) -> list[int]:
    """Generalized ESD with median centering and MAD scale; returns flagged indices."""
    return esd(remainder, alpha, max_anomalies)[0]


def esd(remainder, alpha: float = 0.05, max_anomalies: int = 10) -> tuple[list[int], TestResult]:
    x = np.asarray(remainder, dtype=float)
    n = len(x)
    if n < 10:
        raise ValueError("generalized ESD needs at least 10 points")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    max_anomalies = max(0, min(int(max_anomalies), n - 3))
    order, devs = esd_statistics(x, max_anomalies)
    crit = [esd_critical(n, i + 1, alpha) for i in range(len(order))]
    count = 0
    for i, (r, lam) in enumerate(zip(devs, crit)):
        if r > lam:
            count = i + 1
    flagged = sorted(order[:count])
    if devs:
        summary = TestResult(devs[0], float(crit[0]), float("nan"), count > 0)
    else:
        summary = TestResult(0.0, float("inf"), 1.0, False)
    return flagged, summary


def _check_split(x, split):
    x = np.asarray(x, dtype=float)
    if split < 5 or len(x) - split < 5:
        raise ValueError("both segments need at least 5 points")
    return x[:split], x[split:]


@lru_cache(maxsize=1024)
def _f_threshold(alpha: float, d1: float, d2: float) -> float:
    return float(stats.f.isf(alpha / 2, d1, d2))


def _eff_df(n: int) -> float:
    return MAD_VAR_EFFICIENCY * (n - 1)


def test_variance_change(remainder, split: int, alpha: float = 0.05) -> TestResult:
    """F test on robust variances, (1.4826 MAD)^2, larger over smaller.

    Degrees of freedom are scaled by the MAD's variance efficiency so the test
    holds its nominal level; with raw n - 1 it rejects about 20% of null pairs.
    """
    a, b = _check_split(remainder, split)
    va = (MAD_SCALE * mad(a)) ** 2
    vb = (MAD_SCALE * mad(b)) ** 2
    if va <= MAD_FLOOR**2 and vb <= MAD_FLOOR**2:
        return TestResult(1.0, float("inf"), 1.0, False)
    va, vb = max(va, MAD_FLOOR**2), max(vb, MAD_FLOOR**2)
    if vb >= va:
        f, d1, d2 = vb / va, _eff_df(len(b)), _eff_df(len(a))
    else:
        f, d1, d2 = va / vb, _eff_df(len(a)), _eff_df(len(b))
    p = min(1.0, 2 * float(special.fdtrc(d1, d2, f)))
    thresh = _f_threshold(alpha, d1, d2)
    return TestResult(float(f), thresh, float(p), bool(p < alpha))


def test_mean_change(trend, split: int, alpha: float = 0.05) -> TestResult:
    """Welch two-sample T with median centres and MAD scales.

    The standard error of each median is sqrt(pi/2) * scale / sqrt(n).
    """
    a, b = _check_split(trend, split)
    na, nb = len(a), len(b)
    sa, sb = MAD_SCALE * mad(a), MAD_SCALE * mad(b)
    diff = _median(b) - _median(a)
    if sa == 0 and sb == 0 and diff == 0:
        return TestResult(0.0, float("inf"), 1.0, False)
    sa, sb = max(sa, MAD_FLOOR), max(sb, MAD_FLOOR)
    va, vb = MEDIAN_VAR_FACTOR * sa * sa / na, MEDIAN_VAR_FACTOR * sb * sb / nb
    se = np.sqrt(va + vb)
    t = diff / se
    df = (va + vb) ** 2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    p = float(2 * special.stdtr(df, -abs(t)))
    thresh = float(-special.stdtrit(df, alpha / 2))
    return TestResult(float(t), thresh, p, bool(p < alpha))


def mann_kendall_s(x) -> int:
    x = np.asarray(x, dtype=float)
    d = np.sign(x[None, :] - x[:, None])
    return int(np.triu(d, k=1).sum())


def test_long_trend(trend, alpha: float = 0.05) -> TestResult:
    """Mann-Kendall monotonic trend test with tie correction."""
    x = np.asarray(trend, dtype=float)
    n = len(x)
    if n < 5:
        raise ValueError("Mann-Kendall needs at least 5 points")
    s = mann_kendall_s(x)
    _, counts = np.unique(x, return_counts=True)
    ties = counts[counts > 1]
    var = (n * (n - 1) * (2 * n + 5) - float(np.sum(ties * (ties - 1) * (2 * ties + 5)))) / 18.0
    if s > 0 and var > 0:
        z = (s - 1) / np.sqrt(var)
    elif s < 0 and var > 0:
        z = (s + 1) / np.sqrt(var)
    else:
        z = 0.0
    crit = float(-special.ndtri(alpha / 2))
    p = float(2 * special.ndtr(-abs(z)))
    return TestResult(float(z), crit, p, bool(abs(z) > crit))
