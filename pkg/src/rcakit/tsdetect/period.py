"""Period detection: robust clipping, Haar detail bands, ACF peak picking."""

from __future__ import annotations

import numpy as np

MAD_SCALE = 1.4826


def acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelation for lags 0..max_lag (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom <= 0:
        return np.zeros(max_lag + 1)
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, size)
    r = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return r / denom


def haar_detail(x: np.ndarray, level: int) -> np.ndarray:
    """Undecimated Haar detail at ``level``: difference of adjacent block means."""
    w = 1 << (level - 1)
    c = np.concatenate(([0.0], np.cumsum(x)))
    n = len(x)
    if n < 2 * w:
        return np.zeros(0)
    idx = np.arange(2 * w, n + 1)
    recent = c[idx] - c[idx - w]
    older = c[idx - w] - c[idx - 2 * w]
    return (recent - older) / w


def _peaks(r: np.ndarray, lo: int, hi: int) -> list[int]:
    lags = []
    for k in range(max(lo, 1), min(hi, len(r) - 2) + 1):
        if r[k] >= r[k - 1] and r[k] > r[k + 1]:
            lags.append(k)
    return lags


def robust_clip(x: np.ndarray, c: float = 2.0) -> np.ndarray:
    med = np.median(x)
    mad = MAD_SCALE * np.median(np.abs(x - med))
    if mad <= 0:
        return x - med
    return np.clip(x - med, -c * mad, c * mad)


def detect_period(values, max_period: int, acf_threshold: float = 0.5) -> int:
    """Dominant period in samples, or 0 when no ACF peak clears ``acf_threshold``.

    Values are centred and clipped at two robust standard deviations, split into
    Haar detail bands, and for each band the highest local ACF maximum within
    ``[2, max_period]`` is a candidate. The band whose candidate has the largest
    autocorrelation wins; ties go to the shorter lag.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 4:
        raise ValueError("series must have at least 4 points")
    if not np.all(np.isfinite(x)):
        raise ValueError("series must be finite")
    if np.ptp(x) == 0:
        return 0
    max_period = min(int(max_period), n // 2)
    if max_period < 2:
        return 0
    x = robust_clip(x)
    if np.ptp(x) == 0:
        return 0
    best_lag, best_val = 0, -np.inf
    max_level = max(1, int(np.floor(np.log2(max_period))))
    for level in range(1, max_level + 1):
        band = haar_detail(x, level)
        if len(band) < 2 * max_period or np.ptp(band) == 0:
            continue
        r = acf(band, max_period + 1)
        for lag in _peaks(r, 2, max_period):
            val = r[lag]
            if val >= acf_threshold and (val > best_val + 1e-12 or (abs(val - best_val) <= 1e-12 and lag < best_lag)):
                best_lag, best_val = lag, val
    return int(best_lag)
