"""Robust additive decomposition into trend, seasonal and remainder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded
from scipy.ndimage import median_filter


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    period: int

    def __len__(self):
        return len(self.trend)


def l1_trend(y, lam: float, tol: float = 1e-6, max_iter: int = 200, eps: float = 1e-9) -> np.ndarray:
    """Least-absolute-deviation fit with an L1 penalty on second differences.

    Minimises ``sum|y - t| + lam * sum|t[i-1] - 2 t[i] + t[i+1]|`` by iteratively
    reweighted least squares, starting from the quadratic (Hodrick-Prescott) fit.
    Stops when the relative decrease of the objective drops below ``tol``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 3 or lam <= 0:
        return y.copy()
    scale = max(float(np.max(np.abs(y))), 1.0)
    floor = eps * scale
    w = np.ones(n)
    v = np.ones(n - 2)
    tau = None
    prev_obj = np.inf
    for _ in range(max_iter):
        ab = np.zeros((3, n))
        lv = lam * v
        diag = w.copy()
        diag[:-2] += lv
        diag[1:-1] += 4 * lv
        diag[2:] += lv
        off1 = np.zeros(n - 1)
        off1[:-1] += -2 * lv
        off1[1:] += -2 * lv
        ab[2] = diag
        ab[1, 1:] = off1
        ab[0, 2:] = lv
        tau = solveh_banded(ab, w * y, check_finite=False)
        resid = np.abs(y - tau)
        d2 = np.abs(tau[:-2] - 2 * tau[1:-1] + tau[2:])
        obj = resid.sum() + lam * d2.sum()
        if prev_obj - obj <= tol * max(obj, floor):
            break
        prev_obj = obj
        w = 1.0 / np.maximum(resid, floor)
        v = 1.0 / np.maximum(d2, floor)
    return tau


def nonlocal_seasonal(detrended: np.ndarray, period: int, cycles: int) -> np.ndarray:
    """Median over same-phase points within ``cycles`` neighbouring periods.

    The point itself is left out, so an isolated outlier cannot shape its own
    seasonal estimate and the remainder does not pile up at exactly zero.
    """
    n = len(detrended)
    offsets = [k for k in range(-cycles, cycles + 1) if k != 0]
    stack = np.full((len(offsets), n), np.nan)
    for row, k in enumerate(offsets):
        shift = k * period
        if shift >= 0:
            stack[row, : n - shift] = detrended[shift:] if shift < n else []
        else:
            stack[row, -shift:] = detrended[: n + shift]
    return np.nanmedian(stack, axis=0)


def _center_cycles(s: np.ndarray, period: int) -> np.ndarray:
    # cycle means from full windows only, held constant at the edges
    n = len(s)
    c = np.concatenate(([0.0], np.cumsum(s)))
    full = (c[period:] - c[:-period]) / period
    lead = (period - 1) // 2
    level = np.empty(n)
    level[lead : lead + len(full)] = full
    level[:lead] = full[0]
    level[lead + len(full) :] = full[-1]
    return s - level


def decompose(values, period: int, lam: float = 20.0, cycles: int = 2, tol: float = 1e-6, max_iter: int = 200) -> DecompositionResult:
    """Split ``values`` into trend + seasonal + remainder.

    The remainder is defined as ``values - trend - seasonal`` so the sum is exact.
    ``period`` 0 means aperiodic: the seasonal component is all zeros.
    """
    y = np.asarray(values, dtype=float)
    n = len(y)
    period = int(period)
    if period != 0 and not (2 <= period <= n // 2):
        raise ValueError(f"period must be 0 or within [2, {n // 2}], got {period}")
    if period == 0:
        trend = l1_trend(y, lam, tol, max_iter)
        seasonal = np.zeros(n)
    else:
        rough = median_filter(y, size=period, mode="nearest")
        seasonal = _center_cycles(nonlocal_seasonal(y - rough, period, cycles), period)
        trend = l1_trend(y - seasonal, lam, tol, max_iter)
        seasonal = _center_cycles(nonlocal_seasonal(y - trend, period, cycles), period)
    return DecompositionResult(trend, seasonal, exact_remainder(y, trend, seasonal), period)


def exact_remainder(y: np.ndarray, trend: np.ndarray, seasonal: np.ndarray) -> np.ndarray:
    """Remainder r such that ``(trend + seasonal) + r == y`` holds in floating point.

    Where plain subtraction misses by rounding, the trend entry (and, if needed,
    the seasonal entry, by at most two ulps) is nudged onto values that make the
    sum exact; ``trend`` and ``seasonal`` are updated in place.
    No float triple can reproduce ``y`` when ``y`` is not a multiple of the
    coarser of the grids of ``trend + seasonal`` and of the remainder (this
    happens at deep dips, where the components are much larger than the value);
    those points keep an error of at most one ulp of the largest component.
    """
    base = trend + seasonal
    r = y - base
    for i in np.nonzero((base + r) != y)[0]:
        ti, si, yi = trend[i], seasonal[i], y[i]
        for _ in range(40):
            bi = ti + si
            ri = yi - bi
            if bi + ri == yi:
                trend[i], r[i] = ti, ri
                break
            target = yi - ri
            nxt = ti + (target - bi)
            if nxt + si == bi:
                nxt = np.nextafter(ti, np.inf if target > bi else -np.inf)
            ti = nxt
        else:
            hit = _search_triple(yi, si, r[i])
            if hit is not None:
                trend[i], seasonal[i], r[i] = hit
    return r


def _search_triple(y: float, s: float, r: float, steps: int = 64):
    """(t', s', r') with fl(fl(t' + s') + r') == y and r', s' near r, s; or None.

    Walks the remainder outwards one ulp at a time; for each candidate the
    base y - r' must round-trip, and a trend within a few ulps of base - s'
    must land on it exactly, trying s' within two ulps of s. Needed when the
    remainder's grid is coarser than y's, which can call for trend shifts of
    hundreds of ulps, or when base and s sit on incompatible grids.
    """
    seasonals = [s]
    lo = hi = s
    for _ in range(2):
        lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
        seasonals += [lo, hi]
    up, down = r, r
    for _ in range(steps):
        up, down = np.nextafter(up, np.inf), np.nextafter(down, -np.inf)
        for rc in (down, up):
            b = y - rc
            if b + rc != y:
                continue
            for sc in seasonals:
                lo = hi = b - sc
                for _ in range(4):
                    for tc in (lo, hi):
                        if tc + sc == b:
                            return tc, sc, rc
                    lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
    return None
