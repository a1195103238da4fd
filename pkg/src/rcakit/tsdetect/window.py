"""Rolling median and MAD kept current by binary insertion."""

from __future__ import annotations

import bisect
import math
from collections import deque


class RobustWindow:
    """Fixed-capacity window holding its values in both arrival and sorted order."""

    def __init__(self, capacity: int, values=()):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self._order: deque[float] = deque()
        self.buffer: list[float] = []
        self.median = math.nan
        self.mad = math.nan
        for v in values:
            self.push(v)

    def __len__(self):
        return len(self.buffer)

    def push(self, value: float) -> "RobustWindow":
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("value must be finite")
        if len(self._order) == self.capacity:
            old = self._order.popleft()
            del self.buffer[bisect.bisect_left(self.buffer, old)]
        self._order.append(value)
        bisect.insort(self.buffer, value)
        self.median = _sorted_median(self.buffer)
        self.mad = _sorted_mad(self.buffer, self.median)
        return self


def update_window(w: RobustWindow, value: float) -> RobustWindow:
    return w.push(value)


def _sorted_median(buf: list[float]) -> float:
    n = len(buf)
    mid = n // 2
    if n % 2:
        return buf[mid]
    return (buf[mid - 1] + buf[mid]) / 2


def _sorted_mad(buf: list[float], med: float) -> float:
    """Median of |x - med| by merging the two monotone deviation runs outward."""
    n = len(buf)
    split = bisect.bisect_left(buf, med)
    i, j = split - 1, split  # left run grows leftwards, right run rightwards
    need = n // 2 + 1
    prev = cur = 0.0
    for _ in range(need):
        left = med - buf[i] if i >= 0 else math.inf
        right = buf[j] - med if j < n else math.inf
        prev = cur
        if left <= right:
            cur, i = left, i - 1
        else:
            cur, j = right, j + 1
    if n % 2:
        return cur
    return (prev + cur) / 2
