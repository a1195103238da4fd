"""PC structure learning over binary features with G-squared independence tests."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_DF = 10


@dataclass
class CITest:
    statistic: float
    df: int
    p_value: float
    low_power: bool = False


def _g2_from_counts(counts: np.ndarray) -> np.ndarray:
    """G² of each (strata, 2, 2) table along the leading axis of ``counts``."""
    nk = counts.sum(axis=(2, 3))
    nx = counts.sum(axis=3)
    ny = counts.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = nx[:, :, :, None] * ny[:, :, None, :] / nk[:, :, None, None]
        terms = np.where(counts > 0, counts * np.log(counts / expected), 0.0)
    return np.maximum(2.0 * terms.sum(axis=(1, 2, 3)), 0.0)


def _g2_batch(data: np.ndarray, x: int, y: int, conds: np.ndarray) -> tuple[np.ndarray, int]:
    """G² statistics of X ⟂ Y | C for every row C of ``conds`` (shape (m, k))."""
    n = len(data)
    m, k = conds.shape
    df = 2**k
    xy = data[:, x].astype(np.int64) * 2 + data[:, y]
    if k:
        weights = 1 << np.arange(k - 1, -1, -1)
        stratum = data[:, conds.ravel()].reshape(n, m, k).astype(np.int64) @ weights
    else:
        stratum = np.zeros((n, m), dtype=np.int64)
    key = stratum * 4 + xy[:, None] + np.arange(m)[None, :] * (4 * df)
    counts = np.bincount(key.ravel(), minlength=m * 4 * df).reshape(m, df, 2, 2).astype(float)
    g2 = _g2_from_counts(counts)
    return g2, df


def g2_test(data: np.ndarray, x: int, y: int, cond=()) -> CITest:
    """G² test of X ⟂ Y | cond on binary columns of ``data``.

    With fewer than 10 samples per degree of freedom the test is flagged
    low-power and reports p = 0, so the caller keeps the edge.
    """
    cond = list(cond)
    df = 2 ** len(cond)
    if len(data) < MIN_SAMPLES_PER_DF * df:
        return CITest(float("nan"), df, 0.0, True)
    g2, df = _g2_batch(data, x, y, np.array([cond], dtype=np.int64).reshape(1, len(cond)))
    return CITest(float(g2[0]), df, float(special.chdtrc(df, g2[0])))


def level1_pvalues(data: np.ndarray, x: int, cols) -> np.ndarray:
    """p-values of X ⟂ Y | Z for every Y, Z in ``cols`` (matrix indexed [Y, Z]).

    All the 2x2x2 tables come from two Gram matrices over the rows with X = 0
    and X = 1, so a node's whole neighbourhood costs one BLAS call per value.
    The diagonal (Y = Z) is meaningless and left at 0.
    """
    cols = np.asarray(cols, dtype=np.int64)
    d = len(cols)
    sub = data[:, cols].astype(float)
    on = data[:, x].astype(bool)
    counts = np.empty((d, d, 2, 2, 2))  # [y, z] -> [z value, x value, y value]
    for a, rows in ((0, sub[~on]), (1, sub[on])):
        t = rows.T @ rows
        diag = np.diag(t)
        yz = t
        y_only = diag[:, None] - t
        z_only = diag[None, :] - t
        counts[:, :, 1, a, 1] = yz
        counts[:, :, 1, a, 0] = z_only
        counts[:, :, 0, a, 1] = y_only
        counts[:, :, 0, a, 0] = len(rows) - y_only - z_only - yz
    g2 = _g2_from_counts(counts.reshape(d * d, 2, 2, 2)).reshape(d, d)
    pv = special.chdtrc(2, g2)
    np.fill_diagonal(pv, 0.0)
    return pv


def first_independent(data: np.ndarray, x: int, y: int, conds, alpha: float, chunk: int = 64):
    """Index of the first conditioning set in ``conds`` with p >= alpha, or None.

    Same answer as calling ``g2_test`` on each set in order; sets are tested in
    vectorised chunks.
    """
    conds = np.asarray(conds, dtype=np.int64)
    for lo in range(0, len(conds), chunk):
        g2, df = _g2_batch(data, x, y, conds[lo : lo + chunk])
        hit = np.flatnonzero(special.chdtrc(df, g2) >= alpha)
        if len(hit):
            return lo + int(hit[0])
    return None


def pairwise_g2(data: np.ndarray) -> np.ndarray:
    """Marginal G² statistic for every pair of binary columns at once."""
    x = data.astype(float)
    n = len(x)
    n1 = x.sum(axis=0)
    n11 = x.T @ x
    n10 = n1[:, None] - n11
    n01 = n1[None, :] - n11
    n00 = n - n11 - n10 - n01
    out = np.zeros_like(n11)
    for o, rx, ry in ((n11, n1, n1), (n10, n1, n - n1), (n01, n - n1, n1), (n00, n - n1, n - n1)):
        rxm = rx[:, None] if rx.ndim else rx
        rym = ry[None, :] if ry.ndim else ry
        e = rxm * rym / n
        with np.errstate(divide="ignore", invalid="ignore"):
            out += np.where(o > 0, o * np.log(o / e), 0.0)
    g2 = 2.0 * out
    np.fill_diagonal(g2, 0.0)
    return np.maximum(g2, 0.0)


@dataclass
class PCResult:
    names: tuple
    skeleton: set  # frozenset({a, b}) pairs
    directed: list  # (parent, child) edges after orientation
    sepsets: dict = field(default_factory=dict)
    strength: dict = field(default_factory=dict)  # frozenset -> marginal G²
    warnings: list = field(default_factory=list)


def pc_skeleton(data: np.ndarray, names, alpha: float = 0.05, max_condition_size: int = 2):
    """PC-stable skeleton search. Returns (adjacency sets, sepsets, strengths, warnings)."""
    names = tuple(names)
    p = len(names)
    n = len(data)
    adj = {i: set(range(p)) - {i} for i in range(p)}
    sepsets: dict = {}
    warnings: list = []
    # level 0 vectorised
    g2 = pairwise_g2(data)
    if n >= MIN_SAMPLES_PER_DF:
        pv = special.chdtrc(1, g2)
        for i in range(p):
            for j in range(i + 1, p):
                if pv[i, j] >= alpha:
                    adj[i].discard(j)
                    adj[j].discard(i)
                    sepsets[frozenset((i, j))] = ()
    else:
        warnings.append("too few samples for marginal G² tests; all edges kept")
    strength = {frozenset((i, j)): float(g2[i, j]) for i in range(p) for j in range(i + 1, p)}

    low_power = set()
    for level in range(1, max_condition_size + 1):
        frozen_adj = {i: sorted(adj[i]) for i in range(p)}
        if all(len(frozen_adj[i]) - 1 < level for i in range(p)):
            break
        for i in range(p):
            pv1 = None
            if level == 1 and len(frozen_adj[i]) >= 2 and n >= MIN_SAMPLES_PER_DF * 2:
                pv1 = level1_pvalues(data, i, frozen_adj[i])
            for jpos, j in enumerate(frozen_adj[i]):
                if j not in adj[i]:
                    continue
                others = [k for k in frozen_adj[i] if k != j]
                if len(others) < level:
                    continue
                if pv1 is not None:
                    hits = np.flatnonzero(pv1[jpos] >= alpha)
                    hits = hits[hits != jpos]
                    if len(hits):
                        adj[i].discard(j)
                        adj[j].discard(i)
                        sepsets[frozenset((i, j))] = (frozen_adj[i][hits[0]],)
                    continue
                if n < MIN_SAMPLES_PER_DF * 2**level:
                    # every test at this level is low-power: keep the edge
                    low_power.add(frozenset((i, j)))
                    continue
                conds = list(itertools.combinations(others, level))
                hit = first_independent(data, i, j, conds, alpha)
                if hit is not None:
                    adj[i].discard(j)
                    adj[j].discard(i)
                    sepsets[frozenset((i, j))] = conds[hit]
    for pair in sorted(low_power, key=sorted):
        a, b = sorted(pair)
        if b in adj[a]:
            warnings.append(f"low-power G² test kept edge {names[a]} - {names[b]}")
    for w in warnings:
        logger.warning(w)
    return adj, sepsets, strength, warnings


def orient(p: int, adj: dict, sepsets: dict, names) -> list:
    """v-structures, Meek rules 1-3, then leftover edges from smaller to larger name."""
    directed = set()
    undirected = {frozenset((i, j)) for i in range(p) for j in adj[i] if i < j}

    def is_dir(a, b):
        return (a, b) in directed

    def set_dir(a, b):
        pair = frozenset((a, b))
        if pair in undirected:
            undirected.discard(pair)
            directed.add((a, b))
            return True
        return False

    # v-structures a -> c <- b for non-adjacent a, b with c not in sepset
    for c in range(p):
        nb = sorted(adj[c])
        for a, b in itertools.combinations(nb, 2):
            if b in adj[a]:
                continue
            sep = sepsets.get(frozenset((a, b)), ())
            if c in sep:
                continue
            if frozenset((a, c)) in undirected or is_dir(a, c):
                if not is_dir(c, a):
                    set_dir(a, c)
            if frozenset((b, c)) in undirected or is_dir(b, c):
                if not is_dir(c, b):
                    set_dir(b, c)

    changed = True
    while changed:
        changed = False
        for pair in sorted(undirected, key=sorted):
            a, b = sorted(pair)
            for x, y in ((a, b), (b, a)):
                if frozenset((x, y)) not in undirected:
                    break
                # R1: z -> x - y, z not adjacent to y  =>  x -> y
                r1 = any(is_dir(z, x) and y not in adj[z] and z != y for z in range(p))
                # R2: x -> z -> y and x - y  =>  x -> y
                r2 = any(is_dir(x, z) and is_dir(z, y) for z in range(p))
                # R3: x - z1 -> y, x - z2 -> y, z1, z2 non-adjacent  =>  x -> y
                r3 = False
                cands = [z for z in range(p) if frozenset((x, z)) in undirected and is_dir(z, y)]
                for z1, z2 in itertools.combinations(cands, 2):
                    if z2 not in adj[z1]:
                        r3 = True
                        break
                if r1 or r2 or r3:
                    set_dir(x, y)
                    changed = True
                    break
    for pair in sorted(undirected, key=lambda s: sorted(names[i] for i in s)):
        a, b = sorted(pair, key=lambda i: names[i])
        directed.add((a, b))
    return sorted(directed)


def pc_learn(data: np.ndarray, names, alpha: float = 0.05, max_condition_size: int = 2) -> PCResult:
    """Skeleton + orientation. ``data`` is (samples, features) of 0/1."""
    names = tuple(names)
    data = np.asarray(data, dtype=np.uint8)
    if data.shape[1] != len(names):
        raise ValueError("data columns and names disagree")
    if len(names) < 2:
        raise ValueError("need at least two features")
    adj, sepsets, strength, warnings = pc_skeleton(data, names, alpha, max_condition_size)
    directed = orient(len(names), adj, sepsets, names)
    skeleton = {frozenset((names[i], names[j])) for i in adj for j in adj[i] if i < j}
    return PCResult(
        names,
        skeleton,
        [(names[a], names[b]) for a, b in directed],
        {frozenset(names[i] for i in k): tuple(names[c] for c in v) for k, v in sepsets.items()},
        {frozenset(names[i] for i in k): v for k, v in strength.items()},
        warnings,
    )
