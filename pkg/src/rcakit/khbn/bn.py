"""Binary Bayesian networks: CPT storage, variable elimination, brute-force enumeration."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np


class StructureError(ValueError):
    """Raised for cyclic graphs or inconsistent parent sets."""


def topological_order(nodes, parents: dict) -> list:
    """Kahn's algorithm with lexicographic tie-breaks; raises on a cycle."""
    nodes = list(nodes)
    indeg = {n: 0 for n in nodes}
    children = {n: [] for n in nodes}
    for n in nodes:
        for p in parents.get(n, ()):
            if p not in indeg:
                raise StructureError(f"parent {p!r} of {n!r} is not a node")
            indeg[n] += 1
            children[p].append(n)
    ready = sorted(n for n in nodes if indeg[n] == 0)
    out = []
    heapq.heapify(ready)
    while ready:
        n = heapq.heappop(ready)
        out.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(out) != len(nodes):
        stuck = sorted(n for n in nodes if indeg[n] > 0)
        raise StructureError(f"graph has a cycle through {stuck}")
    return out


def find_cycle(nodes, edges) -> list | None:
    """A directed cycle as a node list (first node repeated at the end), or None."""
    adj = {n: [] for n in nodes}
    for u, v in edges:
        adj[u].append(v)
    for n in adj:
        adj[n].sort()
    color = {n: 0 for n in adj}
    stack_path = []

    def dfs(u):
        color[u] = 1
        stack_path.append(u)
        for v in adj[u]:
            if color[v] == 1:
                return stack_path[stack_path.index(v) :] + [v]
            if color[v] == 0:
                found = dfs(v)
                if found:
                    return found
        color[u] = 2
        stack_path.pop()
        return None

    for n in sorted(adj):
        if color[n] == 0:
            found = dfs(n)
            if found:
                return found
    return None


def config_index(bits) -> int:
    """Row index of a parent configuration; the first parent is the most significant bit."""
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


@dataclass
class BayesNet:
    """Binary network. ``cpt[node]`` has shape (2**len(parents[node]), 2)."""

    nodes: list
    parents: dict
    cpt: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = list(self.nodes)
        self.parents = {n: tuple(self.parents.get(n, ())) for n in self.nodes}
        self.order = topological_order(self.nodes, self.parents)

    def validate(self, tol: float = 1e-12) -> None:
        for n in self.nodes:
            t = np.asarray(self.cpt[n])
            k = len(self.parents[n])
            if t.shape != (2**k, 2):
                raise StructureError(f"CPT of {n!r} has shape {t.shape}, expected {(2**k, 2)}")
            if np.any(t < 0) or np.any(t > 1):
                raise StructureError(f"CPT of {n!r} has entries outside [0, 1]")
            if np.any(np.abs(t.sum(axis=1) - 1) > tol):
                raise StructureError(f"CPT rows of {n!r} do not sum to 1")

    def prob(self, node, value: int, assignment: dict) -> float:
        row = config_index(assignment[p] for p in self.parents[node])
        return float(self.cpt[node][row, value])

    def factor(self, node) -> "Factor":
        pa = self.parents[node]
        table = np.asarray(self.cpt[node], dtype=float).reshape((2,) * len(pa) + (2,))
        return Factor(tuple(pa) + (node,), table)


@dataclass
class Factor:
    vars: tuple
    table: np.ndarray
    log_scale: float = 0.0

    def reduce(self, evidence: dict) -> "Factor":
        idx = []
        keep = []
        for v in self.vars:
            if v in evidence:
                idx.append(int(evidence[v]))
            else:
                idx.append(slice(None))
                keep.append(v)
        return Factor(tuple(keep), np.asarray(self.table[tuple(idx)], dtype=float), self.log_scale)

    def normalized(self) -> "Factor":
        m = float(np.max(self.table)) if self.table.size else 0.0
        if m <= 0:
            return self
        return Factor(self.vars, self.table / m, self.log_scale + np.log(m))


def multiply(factors: list, labels: dict) -> Factor:
    out_vars = []
    for f in factors:
        for v in f.vars:
            if v not in out_vars:
                out_vars.append(v)
    # einsum accepts at most 52 subscripts, so label locally
    local = {v: i for i, v in enumerate(out_vars)}
    args = []
    for f in factors:
        args.extend([f.table, [local[v] for v in f.vars]])
    args.append([local[v] for v in out_vars])
    table = np.einsum(*args) if factors else np.ones(())
    scale = sum(f.log_scale for f in factors)
    return Factor(tuple(out_vars), table, scale).normalized()


def sum_out(f: Factor, var) -> Factor:
    axis = f.vars.index(var)
    return Factor(tuple(v for v in f.vars if v != var), f.table.sum(axis=axis), f.log_scale).normalized()


def _min_degree_order(factors: list, hidden: set) -> list:
    nbrs = {v: set() for v in hidden}
    for f in factors:
        hv = [v for v in f.vars if v in hidden]
        for v in hv:
            nbrs[v].update(u for u in hv if u != v)
    order = []
    remaining = set(hidden)
    while remaining:
        v = min(remaining, key=lambda x: (len(nbrs[x] & remaining), str(x)))
        order.append(v)
        nb = nbrs[v] & remaining
        for a in nb:
            nbrs[a].update(nb - {a})
        remaining.remove(v)
    return order


def variable_elimination(bn: BayesNet, query, evidence: dict | None = None) -> tuple[np.ndarray, float]:
    """Posterior joint over ``query`` given ``evidence``, plus log P(evidence).

    The returned table has shape (2,)*len(query) in query order and sums to 1.
    A zero-probability evidence set returns a uniform table and log P = -inf.
    """
    evidence = dict(evidence or {})
    query = tuple(query)
    overlap = set(query) & set(evidence)
    if overlap:
        raise ValueError(f"query variables {sorted(overlap)} are also evidence")
    labels = {v: i for i, v in enumerate(bn.nodes)}
    factors = [bn.factor(n).reduce(evidence) for n in bn.nodes]
    hidden = set(bn.nodes) - set(query) - set(evidence)
    for v in _min_degree_order(factors, hidden):
        touching = [f for f in factors if v in f.vars]
        rest = [f for f in factors if v not in f.vars]
        if touching:
            rest.append(sum_out(multiply(touching, labels), v))
        factors = rest
    joint = multiply(factors, labels)
    # order axes by query
    if query:
        perm = [joint.vars.index(q) for q in query]
        table = np.transpose(joint.table, perm)
    else:
        table = joint.table
    total = float(table.sum())
    if total <= 0 or not np.isfinite(total):
        shape = (2,) * len(query)
        return np.full(shape, 1.0 / 2 ** len(query)), -np.inf
    return table / total, joint.log_scale + float(np.log(total))


def enumerate_joint(bn: BayesNet, query, evidence: dict | None = None) -> tuple[np.ndarray, float]:
    """Brute-force reference: sum the full joint over every assignment."""
    evidence = dict(evidence or {})
    query = tuple(query)
    free = [n for n in bn.nodes if n not in evidence]
    table = np.zeros((2,) * len(query))
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(free)):
        a = dict(evidence)
        a.update(zip(free, bits))
        p = 1.0
        for n in bn.nodes:
            p *= bn.prob(n, a[n], a)
        table[tuple(a[q] for q in query)] += p
        total += p
    if total <= 0:
        return np.full((2,) * len(query), 1.0 / 2 ** len(query)), -np.inf
    return table / total, float(np.log(total))


def random_network(rng: np.random.Generator, n_nodes: int, edge_prob: float = 0.35, max_parents: int = 3) -> BayesNet:
    """Random DAG over n0..n{k-1} (edges only from lower to higher index) with random CPTs."""
    names = [f"n{i}" for i in range(n_nodes)]
    parents = {}
    for i, n in enumerate(names):
        cand = [names[j] for j in range(i) if rng.random() < edge_prob]
        if len(cand) > max_parents:
            cand = sorted(rng.choice(cand, size=max_parents, replace=False).tolist(), key=names.index)
        parents[n] = tuple(cand)
    bn = BayesNet(names, parents)
    for n in names:
        p1 = rng.uniform(0.02, 0.98, size=2 ** len(parents[n]))
        bn.cpt[n] = np.column_stack([1 - p1, p1])
    return bn
