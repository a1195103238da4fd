"""Layered network over features, modules and cause types.

Edges run from causes to symptoms: module -> type, module -> feature,
type -> feature (for every type of the feature's owning module), module ->
module for declared dependencies, and learned feature -> feature edges.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from ..data import NEGATIVE, PlatformTopology
from ..features import FeatureMatrix
from .bn import BayesNet, StructureError, find_cycle, topological_order, variable_elimination
from .pc import pc_learn

FEATURE, MODULE, TYPE = "metric", "module", "type"
FORMAT_VERSION = 1


def mod_node(m: str) -> str:
    return f"module:{m}"


def type_node(t: str) -> str:
    return f"type:{t}"


@dataclass
class KhbnStructure:
    features: tuple
    modules: tuple
    types: tuple
    type_module: dict  # type id -> module id
    feature_module: dict  # feature id -> module id
    edges: set = field(default_factory=set)
    warnings: list = field(default_factory=list)

    @property
    def layer(self) -> dict:
        out = {f: FEATURE for f in self.features}
        out.update({mod_node(m): MODULE for m in self.modules})
        out.update({type_node(t): TYPE for t in self.types})
        return out

    @property
    def nodes(self) -> list:
        return list(self.features) + [mod_node(m) for m in self.modules] + [type_node(t) for t in self.types]

    def parents(self) -> dict:
        """Ordered parent lists: module first, then its types, then feature parents."""
        pa = {n: [] for n in self.nodes}
        for u, v in self.edges:
            pa[v].append(u)
        layer = self.layer
        rank = {MODULE: 0, TYPE: 1, FEATURE: 2}
        return {n: tuple(sorted(ps, key=lambda x: (rank[layer[x]], x))) for n, ps in pa.items()}

    def causal_edges(self) -> list:
        layer = self.layer
        return sorted((u, v) for u, v in self.edges if layer[u] == FEATURE and layer[v] == FEATURE)

    def check_acyclic(self) -> None:
        cyc = find_cycle(self.nodes, self.edges)
        if cyc:
            raise StructureError("cycle: " + " -> ".join(cyc))


def allocate(topo: PlatformTopology, feature_ids) -> KhbnStructure:
    """Initial edges from the topology."""
    feature_ids = tuple(feature_ids)
    fm = {}
    for f in feature_ids:
        try:
            fm[f] = topo.owner_of_feature(f)
        except KeyError:
            raise StructureError(f"feature {f!r} has no owner module in the topology") from None
    cyc = find_cycle(sorted(topo.modules), topo.module_dependencies)
    if cyc:
        raise StructureError("module dependency cycle: " + " -> ".join(cyc))
    modules = tuple(sorted(topo.modules))
    types = tuple(sorted(topo.cause_types))
    edges = set()
    for t, m in topo.cause_types.items():
        edges.add((mod_node(m), type_node(t)))
    for f, m in fm.items():
        edges.add((mod_node(m), f))
        for t in topo.types_of(m):
            edges.add((type_node(t), f))
    for a, b in topo.module_dependencies:
        edges.add((mod_node(a), mod_node(b)))
    s = KhbnStructure(feature_ids, modules, types, dict(topo.cause_types), fm, edges)
    s.check_acyclic()
    return s


def merge_causal(structure: KhbnStructure, directed, strength: dict, max_parents: int = 3) -> KhbnStructure:
    """Add learned feature edges, strongest first, skipping any that would close a cycle.

    A reversed edge is tried before an edge is dropped; each feature keeps at
    most ``max_parents`` learned parents.
    """
    feats = set(structure.features)
    cand = [(u, v) for u, v in directed if u in feats and v in feats]
    cand.sort(key=lambda e: (-strength.get(frozenset(e), 0.0), e))
    edges = set(structure.edges)
    learned = {f: 0 for f in structure.features}
    adj = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)

    def reaches(a, b):
        stack, seen = [a], {a}
        while stack:
            x = stack.pop()
            if x == b:
                return True
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        return False

    for u, v in cand:
        for a, b in ((u, v), (v, u)):
            if learned[b] >= max_parents:
                continue
            if reaches(b, a):
                continue
            edges.add((a, b))
            adj.setdefault(a, set()).add(b)
            learned[b] += 1
            break
        else:
            structure.warnings.append(f"dropped learned edge {u} -> {v}")
    out = KhbnStructure(
        structure.features, structure.modules, structure.types, structure.type_module, structure.feature_module, edges, list(structure.warnings)
    )
    out.check_acyclic()
    return out


def node_states(structure: KhbnStructure, m: FeatureMatrix) -> dict:
    """0/1 arrays per node: features from bits, modules/types from labels."""
    states = {}
    pos = {f: i for i, f in enumerate(m.feature_ids)}
    for f in structure.features:
        states[f] = m.bits[:, pos[f]].astype(np.int64) if f in pos else np.zeros(len(m), dtype=np.int64)
    labels = [w.label if w.polarity == NEGATIVE else None for w in m.windows]
    for mod in structure.modules:
        states[mod_node(mod)] = np.array([1 if lab and lab[0] == mod else 0 for lab in labels], dtype=np.int64)
    for t in structure.types:
        states[type_node(t)] = np.array([1 if lab and lab[1] == t else 0 for lab in labels], dtype=np.int64)
    return states


def fit_cpts(structure: KhbnStructure, m: FeatureMatrix, pseudo: float = 1.0) -> dict:
    """Laplace-smoothed maximum likelihood; unseen parent configurations get (0.5, 0.5)."""
    structure.check_acyclic()
    parents = structure.parents()
    states = node_states(structure, m)
    cpts = {}
    for node, pa in parents.items():
        k = len(pa)
        idx = np.zeros(len(m), dtype=np.int64)
        for p in pa:
            idx = (idx << 1) | states[p]
        x = states[node]
        n1 = np.bincount(idx, weights=x, minlength=2**k)
        n = np.bincount(idx, minlength=2**k).astype(float)
        p1 = (n1 + pseudo) / (n + 2 * pseudo)
        cpts[node] = np.column_stack([1.0 - p1, p1])
    return cpts


@dataclass
class Diagnosis:
    ranked: list  # (type_id, score), best first
    best_module: tuple  # (module_id, posterior)
    module_posteriors: dict
    novel_type: bool = False
    degenerate: bool = False

    @property
    def top_type(self) -> str | None:
        return self.ranked[0][0] if self.ranked else None

    @property
    def answer(self) -> tuple:
        """("module", id) when flagged novel, else ("type", id)."""
        if self.novel_type:
            return ("module", self.best_module[0])
        return ("type", self.top_type)

    def to_dict(self) -> dict:
        return {
            "ranked": [[t, s] for t, s in self.ranked],
            "best_module": list(self.best_module),
            "module_posteriors": dict(sorted(self.module_posteriors.items())),
            "novel_type": self.novel_type,
            "degenerate": self.degenerate,
            "answer": list(self.answer),
        }


def fingerprint(feature_ids) -> str:
    return hashlib.sha256("\n".join(feature_ids).encode()).hexdigest()[:16]


def _rank(scores: dict) -> list:
    return sorted(scores.items(), key=lambda kv: (-round(kv[1], 12), kv[0]))


@dataclass
class KhbnModel:
    structure: KhbnStructure
    cpts: dict
    feature_ids: tuple
    training_fingerprint: str = ""
    confidence_floor: float = 0.2

    def __post_init__(self):
        self.feature_ids = tuple(self.feature_ids)
        self._parents = self.structure.parents()
        self._prepare()

    # inference ----------------------------------------------------------
    def _prepare(self):
        s = self.structure
        self._blocks = {}
        pos = {f: i for i, f in enumerate(self.feature_ids)}
        for mod in s.modules:
            types = [t for t in s.types if s.type_module[t] == mod]
            k = len(types)
            cfg = np.array(list(itertools.product((0, 1), repeat=k + 1)), dtype=np.int64).reshape(-1, k + 1)
            # prior of the type assignment given the module bit
            prior = np.zeros(len(cfg))
            for j, t in enumerate(types):
                tab = np.log(self.cpts[type_node(t)])
                prior += tab[cfg[:, 0], cfg[:, j + 1]]
            feats = []
            for f in s.features:
                if s.feature_module[f] != mod:
                    continue
                pa = self._parents[f]
                block = pa[: 1 + k]
                if block != (mod_node(mod),) + tuple(type_node(t) for t in types):
                    raise StructureError(f"feature {f!r} does not have its module block as leading parents")
                extra = [pos[p] for p in pa[1 + k :]]
                feats.append((pos[f], extra, np.log(self.cpts[f])))
            self._blocks[mod] = (types, cfg, prior, feats)
        mods = list(s.modules)
        self._mod_cfg = np.array(list(itertools.product((0, 1), repeat=len(mods))), dtype=np.int64).reshape(-1, len(mods))
        self._mod_prior = np.zeros(len(self._mod_cfg))
        for i, mod in enumerate(mods):
            pa = self._parents[mod_node(mod)]
            idx = np.zeros(len(self._mod_cfg), dtype=np.int64)
            for p in pa:
                idx = (idx << 1) | self._mod_cfg[:, mods.index(p.split(":", 1)[1])]
            self._mod_prior += np.log(self.cpts[mod_node(mod)])[idx, self._mod_cfg[:, i]]

    def _check_features(self, feature_ids):
        if tuple(feature_ids) != self.feature_ids:
            raise ValueError(
                f"feature ids do not match the model (model fingerprint {fingerprint(self.feature_ids)}, "
                f"input {fingerprint(feature_ids)}); retrain or re-featurize"
            )

    def infer_batch(self, bits: np.ndarray, confidence_floor: float | None = None) -> list[Diagnosis]:
        """Exact posterior scores for every row of ``bits`` (aligned to feature_ids).

        Given its module node, a module's type block is independent of the rest
        of the network once all features are observed, so each block is summed
        exhaustively and the module layer is enumerated jointly.
        """
        floor = 0.0 if confidence_floor is None else confidence_floor
        bits = np.asarray(bits, dtype=np.int64)
        if bits.ndim == 1:
            bits = bits[None, :]
        if bits.shape[1] != len(self.feature_ids):
            raise ValueError("observation width does not match the model's features")
        n = len(bits)
        mods = list(self.structure.modules)
        if len(mods) > 16:
            return [self.infer_ve(row, floor) for row in bits]
        psi = {}
        cond = {}
        for mod in mods:
            types, cfg, prior, feats = self._blocks[mod]
            k = len(types)
            base = np.zeros(len(cfg), dtype=np.int64)
            for c in range(k + 1):
                base = (base << 1) | cfg[:, c]
            logphi = np.broadcast_to(prior, (n, len(cfg))).copy()
            for col, extra, ltab in feats:
                e = len(extra)
                sub = np.zeros(n, dtype=np.int64)
                for x in extra:
                    sub = (sub << 1) | bits[:, x]
                rows = (base[None, :] << e) | sub[:, None]
                logphi += ltab[rows, bits[:, col][:, None]]
            on = cfg[:, 0] == 1
            psi1 = logsumexp(logphi[:, on], axis=1)
            psi0 = logsumexp(logphi[:, ~on], axis=1)
            psi[mod] = (psi0, psi1)
            tprob = {}
            for j, t in enumerate(types):
                sel = on & (cfg[:, j + 1] == 1)
                tprob[t] = np.exp(logsumexp(logphi[:, sel], axis=1) - psi1)
            cond[mod] = tprob
        logjoint = np.broadcast_to(self._mod_prior, (n, len(self._mod_cfg))).copy()
        for i, mod in enumerate(mods):
            psi0, psi1 = psi[mod]
            logjoint += np.where(self._mod_cfg[None, :, i] == 1, psi1[:, None], psi0[:, None])
        logz = logsumexp(logjoint, axis=1)
        post = np.exp(logjoint - logz[:, None])
        out = []
        for r in range(n):
            if not np.isfinite(logz[r]):
                out.append(self._degenerate())
                continue
            mpost = {mod: float(post[r, self._mod_cfg[:, i] == 1].sum()) for i, mod in enumerate(mods)}
            scores = {}
            for mod in mods:
                for t, pr in cond[mod].items():
                    scores[t] = float(min(1.0, max(0.0, pr[r] * mpost[mod])))
            out.append(self._diagnosis(scores, mpost, floor))
        return out

    def _diagnosis(self, scores: dict, mpost: dict, floor: float) -> Diagnosis:
        ranked = _rank(scores)
        best_mod = sorted(mpost.items(), key=lambda kv: (-round(kv[1], 12), kv[0]))[0] if mpost else (None, 0.0)
        novel = bool(ranked) and floor > 0 and ranked[0][1] < floor
        return Diagnosis(ranked, tuple(best_mod), mpost, novel)

    def _degenerate(self) -> Diagnosis:
        s = self.structure
        u = 1.0 / max(1, len(s.types))
        mpost = {m: 1.0 / max(1, len(s.modules)) for m in s.modules}
        d = self._diagnosis({t: u for t in s.types}, mpost, 0.0)
        d.degenerate = True
        return d

    def to_bayesnet(self) -> BayesNet:
        bn = BayesNet(self.structure.nodes, self._parents)
        bn.cpt = {k: np.asarray(v) for k, v in self.cpts.items()}
        return bn

    def infer_ve(self, observed, confidence_floor: float = 0.0) -> Diagnosis:
        """Reference path: generic variable elimination, one query per type."""
        bits = self._as_bits(observed)
        bn = self.to_bayesnet()
        ev = {f: int(b) for f, b in zip(self.feature_ids, bits)}
        s = self.structure
        mpost = {}
        for mod in s.modules:
            tab, logp = variable_elimination(bn, [mod_node(mod)], ev)
            if not np.isfinite(logp):
                return self._degenerate()
            mpost[mod] = float(tab[1])
        scores = {}
        for t in s.types:
            mod = s.type_module[t]
            tab, _ = variable_elimination(bn, [type_node(t), mod_node(mod)], ev)
            scores[t] = float(tab[1, 1])
        return self._diagnosis(scores, mpost, confidence_floor)

    def _as_bits(self, observed) -> np.ndarray:
        if isinstance(observed, dict):
            missing = set(self.feature_ids) - set(observed)
            extra = set(observed) - set(self.feature_ids)
            if missing or extra:
                raise ValueError("observation must cover exactly the model's feature nodes")
            return np.array([int(observed[f]) for f in self.feature_ids])
        arr = np.asarray(observed, dtype=np.int64).ravel()
        if len(arr) != len(self.feature_ids):
            raise ValueError("observation width does not match the model's features")
        return arr

    def infer(self, observed) -> Diagnosis:
        return self.infer_batch(self._as_bits(observed)[None, :])[0]

    def infer_matrix(self, m: FeatureMatrix, confidence_floor: float | None = None) -> list[Diagnosis]:
        self._check_features(m.feature_ids)
        return self.infer_batch(m.bits, confidence_floor)

    # persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        s = self.structure
        return {
            "format_version": FORMAT_VERSION,
            "feature_ids": list(self.feature_ids),
            "fingerprint": fingerprint(self.feature_ids),
            "training_fingerprint": self.training_fingerprint,
            "confidence_floor": self.confidence_floor,
            "layers": {
                "metric": list(s.features),
                "module": list(s.modules),
                "type": list(s.types),
            },
            "type_module": dict(sorted(s.type_module.items())),
            "feature_module": dict(sorted(s.feature_module.items())),
            "edges": sorted([list(e) for e in s.edges]),
            "cpts": {k: [list(map(float, row)) for row in v] for k, v in sorted(self.cpts.items())},
            "warnings": list(s.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KhbnModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        if fingerprint(d["feature_ids"]) != d["fingerprint"]:
            raise ValueError("model fingerprint does not match its feature ids")
        layers = d["layers"]
        s = KhbnStructure(
            tuple(layers["metric"]),
            tuple(layers["module"]),
            tuple(layers["type"]),
            dict(d["type_module"]),
            dict(d["feature_module"]),
            {tuple(e) for e in d["edges"]},
            list(d.get("warnings", [])),
        )
        cpts = {k: np.asarray(v, dtype=float) for k, v in d["cpts"].items()}
        return cls(s, cpts, tuple(d["feature_ids"]), d.get("training_fingerprint", ""), d.get("confidence_floor", 0.2))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "KhbnModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @property
    def node_count(self) -> int:
        return len(self.structure.nodes)


def train(
    m: FeatureMatrix,
    topo: PlatformTopology,
    alpha: float = 0.05,
    max_condition_size: int = 2,
    max_parents: int = 3,
    learn_structure: bool = True,
    confidence_floor: float = 0.2,
) -> KhbnModel:
    """Allocate from topology, learn feature edges with PC, fit CPTs."""
    s = allocate(topo, m.feature_ids)
    if learn_structure and len(m.feature_ids) >= 2:
        pc = pc_learn(m.bits, m.feature_ids, alpha, max_condition_size)
        s.warnings.extend(pc.warnings)
        s = merge_causal(s, pc.directed, pc.strength, max_parents)
    cpts = fit_cpts(s, m)
    h = hashlib.sha256(m.bits.tobytes() + "\n".join(m.feature_ids).encode()).hexdigest()[:16]
    return KhbnModel(s, cpts, m.feature_ids, h, confidence_floor)


def infer(model: KhbnModel, observed) -> Diagnosis:
    return model.infer(observed)


def infer_module_fallback(model: KhbnModel, observed, confidence_floor: float | None = None) -> Diagnosis:
    """As ``infer``, but a best type score below the floor flags a novel type."""
    floor = model.confidence_floor if confidence_floor is None else confidence_floor
    return model.infer_batch(model._as_bits(observed)[None, :], floor)[0]


__all__ = [
    "Diagnosis",
    "KhbnModel",
    "KhbnStructure",
    "allocate",
    "fit_cpts",
    "infer",
    "infer_module_fallback",
    "merge_causal",
    "train",
    "topological_order",
]
