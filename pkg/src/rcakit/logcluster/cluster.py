"""Average-linkage clustering of template vectors into log patterns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNEMBEDDABLE = 0


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def similarity_matrix(vecs: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity; rows for zero vectors are all 0."""
    norms = np.linalg.norm(vecs, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vecs / safe[:, None]
    sim = unit @ unit.T
    np.clip(sim, -1.0, 1.0, out=sim)
    zero = norms == 0
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


@dataclass
class LogPattern:
    pattern_id: int
    members: tuple
    representative: int
    representative_vector: np.ndarray
    avg_similarity: float

    def to_dict(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "members": list(self.members),
            "representative": self.representative,
            "representative_vector": [float(x) for x in self.representative_vector],
            "avg_similarity": self.avg_similarity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogPattern":
        return cls(
            d["pattern_id"],
            tuple(d["members"]),
            d["representative"],
            np.asarray(d["representative_vector"], dtype=float),
            float(d["avg_similarity"]),
        )


def agglomerate(dist: np.ndarray, threshold: float) -> list[list[int]]:
    """Average linkage on a distance matrix; merges while the closest pair is < threshold.

    Rows are cluster keys: a merge folds the larger row into the smaller, and
    ties between equally close pairs go to the lexicographically smallest pair.
    """
    n = len(dist)
    d = dist.astype(float).copy()
    np.fill_diagonal(d, np.inf)
    size = np.ones(n)
    members = [[i] for i in range(n)]
    alive = np.ones(n, dtype=bool)
    for _ in range(n - 1):
        flat = int(np.argmin(d))
        i, j = divmod(flat, n)
        if not d[i, j] < threshold:
            break
        if j < i:
            i, j = j, i
        # Lance-Williams update for average linkage
        row = (size[i] * d[i] + size[j] * d[j]) / (size[i] + size[j])
        d[i, :] = row
        d[:, i] = row
        d[i, i] = np.inf
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] += size[j]
        members[i].extend(members[j])
        members[j] = []
        alive[j] = False
    return [sorted(members[i]) for i in range(n) if alive[i]]


def scores(member_rows: list[int], sim: np.ndarray) -> np.ndarray:
    """Score(i) = mean over the other members of (1 - similarity)."""
    sub = sim[np.ix_(member_rows, member_rows)]
    n = len(member_rows)
    if n == 1:
        return np.zeros(1)
    return (n - 1 - (sub.sum(axis=1) - np.diag(sub))) / (n - 1)


def select_representative(members, vectors: dict) -> int:
    """Member with the lowest Score; ties go to the smallest template id."""
    ids = sorted(members)
    if not ids:
        raise ValueError("members must be non-empty")
    sim = similarity_matrix(np.array([vectors[i] for i in ids]))
    s = scores(list(range(len(ids))), sim)
    return ids[int(np.argmin(s))]


def cluster(vectors: dict, distance_threshold: float) -> list[LogPattern]:
    """Group template vectors (template_id -> vector) into patterns numbered 1..m."""
    if not vectors:
        raise ValueError("need at least one vector")
    if not 0 < distance_threshold < 2:
        raise ValueError("distance_threshold must lie in (0, 2)")
    ids = sorted(vectors)
    mat = np.array([vectors[i] for i in ids], dtype=float)
    sim = similarity_matrix(mat)
    dist = 1.0 - sim
    zero = np.linalg.norm(mat, axis=1) == 0
    dist[zero, :] = 1.0
    dist[:, zero] = 1.0
    groups = agglomerate(dist, distance_threshold)
    groups.sort(key=lambda g: g[0])
    patterns = []
    for pid, rows in enumerate(groups, start=1):
        s = scores(rows, sim)
        best = int(np.argmin(s))
        rep_row = rows[best]
        if len(rows) == 1:
            avg = 1.0
        else:
            others = [r for r in rows if r != rep_row]
            avg = float(np.mean(sim[rep_row, others]))
        patterns.append(LogPattern(pid, tuple(ids[r] for r in rows), ids[rep_row], mat[rep_row].copy(), avg))
    return patterns


def compute_threshold(patterns) -> float:
    if not patterns:
        raise ValueError("need at least one pattern")
    return float(np.mean([p.avg_similarity for p in patterns]))


@dataclass
class PatternSet:
    """Trained patterns plus the online-assignment state."""

    patterns: list
    theta: float
    template_pattern: dict = field(default_factory=dict)

    @classmethod
    def build(cls, vectors: dict, distance_threshold: float, theta: float | None = None) -> "PatternSet":
        pats = cluster(vectors, distance_threshold)
        th = compute_threshold(pats) if theta is None else float(theta)
        mapping = {}
        for p in pats:
            for m in p.members:
                mapping[m] = p.pattern_id
        return cls(pats, th, mapping)

    def assign_vector(self, vec: np.ndarray) -> tuple[int, bool]:
        """Nearest representative at similarity >= theta, else a new pattern."""
        vec = np.asarray(vec, dtype=float)
        if not np.any(vec):
            return UNEMBEDDABLE, False
        best_id, best_sim = None, -np.inf
        for p in self.patterns:
            s = cosine(vec, p.representative_vector)
            if s > best_sim:
                best_id, best_sim = p.pattern_id, s
        if best_id is not None and best_sim >= self.theta:
            return best_id, False
        pid = max((p.pattern_id for p in self.patterns), default=0) + 1
        self.patterns.append(LogPattern(pid, (), -1, vec.copy(), 1.0))
        return pid, True

    def assign_template(self, template_id: int, vec: np.ndarray) -> tuple[int, bool]:
        """Known templates keep their trained pattern; new ones go through assign_vector."""
        if template_id == 0:
            return UNEMBEDDABLE, False
        known = self.template_pattern.get(template_id)
        if known is not None:
            return known, False
        pid, created = self.assign_vector(vec)
        if pid != UNEMBEDDABLE:
            self.template_pattern[template_id] = pid
            if created:
                p = self.patterns[-1]
                p.members, p.representative = (template_id,), template_id
        return pid, created

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "patterns": [p.to_dict() for p in self.patterns],
            "template_pattern": {str(k): v for k, v in sorted(self.template_pattern.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSet":
        return cls(
            [LogPattern.from_dict(p) for p in d["patterns"]],
            float(d["theta"]),
            {int(k): v for k, v in d["template_pattern"].items()},
        )


def assign_online(vec, patterns: PatternSet, theta: float | None = None) -> tuple[int, bool]:
    if theta is not None:
        if not -1 <= theta <= 1:
            raise ValueError("theta must lie in [-1, 1]")
        patterns.theta = theta
    return patterns.assign_vector(vec)
