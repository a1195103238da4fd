"""Skip-gram word vectors with negative sampling, trained with numpy minibatches."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..logtpl import WILDCARD


@dataclass(eq=False)
class EmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        for tok, v in self.vectors.items():
            if len(v) != self.dim:
                raise ValueError(f"vector for {tok!r} has the wrong dimension")

    def lookup(self, token: str) -> tuple[np.ndarray, bool]:
        """(vector, miss); unknown tokens give a zero vector and miss=True."""
        v = self.vectors.get(token)
        if v is None:
            return np.zeros(self.dim), True
        return v, False

    def __contains__(self, token):
        return token in self.vectors

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "fingerprint": self.fingerprint,
            "vectors": {t: [float(x) for x in v] for t, v in sorted(self.vectors.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddingTable":
        return cls(d["dim"], {t: np.asarray(v, dtype=float) for t, v in d["vectors"].items()}, d.get("fingerprint", ""))


def corpus_fingerprint(corpus) -> str:
    h = hashlib.sha256()
    for seq in corpus:
        h.update(json.dumps(list(seq)).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def _pairs(corpus, index: dict, window: int) -> np.ndarray:
    out = []
    for seq in corpus:
        ids = [index[t] for t in seq]
        for i, c in enumerate(ids):
            for j in range(max(0, i - window), min(len(ids), i + window + 1)):
                if j != i:
                    out.append((c, ids[j]))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def train_embeddings(
    corpus,
    dim: int = 32,
    window: int = 2,
    epochs: int = 15,
    seed: int = 0,
    negatives: int = 5,
    lr: float = 0.05,
    batch: int = 64,
) -> EmbeddingTable:
    """Skip-gram with negative sampling over token sequences.

    Each token's final vector is the mean of its input and output vectors.
    Deterministic for a given seed and corpus order.
    """
    corpus = [list(s) for s in corpus if len(s)]
    vocab = sorted({t for s in corpus for t in s} | {WILDCARD})
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if len({t for s in corpus for t in s}) < 2:
        raise ValueError("corpus needs at least two distinct tokens")
    index = {t: i for i, t in enumerate(vocab)}
    pairs = _pairs(corpus, index, window)
    if len(pairs) == 0:
        raise ValueError("corpus yields no context pairs")
    rng = np.random.default_rng(seed)
    v = len(vocab)
    w_in = (rng.random((v, dim)) - 0.5) / dim
    w_out = (rng.random((v, dim)) - 0.5) / dim
    counts = np.bincount(pairs[:, 0], minlength=v).astype(float)
    noise = counts**0.75
    noise /= noise.sum()
    cdf = np.cumsum(noise)
    total_steps = epochs * int(np.ceil(len(pairs) / batch))
    step = 0
    for _ in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            c, o = pairs[idx, 0], pairs[idx, 1]
            neg = np.minimum(np.searchsorted(cdf, rng.random((len(idx), negatives))), v - 1)
            rate = lr * max(1e-4, 1.0 - step / total_steps)
            step += 1
            u = w_in[c]  # (b, d)
            targets = np.concatenate([o[:, None], neg], axis=1)  # (b, 1+k)
            vo = w_out[targets]  # (b, 1+k, d)
            score = np.einsum("bd,bkd->bk", u, vo)
            label = np.zeros_like(score)
            label[:, 0] = 1.0
            g = (label - 1.0 / (1.0 + np.exp(-score))) * rate  # ascent direction
            grad_u = np.einsum("bk,bkd->bd", g, vo)
            grad_o = g[:, :, None] * u[:, None, :]
            np.add.at(w_in, c, grad_u)
            np.add.at(w_out, targets.ravel(), grad_o.reshape(-1, dim))
    vecs = (w_in + w_out) / 2
    table = {t: vecs[i].copy() for t, i in index.items()}
    return EmbeddingTable(dim, table, corpus_fingerprint(corpus))


def template_vector(tokens, table: EmbeddingTable) -> np.ndarray:
    """Mean of the non-wildcard token vectors (unknown tokens count as zeros)."""
    if len(tokens) == 0:
        raise ValueError("template must be non-empty")
    words = [t for t in tokens if t != WILDCARD]
    if not words:
        return np.zeros(table.dim)
    return np.mean([table.lookup(t)[0] for t in words], axis=0)
