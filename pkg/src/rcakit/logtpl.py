"""Log preprocessing and frequency-ordered prefix-tree templates."""

from __future__ import annotations

import copy
import json
import re
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

WILDCARD = "<*>"
EMPTY_TEMPLATE_ID = 0

_IPV4 = re.compile(r"^(?:\d{1,3}\.){3}\d{1,3}(?::\d{1,5})?$")
_UUID = re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$")
_HEX = re.compile(r"^(?:0[xX][0-9a-fA-F]{8,}|(?=[0-9a-fA-F]*\d)[0-9a-fA-F]{8,})$")
_INT = re.compile(r"^[-+]?\d+$")
_PATH = re.compile(r"^(?:~|\.{1,2})?/[^\s]*$|^[A-Za-z]:\\")
_WORD = re.compile(r"[a-z0-9]+")
_STRIP = "".join(c for c in string.punctuation if c not in "/~")

DEFAULT_PATTERNS = (_IPV4, _UUID, _HEX, _INT, _PATH)


def is_variable(token: str, extra=()) -> bool:
    if token == WILDCARD:
        return True
    return any(p.match(token) for p in DEFAULT_PATTERNS) or any(p.match(token) for p in extra)


def stem(word: str) -> str:
    """Strip -ing / -ed / -s until nothing changes (so stemming is idempotent)."""
    while True:
        w = word
        if w.endswith("ing") and len(w) > 5:
            w = w[:-3]
        elif w.endswith("ed") and len(w) > 4:
            w = w[:-2]
        elif w.endswith("s") and not w.endswith("ss") and len(w) > 3:
            w = w[:-1]
        if w == word:
            return w
        word = w


def preprocess(message: str, extra_patterns=(), mask: bool = True) -> list[str]:
    """Case-fold, mask variables, split and stem.

    Returns an empty list (the empty-template marker) when nothing but
    variables remains. With ``mask=False`` variables are kept verbatim.
    """
    if not message or not message.strip():
        raise ValueError("message must be non-empty")
    extra = tuple(re.compile(p) if isinstance(p, str) else p for p in extra_patterns)
    out: list[str] = []
    for raw in message.split():
        if raw == WILDCARD:
            out.append(WILDCARD if mask else raw)
            continue
        tok = raw.strip(_STRIP)
        if not tok:
            continue
        if mask and is_variable(tok, extra):
            out.append(WILDCARD)
            continue
        for piece in _WORD.findall(tok.lower()):
            word = stem(piece)
            # checking the stem too keeps templates a fixed point ("123s" -> "123")
            if mask and (is_variable(piece, extra) or is_variable(word, extra)):
                out.append(WILDCARD)
            else:
                out.append(word)
    if all(t == WILDCARD for t in out):
        return []
    return out


@dataclass
class Template:
    template_id: int
    tokens: tuple
    support: int = 1

    def to_dict(self) -> dict:
        return {"id": self.template_id, "tokens": list(self.tokens), "support": self.support}


class Node:
    __slots__ = ("token", "children", "leaves", "template_id", "absorb")

    def __init__(self, token: str | None = None):
        self.token = token
        self.children: dict[str, Node] = {}
        self.leaves = 0
        self.template_id: int | None = None
        self.absorb = False  # collapsed wildcard leaf: matches any remaining suffix

    def to_dict(self) -> dict:
        d = {"t": self.token, "n": self.leaves}
        if self.template_id is not None:
            d["id"] = self.template_id
        if self.absorb:
            d["absorb"] = True
        if self.children:
            d["c"] = [c.to_dict() for _, c in sorted(self.children.items())]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(d["t"])
        node.leaves = d["n"]
        node.template_id = d.get("id")
        node.absorb = d.get("absorb", False)
        for c in d.get("c", []):
            child = cls.from_dict(c)
            node.children[child.token] = child
        return node


class TemplateTree:
    """Prefix tree over frequency-ordered tokens.

    Call ``fit`` once on a corpus to freeze the token ranking; afterwards
    ``insert`` and ``extract`` reuse it. ``frozen`` trees never grow.
    """

    def __init__(self, max_leaves: int | None = None, extra_patterns=()):
        self.root = Node()
        self.freq: dict[str, int] = {}
        self.templates: dict[int, Template] = {}
        self.next_id = 1
        self.max_leaves = max_leaves
        self.frozen = False
        self.extra_patterns = tuple(extra_patterns)
        self.probes = 0

    # ordering -----------------------------------------------------------
    def order(self, tokens) -> list[str]:
        f = self.freq
        return sorted(tokens, key=lambda t: (t == WILDCARD, -f.get(t, 0), t))

    def preprocess(self, message: str) -> list[str]:
        return preprocess(message, self.extra_patterns)

    # building -----------------------------------------------------------
    def fit(self, messages, max_leaves: int | None = None) -> list[int]:
        """Rank tokens over ``messages``, insert them all and prune.

        Returns the template id of every message after pruning.
        """
        token_lists = [self.preprocess(m) for m in messages]
        counts = Counter(t for toks in token_lists for t in toks if t != WILDCARD)
        self.freq = dict(counts)
        ids = [self.insert(toks) if toks else EMPTY_TEMPLATE_ID for toks in token_lists]
        k = max_leaves if max_leaves is not None else self.max_leaves
        if k is not None:
            remap = self.prune(k)
            ids = [remap.get(i, i) for i in ids]
        return ids

    def insert(self, tokens) -> int:
        if not tokens:
            raise ValueError("cannot insert an empty token list")
        path = self.order(tokens)
        found, _ = self._walk(path)
        if found is not None:
            self.templates[found].support += 1
            return found
        node = self.root
        trail = [node]
        for tok in path:
            self.probes += 1
            nxt = node.children.get(tok)
            if nxt is None:
                nxt = Node(tok)
                node.children[tok] = nxt
            node = nxt
            trail.append(node)
        tid = self.next_id
        self.next_id += 1
        node.template_id = tid
        self.templates[tid] = Template(tid, tuple(path), 1)
        for n in trail:
            n.leaves += 1
        return tid

    def prune(self, max_leaves: int) -> dict[int, int]:
        """Collapse, top-down, every non-root node with more than ``max_leaves`` leaves.

        A collapsed node keeps a single absorbing wildcard child that stands for
        all the templates it replaced; the merged template keeps the smallest of
        their ids. Returns an old-id -> new-id map covering every template.
        """
        if max_leaves < 1:
            raise ValueError("max_leaves must be at least 1")
        remap = {tid: tid for tid in self.templates}

        def collapse(node: Node, prefix: list[str]):
            ids = []
            stack = [node]
            while stack:
                n = stack.pop()
                if n.template_id is not None:
                    ids.append(n.template_id)
                stack.extend(n.children.values())
            keep = min(ids)
            support = sum(self.templates[i].support for i in ids)
            for i in ids:
                remap[i] = keep
                if i != keep:
                    del self.templates[i]
            leaf = Node(WILDCARD)
            leaf.absorb = True
            leaf.template_id = keep
            leaf.leaves = 1
            node.children = {WILDCARD: leaf}
            node.template_id = None
            node.leaves = 1
            self.templates[keep] = Template(keep, tuple(prefix + [WILDCARD]), support)
            return len(ids) - 1

        def walk(node: Node, prefix: list[str]) -> int:
            removed = 0
            for tok in sorted(node.children):
                child = node.children[tok]
                if child.absorb:
                    continue
                if child.leaves > max_leaves:
                    removed += collapse(child, prefix + [tok])
                else:
                    removed += walk(child, prefix + [tok])
            node.leaves -= removed
            return removed

        walk(self.root, [])
        self.max_leaves = max_leaves
        return remap

    # lookup -------------------------------------------------------------
    def _walk(self, path):
        """Follow ``path``; returns (template id or None, deepest node reached)."""
        node = self.root
        for tok in path:
            self.probes += 1
            nxt = node.children.get(tok)
            if nxt is None:
                self.probes += 1
                nxt = node.children.get(WILDCARD)
                if nxt is None or not nxt.absorb:
                    return None, node
            node = nxt
            if node.absorb:
                return node.template_id, node
        if node.template_id is not None:
            return node.template_id, node
        self.probes += 1
        tail = node.children.get(WILDCARD)
        if tail is not None and tail.absorb:
            return tail.template_id, tail
        return None, node

    def extract(self, message: str, incremental: bool | None = None) -> int:
        """Template id for ``message``; 0 for messages that are all variables.

        In incremental mode a miss inserts a new template. A frozen tree answers
        a miss with the nearest-prefix template: the smallest template id under
        the deepest matching node, or 0 when not even the first token matches.
        """
        tokens = self.preprocess(message)
        return self.extract_tokens(tokens, incremental)

    def extract_tokens(self, tokens, incremental: bool | None = None) -> int:
        if not tokens:
            return EMPTY_TEMPLATE_ID
        if incremental is None:
            incremental = not self.frozen
        tid, node = self._walk(self.order(tokens))
        if tid is not None:
            if incremental:
                self.templates[tid].support += 1
            return tid
        if incremental:
            return self.insert(tokens)
        if node is self.root:
            return EMPTY_TEMPLATE_ID
        return _smallest_id(node)

    def freeze(self) -> "TemplateTree":
        self.frozen = True
        return self

    def __len__(self):
        return len(self.templates)

    # persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "max_leaves": self.max_leaves,
            "frozen": self.frozen,
            "next_id": self.next_id,
            "freq": dict(sorted(self.freq.items())),
            "extra_patterns": [p if isinstance(p, str) else p.pattern for p in self.extra_patterns],
            "templates": [self.templates[i].to_dict() for i in sorted(self.templates)],
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateTree":
        tree = cls(d.get("max_leaves"), d.get("extra_patterns", ()))
        tree.frozen = d.get("frozen", False)
        tree.next_id = d["next_id"]
        tree.freq = dict(d["freq"])
        tree.templates = {t["id"]: Template(t["id"], tuple(t["tokens"]), t["support"]) for t in d["templates"]}
        tree.root = Node.from_dict(d["root"])
        return tree

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "TemplateTree":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _smallest_id(node: Node) -> int:
    best = None
    stack = [node]
    while stack:
        n = stack.pop()
        if n.template_id is not None and (best is None or n.template_id < best):
            best = n.template_id
        stack.extend(n.children.values())
    return best if best is not None else EMPTY_TEMPLATE_ID


def insert(tree: TemplateTree, tokens) -> int:
    return tree.insert(tokens)


def prune(tree: TemplateTree, max_leaves: int) -> tuple[TemplateTree, dict[int, int]]:
    """Pruned copy of ``tree`` and the template-id remap table."""
    out = copy.deepcopy(tree)
    remap = out.prune(max_leaves)
    return out, remap


def extract(tree: TemplateTree, message: str) -> int:
    return tree.extract(message)
