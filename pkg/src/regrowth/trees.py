"""Rooted leaf-labelled trees without degree-2 vertices.

A tree is stored as an arena: vertex 0 is the root (degree one), every
other vertex has a parent, internal vertices have at least two children
ordered by their least leaf label, and leaves carry labels.  The nested
form used throughout the exact-law code is ``int`` for a leaf and a tuple
of subtrees (ordered by least label) for a branch point; the planted root
edge is implicit there.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .partitions import PartitionN

__all__ = [
    "LabelledTree",
    "first_split",
    "remove_leaf",
    "reduced_subtree",
    "height",
    "leaf_depths",
    "shape",
    "enumerate_trees",
    "newick_export",
    "parse_newick",
    "nested_min",
    "nested_leaves",
    "relabel_nested",
]

TREE_GUARD = 8


def nested_min(t) -> int:
    while not isinstance(t, int):
        t = t[0]
    return t


def nested_leaves(t) -> list[int]:
    if isinstance(t, int):
        return [t]
    out: list[int] = []
    for c in t:
        out.extend(nested_leaves(c))
    return out


def _canon(t):
    """Normalise a nested tree: children sorted by least label."""
    if isinstance(t, int):
        return t
    kids = [_canon(c) for c in t]
    if len(kids) < 2:
        raise ValueError("branch points need at least two children")
    kids.sort(key=nested_min)
    return tuple(kids)


def relabel_nested(t, mapping):
    if isinstance(t, int):
        return mapping[t]
    return _canon(tuple(relabel_nested(c, mapping) for c in t))


@dataclass(frozen=True, eq=False)
class LabelledTree:
    """Arena representation; see module docstring.

    ``parent[v]`` is -1 for the root, ``label[v]`` is 0 for non-leaves and
    ``length[v]`` (optional) is the length of the edge above v.
    """

    parent: tuple[int, ...]
    label: tuple[int, ...]
    length: tuple[float, ...] | None = None

    def __post_init__(self):
        n_v = len(self.parent)
        if n_v < 2 or self.parent[0] != -1 or len(self.label) != n_v:
            raise ValueError("malformed arena")
        kids = self._children()
        if len(kids[0]) != 1 or self.label[0] != 0:
            raise ValueError("root must have exactly one child and no label")
        labels = []
        for v in range(1, n_v):
            if not 0 <= self.parent[v] < n_v or self.parent[v] == v:
                raise ValueError("bad parent link")
            if kids[v]:
                if len(kids[v]) < 2 or self.label[v]:
                    raise ValueError("internal vertex with degree 2 or a label")
            else:
                labels.append(self.label[v])
        if sorted(labels) != list(range(1, len(labels) + 1)):
            raise ValueError("leaf labels must be 1..n")
        if self.length is not None:
            if len(self.length) != n_v or any(x <= 0 for x in self.length[1:]):
                raise ValueError("edge lengths must be strictly positive")

    def _children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.parent]
        for v, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(v)
        return kids

    # -- conversions ------------------------------------------------------
    @property
    def n(self) -> int:
        return sum(1 for v, lab in enumerate(self.label) if lab)

    def nested(self):
        kids = self._children()

        def rec(v):
            if not kids[v]:
                return self.label[v]
            return _canon(tuple(rec(c) for c in kids[v]))

        return rec(kids[0][0])

    @classmethod
    def from_nested(cls, t, lengths: dict | None = None) -> "LabelledTree":
        """Build from nested form; ``lengths`` maps id-paths to edge lengths.

        When ``lengths`` is given it must be a callable-free dict keyed by
        the nested subtree (after canonicalisation) giving the length of the
        edge above it; the root edge is keyed by the whole tree.
        """
        t = _canon(t)
        parent = [-1]
        label = [0]
        length = [0.0] if lengths is not None else None

        def rec(sub, p):
            v = len(parent)
            parent.append(p)
            label.append(sub if isinstance(sub, int) else 0)
            if length is not None:
                length.append(float(lengths[sub]))
            if not isinstance(sub, int):
                for c in sub:
                    rec(c, v)

        rec(t, 0)
        return cls(tuple(parent), tuple(label), None if length is None else tuple(length))

    @classmethod
    def single(cls) -> "LabelledTree":
        return cls((-1, 0), (0, 1))

    def key(self):
        """Canonical labelled encoding (hashable); independent of vertex ids."""
        if self.length is None:
            return self.nested()
        kids = self._children()
        below: list[frozenset] = [frozenset()] * len(self.parent)
        for v in reversed(_topo(self)):
            below[v] = frozenset([self.label[v]]) if self.label[v] else frozenset().union(*(below[c] for c in kids[v]))
        return self.nested(), frozenset((below[v], self.length[v]) for v in range(1, len(self.parent)))

    def __eq__(self, other):
        if not isinstance(other, LabelledTree):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    # -- JSON ---------------------------------------------------------------
    def to_json(self) -> dict:
        edges = []
        for v in range(1, len(self.parent)):
            e = [self.parent[v], v]
            if self.length is not None:
                e.append(self.length[v])
            edges.append(e)
        return {
            "root": 0,
            "edges": edges,
            "leaf_labels": {str(v): lab for v, lab in enumerate(self.label) if lab},
        }

    @classmethod
    def from_json(cls, data) -> "LabelledTree":
        if isinstance(data, str):
            data = json.loads(data)
        n_v = 1 + len(data["edges"])
        parent = [-1] * n_v
        length = [0.0] * n_v
        has_len = False
        for e in data["edges"]:
            parent[int(e[1])] = int(e[0])
            if len(e) > 2:
                has_len = True
                length[int(e[1])] = float(e[2])
        label = [0] * n_v
        for v, lab in data["leaf_labels"].items():
            label[int(v)] = int(lab)
        if int(data.get("root", 0)) != 0:
            raise ValueError("root must be vertex 0")
        return cls(tuple(parent), tuple(label), tuple(length) if has_len else None)


def _as_nested(t):
    return t.nested() if isinstance(t, LabelledTree) else _canon(t)


# ---------------------------------------------------------------------------
# operations


def first_split(t) -> PartitionN:
    """Label sets of the subtrees above the first branch point."""
    t = _as_nested(t)
    if isinstance(t, int):
        raise ValueError("a one-leaf tree has no branch point")
    return PartitionN.from_blocks(nested_leaves(c) for c in t)


def _remove(t, label):
    if isinstance(t, int):
        return None if t == label else t
    kids = [r for r in (_remove(c, label) for c in t) if r is not None]
    if len(kids) == 1:
        return kids[0]
    return tuple(kids)


def remove_leaf(t, label: int):
    """Delete a leaf and suppress the degree-2 vertex it leaves behind.

    Labels are kept; the result is nested form (or a LabelledTree when the
    input was one and the remaining labels are 1..n-1).
    """
    nested = _as_nested(t)
    leaves = nested_leaves(nested)
    if label not in leaves:
        raise KeyError(f"unknown label {label}")
    if len(leaves) < 2:
        raise ValueError("cannot remove the only leaf")
    out = _remove(nested, label)
    if not isinstance(out, int):
        out = _canon(out)
    if isinstance(t, LabelledTree) and sorted(nested_leaves(out)) == list(range(1, len(leaves))):
        return LabelledTree.from_nested(out)
    return out


def reduced_subtree(t, labels: Iterable[int]):
    """Subtree spanned by the root and the leaves in ``labels`` (nested form)."""
    keep = set(labels)
    if not keep:
        raise ValueError("empty label set")
    nested = _as_nested(t)
    missing = keep - set(nested_leaves(nested))
    if missing:
        raise KeyError(f"unknown labels {sorted(missing)}")

    def rec(s):
        if isinstance(s, int):
            return s if s in keep else None
        kids = [r for r in (rec(c) for c in s) if r is not None]
        if not kids:
            return None
        if len(kids) == 1:
            return kids[0]
        return tuple(kids)

    out = rec(nested)
    return out if isinstance(out, int) else _canon(out)


def leaf_depths(t) -> dict[int, float]:
    """Root-to-leaf distances; edge counts, or summed lengths if present."""
    if isinstance(t, LabelledTree):
        lens = t.length
        depth = [0.0] * len(t.parent)
        out = {}
        order = _topo(t)
        for v in order[1:]:
            step = 1.0 if lens is None else lens[v]
            depth[v] = depth[t.parent[v]] + step
            if t.label[v]:
                out[t.label[v]] = depth[v] if lens is not None else int(depth[v])
        return out
    out = {}

    def rec(s, d):
        if isinstance(s, int):
            out[s] = d
        else:
            for c in s:
                rec(c, d + 1)

    rec(_canon(t), 1)
    return out


def _topo(t: LabelledTree) -> list[int]:
    kids = t._children()
    order = [0]
    i = 0
    while i < len(order):
        order.extend(kids[order[i]])
        i += 1
    return order


def height(t) -> float:
    return max(leaf_depths(t).values())


def shape(t):
    """Canonical unlabelled encoding: a leaf is (), a branch point the sorted tuple of child shapes."""
    def rec(s):
        if isinstance(s, int):
            return ()
        return tuple(sorted(rec(c) for c in s))

    return rec(_as_nested(t))


# ---------------------------------------------------------------------------
# enumeration


def _insertions(t, label):
    """All trees obtained by inserting a new leaf into nested tree t."""
    # subdivide the edge above t (new branch point below the current one)
    yield (t, label)
    if isinstance(t, int):
        return
    # attach to the branch point at the top of t
    yield t + (label,)
    # recurse into each child
    for i, c in enumerate(t):
        for sub in _insertions(c, label):
            yield t[:i] + (sub,) + t[i + 1:]


def enumerate_trees(n: int, force: bool = False) -> list:
    """All nested trees in T_n (guarded at n <= 8 unless forced)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > TREE_GUARD and not force:
        raise ValueError(f"enumeration of T_{n} refused (guard n <= {TREE_GUARD})")
    level = [1]
    for m in range(2, n + 1):
        seen = {}
        for t in level:
            for s in _insertions(t, m):
                c = _canon(s) if not isinstance(s, int) else s
                seen.setdefault(c, None)
        level = list(seen)
    return level


# ---------------------------------------------------------------------------
# Newick


def newick_export(t, digits: int = 6) -> str:
    if isinstance(t, LabelledTree):
        kids = t._children()
        lens = t.length

        def rec(v):
            if kids[v]:
                order = sorted(kids[v], key=lambda c: _min_label(t, kids, c))
                body = "(" + ",".join(rec(c) for c in order) + ")"
            else:
                body = str(t.label[v])
            if lens is not None:
                body += ":" + _fmt(lens[v], digits)
            return body

        return rec(kids[0][0]) + ";"

    def rec_n(s):
        if isinstance(s, int):
            return str(s)
        return "(" + ",".join(rec_n(c) for c in s) + ")"

    return rec_n(_canon(t)) + ";"


def _fmt(x: float, digits: int) -> str:
    return f"{x:.{digits}g}"


def _min_label(t, kids, v) -> int:
    stack = [v]
    best = None
    while stack:
        u = stack.pop()
        if t.label[u]:
            best = t.label[u] if best is None else min(best, t.label[u])
        stack.extend(kids[u])
    return best


_TOKEN = re.compile(r"\s*([(),;:])\s*|\s*([^(),;:\s]+)\s*")


def parse_newick(text: str) -> LabelledTree:
    """Parse the Newick dialect written by :func:`newick_export`.

    The length of the top subtree, if present, becomes the root edge length.
    """
    tokens = [m.group(1) or m.group(2) for m in _TOKEN.finditer(text.strip())]
    pos = 0
    parent = [-1]
    label = [0]
    length: list[float] = [0.0]
    saw_len = False

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take():
        nonlocal pos
        tok = tokens[pos]
        pos += 1
        return tok

    def node(p):
        nonlocal saw_len
        v = len(parent)
        parent.append(p)
        label.append(0)
        length.append(1.0)
        if peek() == "(":
            take()
            node(v)
            while peek() == ",":
                take()
                node(v)
            if take() != ")":
                raise ValueError("unbalanced parentheses")
        else:
            label[v] = int(take())
        if peek() == ":":
            take()
            length[v] = float(take())
            saw_len = True
        return v

    node(0)
    if peek() != ";":
        raise ValueError("missing terminating ';'")
    return LabelledTree(tuple(parent), tuple(label), tuple(length) if saw_len else None)
