"""Continuous-time constructions.

``ctmc_genealogy`` runs the partition-valued chain restricted to [n]: each
block B waits an Exp(lambda_#B) time and then splits by the first split of
a freshly grown #B-leaf tree.  Singletons never split, so leaf edges are
unbounded; a leaf's depth is the time its singleton block is born.

``mass_frag_tree`` simulates a self-similar mass fragmentation where a block
of mass x splits at rate x^-gamma times the (truncated) dislocation mass, and
``brownian_heights`` is the same process for the binary Brownian measure,
vectorised over many independent trees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from ._rng import seed_to_int
from .laws import lambda_array
from .models import GrowthModel, grow
from .partitions import PartitionN
from .trees import LabelledTree, _canon, nested_leaves, shape

__all__ = [
    "TimedGenealogy",
    "ctmc_genealogy",
    "ctmc_batch",
    "thinning_identity",
    "MassFragNode",
    "mass_frag_tree",
    "BrownianNu",
    "brownian_nu_sampler",
    "brownian_heights",
    "dyadic_height_cdf",
]


# ---------------------------------------------------------------------------
# restricted partition chain


@dataclass
class TimedGenealogy:
    """Discrete tree plus the birth time and holding time of every split block.

    ``blocks`` maps each non-singleton block (a frozenset of labels) to
    (birth, hold); the block splits at birth + hold.
    """

    n: int
    tree: object  # nested form
    blocks: dict = field(default_factory=dict)

    def labelled_tree(self) -> LabelledTree:
        return LabelledTree.from_nested(self.tree) if self.n > 1 else LabelledTree.single()

    def shape(self):
        return shape(self.tree)

    def holds(self) -> list[tuple[int, float]]:
        """(block size, holding time) for every split block."""
        return [(len(b), h) for b, (_, h) in self.blocks.items()]

    def split_time(self, block) -> float:
        birth, hold = self.blocks[frozenset(block)]
        return birth + hold

    def leaf_depths(self) -> dict[int, float]:
        """Birth time of each singleton: the summed holds of the blocks above it."""
        out = {i: 0.0 for i in range(1, self.n + 1)}
        for b, (birth, hold) in self.blocks.items():
            for i in b:
                out[i] = max(out[i], birth + hold)
        return out

    def restrict(self) -> "TimedGenealogy":
        """Genealogy of the chain seen on [n-1].

        Blocks with the same trace on [n-1] merge, their holds add up, and a
        block whose trace is a singleton stops splitting.
        """
        if self.n < 2:
            raise ValueError("nothing to restrict")
        merged: dict = {}
        for b, (birth, hold) in self.blocks.items():
            trace = frozenset(i for i in b if i != self.n)
            if len(trace) < 2:
                continue
            if trace in merged:
                b0, h0 = merged[trace]
                merged[trace] = (min(b0, birth), h0 + hold)
            else:
                merged[trace] = (birth, hold)
        tree = _drop(self.tree, self.n)
        return TimedGenealogy(self.n - 1, tree, merged)

    def newick(self, digits: int = 6) -> str:
        """Newick with branch lengths; leaf edges are unbounded and carry none."""
        def rec(sub, parent_split):
            if isinstance(sub, int):
                return str(sub)
            b = frozenset(nested_leaves(sub))
            birth, hold = self.blocks[b]
            body = "(" + ",".join(rec(c, birth + hold) for c in sub) + ")"
            return f"{body}:{hold:.{digits}g}"

        if self.n == 1:
            return "(1);"
        return rec(self.tree, 0.0) + ";"

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "newick": self.newick(17),
            "blocks": [[sorted(b), birth, hold] for b, (birth, hold) in self.blocks.items()],
        }


def _drop(t, label):
    if isinstance(t, int):
        return None if t == label else t
    kids = [r for r in (_drop(c, label) for c in t) if r is not None]
    if len(kids) == 1:
        return kids[0]
    return _canon(tuple(kids))


def _split_from_arrays(parent, label) -> list[list[int]]:
    """Leaf-label blocks of the first branch point of an arena tree."""
    n_v = len(parent)
    kids: list[list[int]] = [[] for _ in range(n_v)]
    for v in range(1, n_v):
        kids[int(parent[v])].append(v)
    top = kids[0][0]
    out = []
    for c in kids[top]:
        stack, labs = [c], []
        while stack:
            u = stack.pop()
            if kids[u]:
                stack.extend(kids[u])
            else:
                labs.append(int(label[u]))
        out.append(labs)
    return out


def _sample_split(m: GrowthModel, size: int, seed: int) -> list[list[int]]:
    """First split of a fresh size-leaf tree, as blocks of 1..size."""
    if m.kernel_code is not None and not m.exact:
        from .kernels import grow_arrays

        parent, label = grow_arrays(m, size, seed)
        return _split_from_arrays(parent, label)
    t = grow(m, size, seed)
    return [nested_leaves(c) for c in t.nested()]


@lru_cache(maxsize=64)
def _lambdas(m: GrowthModel, lam2: float, n: int) -> np.ndarray:
    return lambda_array(m, lam2, max(n, 2))


def _assume(m: GrowthModel, n: int):
    for j in range(2, n):
        if float(m.g0(j)) >= 1:
            from .models import AssumptionError

            raise AssumptionError(f"g_{j}(0) = 1 for {m!r}")


def ctmc_genealogy(m: GrowthModel, n: int, lam2: float = 1.0, seed=None, rng=None) -> TimedGenealogy:
    """Genealogy of the restricted partition chain on [n]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return TimedGenealogy(1, 1, {})
    _assume(m, n)
    lam = _lambdas(m, float(lam2), n)
    rng = np.random.default_rng(seed_to_int(seed)) if rng is None else rng
    blocks: dict = {}

    def rec(labels: list[int], birth: float):
        if len(labels) == 1:
            return labels[0]
        k = len(labels)
        hold = float(rng.exponential(1.0 / lam[k]))
        while hold <= 0.0:  # measure-zero, but keep edges strictly positive
            hold = float(rng.exponential(1.0 / lam[k]))
        blocks[frozenset(labels)] = (birth, hold)
        parts = _sample_split(m, k, int(rng.integers(0, 1 << 63)))
        return tuple(rec([labels[i - 1] for i in sorted(p)], birth + hold) for p in parts)

    tree = rec(list(range(1, n + 1)), 0.0)
    return TimedGenealogy(n, _canon(tree), blocks)


def ctmc_batch(m: GrowthModel, n: int, samples: int, lam2: float = 1.0, seed=None):
    """Many genealogies from one master seed: (list of shapes-with-labels, holds by size)."""
    rng = np.random.default_rng(seed_to_int(seed))
    trees = []
    holds: dict[int, list[float]] = {}
    for _ in range(samples):
        g = ctmc_genealogy(m, n, lam2, rng=rng)
        trees.append(g.tree)
        for size, h in g.holds():
            holds.setdefault(size, []).append(h)
    return trees, {k: np.array(v) for k, v in holds.items()}


def thinning_identity(m: GrowthModel, n: int, lam2=1):
    """Pairs (lambda_k (1 - g_{k-1}(0)), lambda_{k-1}) for k = 3..n."""
    from .laws import lambda_seq

    lams = lambda_seq(m, lam2, n)
    return [(lams[k - 2] * (1 - m.g0(k - 1)), lams[k - 3]) for k in range(3, n + 1)]


# ---------------------------------------------------------------------------
# mass fragmentation


@dataclass
class MassFragNode:
    mass: float
    hold: float  # inf for a frozen leaf
    children: list = field(default_factory=list)

    def height(self) -> float:
        """Largest summed holding time from the root to a leaf (leaf holds excluded)."""
        best = 0.0
        stack = [(self, 0.0)]
        while stack:
            node, t = stack.pop()
            if not node.children:
                best = max(best, t)
                continue
            for c in node.children:
                stack.append((c, t + node.hold))
        return best

    def leaves(self) -> list["MassFragNode"]:
        out, stack = [], [self]
        while stack:
            node = stack.pop()
            if node.children:
                stack.extend(node.children)
            else:
                out.append(node)
        return out

    def to_json(self) -> dict:
        return {
            "mass": self.mass,
            "hold": None if math.isinf(self.hold) else self.hold,
            "children": [c.to_json() for c in self.children],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def mass_frag_tree(gamma: float, nu, eps: float | None = None, mass_floor: float = 1e-3, seed=None,
                   mass: float = 1.0, max_nodes: int = 5_000_000) -> MassFragNode:
    """Recursive simulation down to ``mass_floor``.

    ``nu`` has a finite ``total`` and a ``sample(rng)`` method returning a
    mass vector s (decreasing, summing to 1); a callable returning s with an
    explicit ``total`` attribute also works.  Blocks at or below the floor
    become leaves.  A draw that loses mass to dust raises ValueError.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if mass_floor <= 0:
        raise ValueError("mass_floor must be positive")
    if eps is not None and hasattr(nu, "with_eps"):
        nu = nu.with_eps(eps)
    total = float(nu.total)
    if not total > 0 or not math.isfinite(total):
        raise ValueError("nu must have finite positive mass")
    draw: Callable = nu.sample if hasattr(nu, "sample") else nu
    rng = np.random.default_rng(seed_to_int(seed))
    root = MassFragNode(mass, math.inf)
    stack = [root]
    count = 1
    while stack:
        node = stack.pop()
        if node.mass <= mass_floor:
            continue
        node.hold = float(rng.exponential(node.mass ** gamma / total))
        s = np.asarray(draw(rng), dtype=float)
        if abs(float(s.sum()) - 1.0) > 1e-9:
            raise ValueError(f"nu drew frequencies summing to {s.sum():.6g}; dust is not supported")
        for si in s:
            if si > 0:
                child = MassFragNode(node.mass * float(si), math.inf)
                node.children.append(child)
                stack.append(child)
        count += len(node.children)
        if count > max_nodes:
            raise MemoryError("mass fragmentation exceeded max_nodes; raise mass_floor or eps")
    return root


@dataclass(frozen=True)
class BrownianNu:
    """Binary measure scale * (s(1-s))^-3/2 ds on (1/2, 1-eps], on the larger mass s.

    scale = sqrt(2/pi) is the Brownian CRT normalisation; scale = 1/pi
    matches AlphaTheta(1/2, 1/2) grown with lambda_2 = 1.
    """

    eps: float
    scale: float = math.sqrt(2.0 / math.pi)

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")

    @staticmethod
    def _antider(s):
        return 2.0 * (2.0 * s - 1.0) / np.sqrt(s * (1.0 - s))

    @property
    def total(self) -> float:
        return self.scale * float(self._antider(1.0 - self.eps))

    def density(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0.5) & (s <= 1.0 - self.eps)
        return np.where(inside, self.scale * (s * (1.0 - s)) ** -1.5, 0.0)

    def with_eps(self, eps: float) -> "BrownianNu":
        return BrownianNu(eps, self.scale)

    def sample_large(self, rng, size=None):
        """Larger mass s1 by inverting the antiderivative."""
        g = rng.random(size) * float(self._antider(1.0 - self.eps))
        d = g / np.sqrt(16.0 + g * g)
        return 0.5 * (1.0 + d)

    def sample(self, rng):
        s1 = float(self.sample_large(rng))
        return np.array([s1, 1.0 - s1])


def brownian_nu_sampler(eps: float = 1e-3, scale: float = math.sqrt(2.0 / math.pi)) -> BrownianNu:
    return BrownianNu(eps, scale)


def brownian_heights(samples: int, gamma: float = 0.5, eps: float = 1e-3, mass_floor: float = 1e-4,
                     scale: float = 1.0 / math.pi, seed=None) -> np.ndarray:
    """Heights of ``samples`` independent binary mass-fragmentation trees.

    All live blocks of all trees advance one generation per numpy step.
    """
    nu = BrownianNu(eps, scale)
    total = nu.total
    rng = np.random.default_rng(seed_to_int(seed))
    heights = np.zeros(samples)
    tree = np.arange(samples)
    mass = np.ones(samples)
    t = np.zeros(samples)
    while tree.size:
        live = mass > mass_floor
        np.maximum.at(heights, tree[~live], t[~live])
        tree, mass, t = tree[live], mass[live], t[live]
        if not tree.size:
            break
        t = t + rng.exponential(1.0, tree.size) * mass ** gamma / total
        s1 = nu.sample_large(rng, tree.size)
        tree = np.concatenate([tree, tree])
        t = np.concatenate([t, t])
        mass = np.concatenate([mass * s1, mass * (1.0 - s1)])
    return heights


def dyadic_height_cdf(gamma: float, rate: float, levels: int, h_max: float, points: int = 4001):
    """CDF of the height of the dyadic tree with ``levels`` split generations.

    The root (mass 1) holds Exp(rate); a mass-2^-k block holds
    Exp(rate 2^(k gamma)).  Computed backwards by convolving the hold density
    with the squared CDF of the subtree height on a uniform grid.
    """
    h = np.linspace(0.0, h_max, points)
    dh = h[1] - h[0]
    cdf = np.ones(points)  # a leaf has height 0
    for k in range(levels - 1, -1, -1):
        r = rate * 2.0 ** (k * gamma)
        sq = cdf * cdf
        # F_k(x) = int_0^x r e^{-r u} sq(x - u) du, trapezoid on the grid
        dens = r * np.exp(-r * h)
        conv = np.convolve(dens, sq)[:points] * dh
        conv -= 0.5 * dh * (dens[0] * sq + dens * sq[0])
        cdf = np.clip(conv, 0.0, 1.0)
    return h, cdf
