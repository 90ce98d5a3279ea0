"""Partitions of [n] and prefix-generated partitions of the natural numbers.

Blocks are always stored as sorted tuples and ordered by their least
element, so block 1 is the block containing 1.  A :class:`PartitionFamily`
describes a partition of N through its restrictions to [n]; two kinds
exist: seeded-random paintboxes and deterministic Step-A_x programs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from ._rational import as_number, to_text

__all__ = [
    "PartitionN",
    "PartitionFamily",
    "RuleFamily",
    "PaintboxFamily",
    "OrderedPaintboxFamily",
    "StepFamily",
    "StepBatch",
    "restrict",
    "relabel",
    "empirical_freqs",
    "decreasing_rearrangement",
    "paintbox_sample",
    "ordered_paintbox_sample",
    "step_Ax",
    "set_partitions",
    "integer_partitions",
    "build_good_family",
    "build_evil_family_b",
    "greedy_window_schedule",
    "build_mixed_schedule",
    "MixedSchedule",
]


@dataclass(frozen=True)
class PartitionN:
    """Ordered partition of [n]; blocks sorted and indexed by least element."""

    n: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        seen = []
        for b in self.blocks:
            if not b:
                raise ValueError("empty block")
            seen.extend(b)
        if sorted(seen) != list(range(1, self.n + 1)):
            raise ValueError(f"blocks do not partition [{self.n}]: {self.blocks}")
        mins = [b[0] for b in self.blocks]
        if any(list(b) != sorted(b) for b in self.blocks) or mins != sorted(mins):
            raise ValueError("blocks must be sorted and ordered by least element")

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], n: int | None = None) -> "PartitionN":
        bl = [tuple(sorted(int(x) for x in b)) for b in blocks]
        bl = [b for b in bl if b]
        bl.sort(key=lambda b: b[0])
        if n is None:
            n = sum(len(b) for b in bl)
        return cls(n, tuple(bl))

    @classmethod
    def one(cls, n: int) -> "PartitionN":
        return cls(n, (tuple(range(1, n + 1)),))

    @classmethod
    def singletons(cls, n: int) -> "PartitionN":
        return cls(n, tuple((i,) for i in range(1, n + 1)))

    @classmethod
    def from_rgs(cls, rgs: Sequence[int]) -> "PartitionN":
        """From a restricted-growth string (0-based block index of 1, 2, ...)."""
        k = max(rgs) + 1 if rgs else 0
        blocks: list[list[int]] = [[] for _ in range(k)]
        for i, r in enumerate(rgs, start=1):
            blocks[r].append(i)
        return cls(len(rgs), tuple(tuple(b) for b in blocks))

    # -- basic queries -------------------------------------------------
    @property
    def k(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)

    def is_one(self) -> bool:
        return len(self.blocks) == 1

    def block_of(self, i: int) -> int:
        """0-based index of the block containing i."""
        for idx, b in enumerate(self.blocks):
            if i in b:
                return idx
        raise KeyError(i)

    def rgs(self) -> tuple[int, ...]:
        out = [0] * self.n
        for idx, b in enumerate(self.blocks):
            for i in b:
                out[i - 1] = idx
        return tuple(out)

    def restrict(self, m: int) -> "PartitionN":
        if not 1 <= m <= self.n:
            raise ValueError("restriction level out of range")
        return PartitionN.from_blocks(([i for i in b if i <= m] for b in self.blocks), m)

    def insert(self, i: int) -> "PartitionN":
        """Add element n+1 into block i (1-based); i = k+1 opens a new block."""
        if not 1 <= i <= self.k + 1:
            raise ValueError("insertion index out of range")
        new = [list(b) for b in self.blocks]
        if i == self.k + 1:
            new.append([self.n + 1])
        else:
            new[i - 1].append(self.n + 1)
        return PartitionN(self.n + 1, tuple(tuple(b) for b in new))

    # -- serialisation --------------------------------------------------
    def to_json(self) -> dict:
        return {"n": self.n, "blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_json(cls, data) -> "PartitionN":
        if isinstance(data, str):
            data = json.loads(data)
        return cls.from_blocks(data["blocks"], int(data["n"]))

    def __str__(self) -> str:
        return "(" + ",".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks) + ")"


# ---------------------------------------------------------------------------
# enumeration helpers


def set_partitions(n: int) -> Iterator[PartitionN]:
    """All partitions of [n] via restricted-growth strings."""
    if n < 1:
        return
    rgs = [0] * n

    def rec(i: int, mx: int):
        if i == n:
            yield PartitionN.from_rgs(rgs)
            return
        for v in range(mx + 2):
            rgs[i] = v
            yield from rec(i + 1, max(mx, v))

    rgs[0] = 0
    yield from rec(1, 0)


def integer_partitions(n: int, largest: int | None = None) -> Iterator[tuple[int, ...]]:
    """Non-increasing integer partitions of n."""
    if largest is None:
        largest = n
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in integer_partitions(n - first, first):
            yield (first,) + rest


# ---------------------------------------------------------------------------
# families (partitions of N given by their prefixes)


class PartitionFamily:
    """A consistent rule n -> Gamma^[n].

    Subclasses implement :meth:`labels`, which returns a block key for each
    of 1..n; keys are arbitrary hashables (the same key means same block).
    ``first_limit`` and ``ranked_limit`` optionally declare asymptotic
    frequencies.
    """

    first_limit: float | Fraction | None = None
    ranked_limit: tuple | None = None

    def labels(self, n: int) -> list:
        raise NotImplementedError

    def restrict(self, n: int) -> PartitionN:
        keys = self.labels(n)
        groups: dict = {}
        for i, key in enumerate(keys, start=1):
            groups.setdefault(key, []).append(i)
        return PartitionN.from_blocks(groups.values(), n)

    def first_block_size(self, n: int) -> int:
        return len(self.restrict(n).blocks[0])

    def ranked_counts(self, n: int) -> list[int]:
        return sorted(self.restrict(n).sizes, reverse=True)


class RuleFamily(PartitionFamily):
    """Deterministic family from a map i -> block key (e.g. parity)."""

    def __init__(self, key: Callable[[int], object], first_limit=None, ranked_limit=None, name: str = "rule"):
        self.key = key
        self.first_limit = first_limit
        self.ranked_limit = ranked_limit
        self.name = name

    def labels(self, n: int) -> list:
        return [self.key(i) for i in range(1, n + 1)]

    @classmethod
    def odds_evens(cls) -> "RuleFamily":
        return cls(lambda i: i % 2, Fraction(1, 2), (Fraction(1, 2), Fraction(1, 2)), "odds_evens")

    @classmethod
    def one(cls) -> "RuleFamily":
        return cls(lambda i: 0, Fraction(1), (Fraction(1),), "one")

    @classmethod
    def singletons(cls) -> "RuleFamily":
        return cls(lambda i: i, Fraction(0), (), "singletons")


class _LazyColours(PartitionFamily):
    """Shared memo for families drawn element by element from a stream."""

    def __init__(self, seed):
        self._rng = np.random.default_rng(seed)
        self._colours: list = []

    def _draw(self, i: int):  # pragma: no cover - abstract
        raise NotImplementedError

    def labels(self, n: int) -> list:
        while len(self._colours) < n:
            self._colours.append(self._draw(len(self._colours) + 1))
        return self._colours[:n]


class PaintboxFamily(_LazyColours):
    """Kingman paintbox: colour k with probability s_k, dust otherwise."""

    def __init__(self, s: Sequence[float], seed=None):
        super().__init__(seed)
        self.s = np.asarray([float(x) for x in s], dtype=float)
        if np.any(self.s < 0) or self.s.sum() > 1 + 1e-12:
            raise ValueError("paintbox frequencies must be non-negative with sum <= 1")
        self._cum = np.cumsum(self.s)
        self.first_limit = None
        self.ranked_limit = tuple(sorted(self.s.tolist(), reverse=True))

    def _draw(self, i: int):
        u = self._rng.random()
        k = int(np.searchsorted(self._cum, u, side="right"))
        if k >= len(self.s):
            return ("dust", i)
        return k


class OrderedPaintboxFamily(_LazyColours):
    """Element 1 gets colour 1; every later element joins it with probability u."""

    def __init__(self, u: float, seed=None):
        if not 0 < u < 1:
            raise ValueError("u must lie in (0, 1)")
        super().__init__(seed)
        self.u = float(u)
        self.first_limit = self.u
        self.ranked_limit = (max(self.u, 1 - self.u), min(self.u, 1 - self.u))

    def _draw(self, i: int):
        if i == 1:
            return 1
        return 1 if self._rng.random() < self.u else 2


def _first_block_after(n0: int, b0: int, p: int, q: int, n):
    """Block-1 size at level n after applying Step A_{p/q} from level n0.

    Closed form of the Step-A_x recursion: starting on or above the
    balanced line floor(x(n-1)) + 1 the block waits for the line, starting
    below it the block absorbs every new element until it meets the line.
    Works elementwise on numpy integer arrays.
    """
    line0 = (p * (n0 - 1)) // q + 1
    line = (p * (n - 1)) // q + 1
    above = b0 >= line0
    return np.where(above, np.maximum(b0, line), np.minimum(b0 + (n - n0), line))


class StepFamily(PartitionFamily):
    """Deterministic two-block family driven by Step A_x phases.

    ``start`` is the level j where Gamma^[j] = ([j-1], {j}); ``phases`` is a
    list of (x, until) pairs: A_x is applied to go from level m to m+1 for
    every m < until (``until=None`` means forever).
    """

    def __init__(self, start: int, phases: Sequence[tuple], name: str = "step"):
        if start < 2:
            raise ValueError("start level must be >= 2")
        self.start = int(start)
        self.phases = [(Fraction(x), None if u is None else int(u)) for x, u in phases]
        if not self.phases or self.phases[-1][1] is not None:
            raise ValueError("the last phase must run forever")
        self.name = name
        x_final = self.phases[-1][0]
        self.first_limit = x_final
        self.ranked_limit = (max(x_final, 1 - x_final), min(x_final, 1 - x_final))
        self._memo: list[int] = []

    def _boundaries(self):
        """Scalar states (level, b1, x, until) at the start of each phase."""
        out = []
        level, b = self.start, self.start - 1
        for x, until in self.phases:
            out.append((level, b, x, until))
            if until is None:
                break
            if until > level:
                b = int(_first_block_after(level, b, x.numerator, x.denominator, until))
                level = until
        return out

    def first_block_sizes(self, levels) -> np.ndarray:
        """Vectorised block-1 sizes at an array of levels."""
        n = np.asarray(levels, dtype=np.int64)
        out = n.copy()
        for level, b, x, until in self._boundaries():
            mask = n >= level
            if until is not None:
                mask &= n <= until
            if mask.any():
                out[mask] = _first_block_after(level, b, x.numerator, x.denominator, n[mask])
        return out

    def first_block_size(self, n: int) -> int:
        return int(self.first_block_sizes(np.array([n]))[0])

    def labels(self, n: int) -> list:
        # replay the recursion once and memoise membership of block 1
        memo = self._memo
        b = sum(1 for v in memo if v == 1)
        while len(memo) < n:
            m = len(memo)
            if m + 1 < self.start:
                v = 1
            elif m + 1 == self.start:
                v = 2
            else:
                v = 2 if Fraction(b, m) > self._phase_at(m) else 1
            memo.append(v)
            b += v == 1
        return memo[:n]

    def _phase_at(self, m: int) -> Fraction:
        for x, until in self.phases:
            if until is None or m < until:
                return x
        return self.phases[-1][0]

    def to_json(self) -> dict:
        return {
            "start": self.start,
            "phases": [{"x": to_text(x), "until": u} for x, u in self.phases],
        }

    @classmethod
    def from_json(cls, data) -> "StepFamily":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(int(data["start"]), [(as_number(p["x"]), p.get("until")) for p in data["phases"]])


@dataclass
class StepBatch:
    """Vectorised block-1 sizes for many two-phase Step-A_x families.

    Family i starts at level ``start[i]`` with ([start-1], {start}), runs
    A_{p1/q1} for levels below ``switch[i]`` and A_{p2/q2} afterwards.
    """

    start: np.ndarray
    p1: np.ndarray
    q1: np.ndarray
    switch: np.ndarray
    p2: np.ndarray
    q2: np.ndarray

    def first_block_sizes(self, n: int) -> np.ndarray:
        """Block-1 sizes at level n (families with start > n give n)."""
        start = self.start
        live = start <= n
        out = np.full(start.shape, n, dtype=np.int64)
        if not live.any():
            return out
        s = start[live]
        b0 = s - 1
        sw = np.maximum(self.switch[live], s)
        n1 = np.minimum(n, sw)
        b = _first_block_after(s, b0, self.p1[live], self.q1[live], n1)
        later = n > sw
        if later.any():
            b2 = _first_block_after(sw, b, self.p2[live], self.q2[live], n)
            b = np.where(later, b2, b)
        out[live] = b
        return out

    def __len__(self) -> int:
        return len(self.start)


# ---------------------------------------------------------------------------
# elementary operations


def restrict(fam: PartitionFamily, n: int) -> PartitionN:
    if n < 1:
        raise ValueError("n must be >= 1")
    return fam.restrict(n)


def relabel(blocks: Iterable[Iterable[int]]) -> PartitionN:
    """Map a partition of a finite set B onto [#B] by the increasing bijection."""
    bl = [sorted(int(x) for x in b) for b in blocks]
    ground = sorted(x for b in bl for x in b)
    if len(set(ground)) != len(ground):
        raise ValueError("blocks overlap")
    rank = {x: i + 1 for i, x in enumerate(ground)}
    return PartitionN.from_blocks(([rank[x] for x in b] for b in bl), len(ground))


def empirical_freqs(pi: PartitionN) -> tuple[Fraction, ...]:
    return tuple(Fraction(len(b), pi.n) for b in pi.blocks)


def decreasing_rearrangement(seq: Iterable) -> tuple:
    """Non-increasing rearrangement of a finitely supported [0,1] sequence.

    Zero entries are dropped (they are the implicit zero tail).
    """
    vals = list(seq)
    for v in vals:
        if not 0 <= v <= 1:
            raise ValueError(f"entry {v!r} outside [0, 1]")
    return tuple(sorted((v for v in vals if v > 0), reverse=True))


def paintbox_sample(s: Sequence[float], n: int, seed=None) -> PartitionN:
    return PaintboxFamily(s, seed).restrict(n)


def ordered_paintbox_sample(u: float, n: int, seed=None) -> PartitionN:
    return OrderedPaintboxFamily(u, seed).restrict(n)


def step_Ax(pi: PartitionN, x) -> PartitionN:
    """One Step A_x from level n to n+1 on a partition with at most two blocks."""
    if pi.k > 2:
        raise ValueError("Step A_x acts on partitions with at most two blocks")
    x = Fraction(x) if not isinstance(x, float) else x
    b1 = len(pi.blocks[0])
    if Fraction(b1, pi.n) > x:
        return pi.insert(2) if pi.k == 2 else pi.insert(pi.k + 1)
    return pi.insert(1)


# ---------------------------------------------------------------------------
# constructive atom families for the step-rule examples


def _check_gamma(gamma):
    g = as_number(gamma) if isinstance(gamma, str) else gamma
    if not 0 < g < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return g


def build_good_family(j: int, gamma=None) -> StepFamily:
    """Gamma(j): A_{x} from ([j-1], {j}) with x = 1 - 1/j."""
    if gamma is not None:
        _check_gamma(gamma)
    return StepFamily(j, [(Fraction(j - 1, j), None)], name=f"good{j}")


def build_evil_family_b(j: int, a_j: int) -> StepFamily:
    """Gamma(j) that first sits near 1/2 (A_{1/2} below a_j), then A_{1-1/j}."""
    return StepFamily(j, [(Fraction(1, 2), a_j), (Fraction(j - 1, j), None)], name=f"half{j}")


def _weights_float(gamma: float, j_max: int) -> np.ndarray:
    j = np.arange(j_max + 1, dtype=float)
    w = np.zeros(j_max + 1)
    w[2:] = gamma * j[2:] ** (gamma - 1.0)
    return w


def greedy_window_schedule(gamma, horizon: int, weights: Callable[[int], float] | None = None):
    """Greedy release levels a_j keeping the active window weight in (1, 2].

    Index i is active at level n when 2i <= n <= a_i.  Windows are released
    oldest-first as soon as dropping the oldest still leaves weight > 1.
    Returns (a, onset): a dict j -> a_j for released indices (others are
    still active at ``horizon``) and the first level with window weight > 1.
    """
    g = float(_check_gamma(gamma))
    if weights is None:
        wts = _weights_float(g, horizon // 2 + 2)
        weights = lambda i: float(wts[i])  # noqa: E731
    active: list[int] = []
    total = 0.0
    a: dict[int, int] = {}
    onset = None
    for n in range(4, horizon + 1):
        if n % 2 == 0:
            i = n // 2
            active.append(i)
            total += weights(i)
        while len(active) > 1 and total - weights(active[0]) > 1.0:
            old = active.pop(0)
            total -= weights(old)
            a[old] = n - 1
        if onset is None and total > 1.0:
            onset = n
        if total > 2.0:
            raise RuntimeError("window weight exceeded 2; schedule infeasible")
    return a, onset


@dataclass
class MixedSchedule:
    """Good/evil bookkeeping of the mixed construction up to a horizon."""

    gamma: float
    horizon: int
    kind: dict = field(default_factory=dict)      # j -> "good" | "evil"
    release: dict = field(default_factory=dict)   # j -> a_j for released evil
    rounds: list = field(default_factory=list)    # dicts with e, j, k, l

    def family(self, j: int) -> StepFamily:
        x = Fraction(j - 1, j)
        if self.kind.get(j, "good") == "good":
            return StepFamily(j, [(x, None)], name=f"good{j}")
        a = self.release.get(j)
        if a is None:
            return StepFamily(j, [(1 - x, None)], name=f"evil{j}")
        return StepFamily(j, [(1 - x, a), (x, None)], name=f"evil{j}")

    def batch(self, j_max: int | None = None) -> StepBatch:
        j_max = self.horizon if j_max is None else j_max
        js = np.arange(2, j_max + 1, dtype=np.int64)
        evil = np.array([self.kind.get(int(j), "good") == "evil" for j in js])
        far = np.int64(np.iinfo(np.int64).max // 4)
        switch = np.array([self.release.get(int(j), far) for j in js], dtype=np.int64)
        switch = np.where(evil, switch, js)
        return StepBatch(
            start=js,
            p1=np.where(evil, 1, js - 1).astype(np.int64),
            q1=js.copy(),
            switch=switch,
            p2=js - 1,
            q2=js.copy(),
        )


def build_mixed_schedule(gamma, horizon: int, tol: float = 0.01) -> MixedSchedule:
    """Good/evil schedule for the mixed step-rule construction up to ``horizon``.

    Weights are lambda_j - lambda_{j-1} = gamma j^(gamma-1).  Two evil
    atoms (2 and 3) open the construction, followed by good atoms up to
    l = 3 / (1 - x3) = 9.  Each round releases the smallest parked evil
    index e at level j, parks the new evil atoms j..k where k is the first
    index whose accumulated weight since j reaches the weight of e, and
    fills with good atoms until every tracked atom sits within relative
    ``tol`` of its target frequency.
    """
    g = float(_check_gamma(gamma))
    w = _weights_float(g, horizon + 2)
    lam = np.cumsum(w)
    sched = MixedSchedule(gamma=g, horizon=horizon)
    sched.kind[2] = sched.kind[3] = "evil"
    ell = 9  # 3 / (1 - x^(3)) with x^(3) = 2/3
    for j in range(4, min(ell, horizon) + 1):
        sched.kind[j] = "good"
    parked = [2, 3]
    j_m = ell + 1
    while j_m <= horizon:
        e = parked.pop(0)
        sched.release[e] = j_m
        k = j_m
        while k < horizon + 1 and lam[k] - lam[j_m] < w[e]:
            k += 1
        k = min(k, horizon)
        for i in range(j_m, k + 1):
            sched.kind[i] = "evil"
        fam_e = sched.family(e)
        fams = [(i, sched.family(i)) for i in range(j_m, k + 1)]
        x_e = 1.0 - 1.0 / e
        ell_m = None
        chunk = 4096
        for lo in range(k, horizon + 1, chunk):
            lev = np.arange(lo, min(lo + chunk, horizon + 1), dtype=np.int64)
            ok = np.abs(fam_e.first_block_sizes(lev) / lev - x_e) <= tol * x_e
            for i, f in fams:
                if not ok.any():
                    break
                ok &= np.abs(f.first_block_sizes(lev) / lev - 1.0 / i) <= tol / i
            if ok.any():
                ell_m = int(lev[np.argmax(ok)])
                break
        stop = horizon if ell_m is None else ell_m
        for i in range(k + 1, stop + 1):
            sched.kind[i] = "good"
        sched.rounds.append({"e": e, "j": j_m, "k": k, "l": ell_m})
        parked.extend(range(j_m, k + 1))
        if ell_m is None:
            break
        j_m = ell_m + 1
    return sched
