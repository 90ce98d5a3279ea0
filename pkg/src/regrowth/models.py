"""Growth rules and the recursive insertion procedure.

A growth rule supplies, for a subtree with ``n`` leaves whose first split
is ``pi = (B_1, ..., B_k)``, the probabilities of the insertion events

* ``0``     -- a new branch point is created below the first branch point,
* ``i<=k``  -- the new leaf goes into the i-th subtree (recursion),
* ``k+1``   -- the new leaf is attached directly to the first branch point.

Parameters given as ints, Fractions or ``"p/q"`` strings keep the model in
exact rational mode; any float parameter switches it to double precision.
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Sequence

from ._rational import Number, as_number, gamma_ratio, to_text
from ._rng import SplitMix64
from .partitions import PartitionN
from .trees import LabelledTree

__all__ = [
    "GrowthModel",
    "Ford",
    "AlphaGamma",
    "AlphaTheta",
    "PoissonDirichlet",
    "FromKappa",
    "AssumptionError",
    "gibbs_norm",
    "growth_probs",
    "grow_step",
    "grow",
    "grow_sequence",
    "model_from_json",
]

# Assumption (A) is checked up to this size at construction.
CHECK_HORIZON = 64


class AssumptionError(ValueError):
    """Raised when g_j(0) = 1 for some j (the subtree would never split)."""


def _params(values, exact=True):
    out = [as_number(v, exact) for v in values]
    if any(isinstance(v, float) for v in out):
        out = [float(v) for v in out]
    return out


class GrowthModel:
    """Base class; subclasses implement :meth:`g0` and :meth:`_probs`."""

    kind = "abstract"
    #: kernel code understood by the compiled grower (None: Python only)
    kernel_code: int | None = None

    def __init__(self):
        self._check_assumption()

    # -- interface ---------------------------------------------------------
    @property
    def exact(self) -> bool:
        return not any(isinstance(v, float) for v in self.params().values())

    def params(self) -> dict:
        raise NotImplementedError

    def g0(self, n: int) -> Number:
        raise NotImplementedError

    def _probs(self, n: int, sizes: Sequence[int]) -> list:
        """Event probabilities from the block sizes alone."""
        raise NotImplementedError

    def probs_for(self, pi: PartitionN) -> list:
        if not self.exact:
            return self._probs(pi.n, pi.sizes)
        # rational vectors are reused heavily by the exact-law tables
        cache = self.__dict__.setdefault("_probs_cache", {})
        key = (pi.n, pi.sizes)
        if key not in cache:
            cache[key] = self._probs(pi.n, pi.sizes)
        return list(cache[key])

    def as_float(self) -> "GrowthModel":
        return type(self)(**{k: float(v) for k, v in self.params().items()})

    # -- helpers -----------------------------------------------------------
    def _zero(self):
        return 0.0 if not self.exact else Fraction(0)

    def _check_assumption(self):
        for j in range(2, CHECK_HORIZON + 1):
            g = self.g0(j)
            if g >= 1:
                raise AssumptionError(
                    f"{self.kind}{self.params()}: g_{j}(0) = {g} violates g_j(0) < 1"
                )
            if g < 0:
                raise ValueError(f"{self.kind}{self.params()}: negative g_{j}(0)")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        out.update({k: to_text(v) for k, v in self.params().items()})
        return out

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={to_text(v)}" for k, v in self.params().items())
        return f"{type(self).__name__}({inner})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(self.params().items())))


class AlphaGamma(GrowthModel):
    kind = "alpha_gamma"
    kernel_code = 0

    def __init__(self, alpha, gamma):
        self.alpha, self.gamma = _params([alpha, gamma])
        if not 0 <= self.gamma <= self.alpha <= 1:
            raise ValueError(f"alpha-gamma needs 0 <= gamma <= alpha <= 1, got {alpha}, {gamma}")
        super().__init__()

    def params(self):
        return {"alpha": self.alpha, "gamma": self.gamma}

    def kernel_args(self):
        return float(self.alpha), float(self.gamma)

    def g0(self, n):
        return self.gamma / (n - self.alpha)

    def _probs(self, n, sizes):
        a, den = self.alpha, n - self.alpha
        k = len(sizes)
        return [self.gamma / den, *[(b - a) / den for b in sizes], ((k - 1) * a - self.gamma) / den]


class Ford(AlphaGamma):
    """Binary alpha-model; identical formulas to AlphaGamma(alpha, alpha)."""

    kind = "ford"

    def __init__(self, alpha):
        (alpha,) = _params([alpha])
        if not 0 <= alpha <= 1:
            raise ValueError(f"Ford's model needs 0 <= alpha <= 1, got {alpha}")
        super().__init__(alpha, alpha)

    def params(self):
        return {"alpha": self.alpha}


class AlphaTheta(GrowthModel):
    """Binary model with an ordered-beta dislocation measure."""

    kind = "alpha_theta"
    kernel_code = 1

    def __init__(self, alpha, theta):
        self.alpha, self.theta = _params([alpha, theta])
        if not 0 <= self.alpha <= 1 or self.theta < 0:
            raise ValueError(f"alpha-theta needs 0 <= alpha <= 1 and theta >= 0, got {alpha}, {theta}")
        super().__init__()

    def params(self):
        return {"alpha": self.alpha, "theta": self.theta}

    def kernel_args(self):
        return float(self.alpha), float(self.theta)

    def g0(self, n):
        return self.alpha / (n - 1 + self.theta)

    def _probs(self, n, sizes):
        den = n - 1 + self.theta
        out = [self.alpha / den, (sizes[0] - 1 + self.theta) / den]
        if len(sizes) == 2:
            out.append((sizes[1] - self.alpha) / den)
        else:
            # null partitions under this model: spread the block-2 weight
            # over the non-first blocks so the vector still sums to one
            rest = n - sizes[0]
            out.extend(b * (rest - self.alpha) / rest / den for b in sizes[1:])
        out.append(self._zero())
        return out


class PoissonDirichlet(GrowthModel):
    """Exchangeable Gibbs model; normalisers from the c(n) recursion."""

    kind = "poisson_dirichlet"
    kernel_code = 2

    def __init__(self, alpha, theta):
        self.alpha, self.theta = _params([alpha, theta])
        if not 0 <= self.alpha < 1 or self.theta < -2 * self.alpha:
            raise ValueError(f"Poisson-Dirichlet needs 0 <= alpha < 1, theta >= -2 alpha, got {alpha}, {theta}")
        self._c = [None, None, 1 if self.exact else 1.0]
        # float mode: q_n = w_n / c(n) and r_n = c(n) / c(n+1)
        self._q = [None, None, 1.0 - float(self.alpha)]
        self._r: list = [None, None]
        super().__init__()

    def params(self):
        return {"alpha": self.alpha, "theta": self.theta}

    def kernel_args(self):
        return float(self.alpha), float(self.theta)

    def c(self, n: int):
        while len(self._c) <= n:
            m = len(self._c) - 1
            self._c.append((m + self.theta) * self._c[m] + gamma_ratio(m, self.alpha))
        return self._c[n]

    def ratios(self, n: int):
        """(g_n(0), c(n)/c(n+1)) in overflow-free float form."""
        while len(self._r) <= n:
            m = len(self._r)
            r = 1.0 / ((m + float(self.theta)) + self._q[m])
            self._r.append(r)
            self._q.append((m - float(self.alpha)) * self._q[m] * r)
        return self._q[n] * self._r[n], self._r[n]

    def tables(self, n_max: int):
        import numpy as np

        self.ratios(n_max)
        g0 = np.zeros(n_max + 1)
        r = np.zeros(n_max + 1)
        for m in range(2, n_max + 1):
            g0[m], r[m] = self._q[m] * self._r[m], self._r[m]
        return g0, r

    def g0(self, n):
        if self.exact:
            return gamma_ratio(n, self.alpha) / self.c(n + 1)
        return self.ratios(n)[0]

    def _probs(self, n, sizes):
        k = len(sizes)
        if self.exact:
            g0 = gamma_ratio(n, self.alpha) / self.c(n + 1)
            r = self.c(n) / self.c(n + 1)
        else:
            g0, r = self.ratios(n)
        a = self.alpha
        return [g0, *[(b - a) * r for b in sizes], (k * a + self.theta) * r]


class FromKappa(GrowthModel):
    """Growth rule recovered from a dislocation measure's cylinder masses."""

    kind = "from_kappa"

    def __init__(self, measure):
        self.measure = measure
        super().__init__()

    @property
    def exact(self):
        return getattr(self.measure, "exact", False)

    def params(self):
        return {}

    def to_json(self):
        return {"kind": self.kind, "measure": self.measure.to_json()}

    def _check_assumption(self):
        for j in range(2, min(CHECK_HORIZON, 12) + 1):
            if self.g0(j) >= 1:
                raise AssumptionError(f"measure gives g_{j}(0) = 1")

    def g0(self, n):
        from .laws import growth_from_kappa_zero

        return growth_from_kappa_zero(self.measure, n)

    def probs_for(self, pi):
        from .laws import growth_from_kappa

        return [self.g0(pi.n)] + [growth_from_kappa(self.measure, pi, i) for i in range(1, pi.k + 2)]

    def _probs(self, n, sizes):  # pragma: no cover - needs the full partition
        raise TypeError("FromKappa rules depend on the partition, not only block sizes")

    def __eq__(self, other):
        return isinstance(other, FromKappa) and other.measure is self.measure

    def __hash__(self):
        return id(self.measure)


_KINDS = {
    "ford": (Ford, ["alpha"]),
    "alpha_gamma": (AlphaGamma, ["alpha", "gamma"]),
    "alpha_theta": (AlphaTheta, ["alpha", "theta"]),
    "poisson_dirichlet": (PoissonDirichlet, ["alpha", "theta"]),
}


def model_from_json(data, exact: bool = True) -> GrowthModel:
    if isinstance(data, str):
        data = json.loads(data)
    kind = data.get("kind")
    if kind == "from_kappa":
        from .laws import measure_from_json

        return FromKappa(measure_from_json(data["measure"], exact=exact))
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cls, names = _KINDS[kind]
    missing = [k for k in names if k not in data]
    if missing:
        raise ValueError(f"model {kind} is missing {missing}")
    return cls(*[as_number(data[k], exact) for k in names])


def gibbs_norm(alpha, theta, n: int):
    """c_{alpha,theta}(n) from c(2) = 1 and c(m+1) = (m+theta) c(m) + w_m."""
    alpha, theta = _params([alpha, theta])
    if not 0 < alpha < 1 or theta < -2 * alpha:
        raise ValueError("gibbs_norm needs 0 < alpha < 1 and theta >= -2 alpha")
    if n < 2:
        raise ValueError("gibbs_norm is defined for n >= 2")
    c = 1 if not isinstance(alpha, float) else 1.0
    for m in range(2, n):
        c = (m + theta) * c + gamma_ratio(m, alpha)
    return c


def growth_probs(m: GrowthModel, pi: PartitionN) -> list:
    """(g_n(0), g_n(pi,1), ..., g_n(pi,k+1)) for pi != 1_[n]."""
    if pi.is_one():
        raise ValueError("growth probabilities need a split partition")
    return m.probs_for(pi)


# ---------------------------------------------------------------------------
# growth procedure (pure Python; the compiled grower mirrors it for floats)


class _Arena:
    """Mutable tree used while growing: children lists ordered by least label."""

    __slots__ = ("parent", "kids", "count", "label")

    def __init__(self):
        self.parent = [-1, 0]
        self.kids = [[1], []]
        self.count = [1, 1]
        self.label = [0, 1]

    @classmethod
    def from_tree(cls, t: LabelledTree) -> "_Arena":
        a = cls.__new__(cls)
        nested = t.nested()
        a.parent, a.kids, a.count, a.label = [-1], [[]], [0], [0]

        def rec(sub, p):
            v = len(a.parent)
            a.parent.append(p)
            a.kids.append([])
            a.kids[p].append(v)
            a.label.append(sub if isinstance(sub, int) else 0)
            if isinstance(sub, int):
                a.count.append(1)
            else:
                a.count.append(0)
                for c in sub:
                    rec(c, v)
                a.count[v] = sum(a.count[c] for c in a.kids[v])

        rec(nested, 0)
        a.count[0] = a.count[1]
        return a

    def freeze(self) -> LabelledTree:
        return LabelledTree(tuple(self.parent), tuple(self.label))

    def leaves_of(self, v):
        out, stack = [], [v]
        while stack:
            u = stack.pop()
            if self.label[u]:
                out.append(self.label[u])
            stack.extend(self.kids[u])
        return out

    def _new(self, p, label, count):
        self.parent.append(p)
        self.kids.append([])
        self.label.append(label)
        self.count.append(count)
        return len(self.parent) - 1

    def insert(self, model: GrowthModel, u: float):
        """Insert leaf n+1 following the growth rule, driven by uniforms from ``u``."""
        new_label = self.count[0] + 1
        self.count[0] += 1
        v = self.kids[0][0]
        while True:
            n = self.count[v]
            if not self.kids[v]:
                event = 0
            else:
                probs = self._probs_at(model, v, n)
                event = _pick(probs, u())
            if event == 0:
                p = self.parent[v]
                w = self._new(p, 0, n + 1)
                leaf = self._new(w, new_label, 1)
                self.kids[p][self.kids[p].index(v)] = w
                self.parent[v] = w
                self.kids[w] = [v, leaf]
                return
            self.count[v] += 1
            if event == len(self.kids[v]) + 1:
                leaf = self._new(v, new_label, 1)
                self.kids[v].append(leaf)
                return
            v = self.kids[v][event - 1]

    def _probs_at(self, model, v, n):
        if isinstance(model, FromKappa):
            blocks = [self.leaves_of(c) for c in self.kids[v]]
            order = sorted(x for b in blocks for x in b)
            rank = {x: i + 1 for i, x in enumerate(order)}
            pi = PartitionN.from_blocks([[rank[x] for x in b] for b in blocks], n)
            return model.probs_for(pi)
        return model._probs(n, [self.count[c] for c in self.kids[v]])


def _pick(probs, u: float) -> int:
    """Smallest index whose cumulative probability exceeds u.

    If rounding leaves u above the total, the last event of positive
    probability is taken (the compiled grower does the same).
    """
    if isinstance(probs[0], Fraction):
        u = Fraction(u)
    acc = probs[0]
    if u < acc:
        return 0
    for i in range(1, len(probs)):
        acc = acc + probs[i]
        if u < acc:
            return i
    return max(i for i, p in enumerate(probs) if p > 0)


def _stream(seed):
    rng = seed if isinstance(seed, SplitMix64) else SplitMix64(seed)
    return rng.uniform


def grow_step(t: LabelledTree, m: GrowthModel, seed=None) -> LabelledTree:
    """Insert leaf n+1 into ``t`` by one step of the growth rule."""
    arena = _Arena.from_tree(t)
    arena.insert(m, _stream(seed))
    return arena.freeze()


def grow_sequence(m: GrowthModel, n: int, seed=None) -> list[LabelledTree]:
    """Consistent trees T_1, ..., T_n from one run of the growth process."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = _stream(seed)
    arena = _Arena()
    out = [arena.freeze()]
    for _ in range(1, n):
        arena.insert(m, u)
        out.append(arena.freeze())
    return out


def grow_python(m: GrowthModel, n: int, seed=None) -> LabelledTree:
    if n < 1:
        raise ValueError("n must be >= 1")
    u = _stream(seed)
    arena = _Arena()
    for _ in range(1, n):
        arena.insert(m, u)
    return arena.freeze()


def grow(m: GrowthModel, n: int, seed=None) -> LabelledTree:
    """Grow T_n; float named models run on the compiled kernel when present.

    The kernel consumes the same SplitMix64 stream in the same order as the
    Python procedure, so both produce the same tree for the same seed.
    """
    if m.kernel_code is None or m.exact:
        return grow_python(m, n, seed)
    from .kernels import grow_arrays

    parent, label = grow_arrays(m, n, seed)
    return LabelledTree(tuple(int(x) for x in parent), tuple(int(x) for x in label))
