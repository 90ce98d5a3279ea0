"""Exact finite-n laws: splitting rules, tree probabilities, lambda_n and
dislocation measures given by their cylinder masses.

Every function works in the arithmetic of its inputs: rational models and
measures give Fractions, float ones give floats.
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

from ._rational import as_number, rising, to_text
from .models import FromKappa, GrowthModel, model_from_json
from .partitions import (
    PartitionFamily,
    PartitionN,
    StepFamily,
    build_good_family,
    build_mixed_schedule,
    greedy_window_schedule,
    integer_partitions,
    set_partitions,
)
from .trees import LabelledTree, _canon, nested_leaves

__all__ = [
    "PARTITION_GUARD",
    "GuardError",
    "InfiniteMassError",
    "splitting_rule",
    "splitting_distribution",
    "tree_prob",
    "lambda_seq",
    "lambda_array",
    "DislocationMeasure",
    "FiniteAtomic",
    "StepAtomic",
    "OrderedBetaMixture",
    "PaintboxMixture",
    "FromGrowthRule",
    "kappa_cylinder",
    "kappa_one_mass",
    "growth_from_kappa",
    "growth_from_kappa_zero",
    "unlabelled_split",
    "splitting_csv",
    "measure_from_json",
    "paintbox_cylinder",
]

PARTITION_GUARD = 10


class GuardError(ValueError):
    """Exact enumeration refused because n exceeds the resource guard."""


class InfiniteMassError(ValueError):
    """The requested cylinder has infinite measure."""


# ---------------------------------------------------------------------------
# splitting rules and tree probabilities


def _one(m):
    return Fraction(1) if getattr(m, "exact", False) else 1.0


def splitting_rule(m: GrowthModel, pi: PartitionN):
    """p_n(pi) as the product of growth probabilities along pi's history."""
    if pi.is_one():
        raise ValueError("p_n is defined on split partitions only")
    n = pi.n
    j0 = pi.blocks[1][0]  # least element of B_2
    p = _one(m) if j0 == 2 else m.g0(j0 - 1)
    rgs = pi.rgs()
    for j in range(j0, n):
        if not p:
            return p
        sub = PartitionN.from_rgs(rgs[:j])
        probs = m.probs_for(sub)
        p = p * probs[rgs[j] + 1]
    return p


def _guard(n, force, limit=PARTITION_GUARD):
    if n > limit and not force:
        raise GuardError(f"exact enumeration at n={n} refused (guard n <= {limit}); use force")


def splitting_distribution(m: GrowthModel, n: int, force: bool = False) -> dict:
    """Full table pi -> p_n(pi) over P_n without 1_[n]."""
    if n < 2:
        raise ValueError("splitting rules start at n = 2")
    _guard(n, force)
    return {pi: splitting_rule(m, pi) for pi in set_partitions(n) if not pi.is_one()}


def _relabelled_split(sub):
    """First split of a nested subtree, relabelled onto [#leaves]."""
    blocks = [nested_leaves(c) for c in sub]
    ground = sorted(x for b in blocks for x in b)
    rank = {x: i + 1 for i, x in enumerate(ground)}
    return PartitionN.from_blocks([[rank[x] for x in b] for b in blocks], len(ground))


def tree_prob(m: GrowthModel, t, memo: dict | None = None):
    """Probability of a labelled tree: product of p_{#B} over branch points."""
    nested = t.nested() if isinstance(t, LabelledTree) else _canon(t) if not isinstance(t, int) else t
    memo = {} if memo is None else memo
    out = _one(m)

    def rec(sub):
        nonlocal out
        if isinstance(sub, int):
            return
        pi = _relabelled_split(sub)
        if pi not in memo:
            memo[pi] = splitting_rule(m, pi)
        out = out * memo[pi]
        for c in sub:
            rec(c)

    rec(nested)
    return out


def lambda_seq(m: GrowthModel, lam2=1, n_max: int = 10) -> list:
    """[lambda_2, ..., lambda_{n_max}] from lambda_{n+1} = lambda_n / (1 - g_n(0))."""
    lam = as_number(lam2, exact=getattr(m, "exact", False)) if not isinstance(lam2, float) else lam2
    if lam <= 0:
        raise ValueError("lambda_2 must be positive")
    out = [lam]
    for j in range(2, n_max):
        g = m.g0(j)
        if g >= 1:
            raise ValueError(f"g_{j}(0) = 1: lambda_{j + 1} is infinite")
        lam = lam / (1 - g)
        out.append(lam)
    return out


def lambda_array(m: GrowthModel, lam2: float, n_max: int) -> np.ndarray:
    """Float lambda_n indexed by n (entries 0 and 1 are nan)."""
    fm = m if not getattr(m, "exact", False) or isinstance(m, FromKappa) else m.as_float()
    g = np.array([float(fm.g0(j)) for j in range(2, n_max)])
    if np.any(g >= 1):
        raise ValueError("g_j(0) = 1 encountered")
    out = np.full(n_max + 1, np.nan)
    out[2] = float(lam2)
    out[3:] = float(lam2) * np.cumprod(1.0 / (1.0 - g))
    return out


# ---------------------------------------------------------------------------
# dislocation measures


class DislocationMeasure:
    """A measure on partitions of N known through its cylinder masses."""

    variant = "abstract"
    exact = False

    def cylinder(self, pi: PartitionN):
        raise NotImplementedError

    def lam(self, n: int):
        """kappa(P minus P^[n]), the mass of partitions splitting [n]."""
        return sum((self.cylinder(pi) for pi in set_partitions(n) if not pi.is_one()), self._zero())

    def one_mass(self, n: int):
        """kappa(P^[n]); infinite for measures with infinite total mass."""
        raise InfiniteMassError(f"{self.variant}: mass of 1_[{n}] is not available")

    def scaled(self, c) -> "DislocationMeasure":
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def _zero(self):
        return Fraction(0) if self.exact else 0.0


def _num(x, exact):
    return as_number(x, exact) if not isinstance(x, float) else x


class FiniteAtomic(DislocationMeasure):
    """sum_i w_i delta_{Gamma_i} over a finite list of partition families."""

    variant = "finite_atomic"

    def __init__(self, atoms: Sequence[tuple]):
        ws = [_num(w, True) for w, _ in atoms]
        self.exact = not any(isinstance(w, float) for w in ws)
        if not self.exact:
            ws = [float(w) for w in ws]
        if any(w <= 0 for w in ws):
            raise ValueError("atom weights must be positive")
        self.atoms = [(w, f) for w, (_, f) in zip(ws, atoms)]
        if not any(not f.restrict(2).is_one() for _, f in self.atoms):
            raise ValueError("kappa(P^{1},{2}) must be positive")

    def cylinder(self, pi):
        return sum((w for w, f in self.atoms if f.restrict(pi.n) == pi), self._zero())

    def lam(self, n):
        return sum((w for w, f in self.atoms if not f.restrict(n).is_one()), self._zero())

    def one_mass(self, n):
        return sum((w for w, f in self.atoms if f.restrict(n).is_one()), self._zero())

    def scaled(self, c):
        c = _num(c, self.exact)
        return FiniteAtomic([(w * c, f) for w, f in self.atoms])

    def to_json(self):
        atoms = []
        for w, f in self.atoms:
            if not hasattr(f, "to_json"):
                raise ValueError("atom family is not serialisable")
            atoms.append({"weight": to_text(w), "family": f.to_json()})
        return {"variant": self.variant, "atoms": atoms}


class StepAtomic(DislocationMeasure):
    """Atoms Gamma(j), j >= 2, of weight gamma j^(gamma-1), with
    Gamma(j)^[j] = ([j-1], {j}) (the step-rule constructions).

    ``kind`` is "good" (every atom runs A_{1-1/j}), "half" (A_{1/2} until a
    greedily chosen release, then A_{1-1/j}) or "mixed" (good and evil atoms
    scheduled up to ``horizon``).  Only atom j can charge a cylinder whose
    second block starts at j, so cylinder masses cost O(1) family lookups.
    """

    variant = "step_atomic"

    def __init__(self, gamma, kind: str = "good", horizon: int = 4096):
        self.gamma = float(as_number(gamma, exact=False))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if kind not in ("good", "half", "mixed"):
            raise ValueError(f"unknown step-atomic kind {kind!r}")
        self.kind = kind
        self.horizon = int(horizon)
        self.scale = 1.0
        self.release: dict = {}
        self.onset = None
        self.schedule = None
        if kind == "half":
            self.release, self.onset = greedy_window_schedule(self.gamma, self.horizon)
        elif kind == "mixed":
            self.schedule = build_mixed_schedule(self.gamma, self.horizon)
        self._fam: dict = {}

    def weight(self, j: int) -> float:
        return self.scale * self.gamma * j ** (self.gamma - 1.0) if j >= 2 else 0.0

    def family(self, j: int) -> StepFamily:
        if j not in self._fam:
            if self.kind == "good":
                f = build_good_family(j)
            elif self.kind == "half":
                from .partitions import build_evil_family_b

                a = self.release.get(j, 2 * self.horizon + 2)
                f = build_evil_family_b(j, max(a, j))
            else:
                f = self.schedule.family(j)
            self._fam[j] = f
        return self._fam[j]

    def cylinder(self, pi):
        if pi.is_one():
            raise ValueError("use one_mass for 1_[n]")
        j = pi.blocks[1][0]
        return self.weight(j) if self.family(j).restrict(pi.n) == pi else 0.0

    def lam(self, n):
        return sum(self.weight(j) for j in range(2, n + 1))

    def scaled(self, c):
        out = StepAtomic.__new__(StepAtomic)
        out.__dict__.update(self.__dict__)
        out._fam = self._fam
        out.scale = self.scale * float(c)
        return out

    def to_json(self):
        return {"variant": self.variant, "gamma": self.gamma, "kind": self.kind,
                "horizon": self.horizon, "scale": self.scale}


class OrderedBetaMixture(DislocationMeasure):
    """alpha kb(. cap P^[2]) + theta kb(. cap P^{1},{2}) with
    kb = int ordered paintbox(u) u^(theta-1) (1-u)^(-alpha-1) du.

    In exact mode cylinder masses are rationals in units of B(theta, 1-alpha)
    (see :meth:`unit`); in float mode they are the actual values.
    """

    variant = "ordered_beta"

    def __init__(self, alpha, theta, scale=1):
        vals = [_num(alpha, True), _num(theta, True), _num(scale, True)]
        self.exact = not any(isinstance(v, float) for v in vals)
        if not self.exact:
            vals = [float(v) for v in vals]
        self.alpha, self.theta, self.scale = vals
        if not 0 <= self.alpha < 1 or self.theta <= 0 or self.scale <= 0:
            raise ValueError("ordered-beta mixture needs 0 <= alpha < 1, theta > 0")

    def unit(self) -> float:
        """Float value of one exact unit, B(theta, 1 - alpha)."""
        if not self.exact:
            return 1.0
        return float(special.beta(float(self.theta), 1.0 - float(self.alpha)))

    def _beta(self, a: int, b: int):
        """B(theta + a - 1, b - alpha), in units of B(theta, 1 - alpha) when exact."""
        al, th = self.alpha, self.theta
        if self.exact:
            return Fraction(rising(th, a - 1) * rising(1 - al, b - 1)) / rising(th + 1 - al, a + b - 2)
        return math.exp(special.betaln(th + a - 1, b - al))

    def cylinder(self, pi):
        if pi.is_one():
            raise ValueError("use one_mass for 1_[n]")
        if pi.k > 2:
            return self._zero()
        b1, b2 = pi.blocks
        weight = self.alpha if 2 in b1 else self.theta
        return self.scale * weight * self._beta(len(b1), len(b2))

    def lam(self, n):
        # 2 in B_1: C(n-2, a-2) partitions; 2 in B_2: C(n-2, a-1)
        out = self._zero()
        for a in range(1, n):
            c = self.alpha * _comb(n - 2, a - 2) + self.theta * _comb(n - 2, a - 1)
            out += c * self._beta(a, n - a)
        return self.scale * out

    def one_mass(self, n):
        if self.alpha > 0:
            raise InfiniteMassError("ordered-beta mixture with alpha > 0 has infinite mass on 1_[n]")
        return super().one_mass(n)

    def scaled(self, c):
        return OrderedBetaMixture(self.alpha, self.theta, self.scale * _num(c, self.exact))

    def to_json(self):
        return {"variant": self.variant, "alpha": to_text(self.alpha), "theta": to_text(self.theta),
                "scale": to_text(self.scale)}


def _comb(n: int, k: int) -> int:
    return math.comb(n, k) if 0 <= k <= n else 0


def paintbox_cylinder(s: Sequence, pi: PartitionN):
    """kappa_s(P^pi): probability that the s-paintbox restricted to [n] is pi."""
    s = list(s)
    zero = Fraction(0) if not any(isinstance(x, float) for x in s) else 0.0
    dust = 1 - sum(s, zero)
    sizes = pi.sizes
    memo = {}

    def rec(i, used):
        if i == len(sizes):
            return 1
        key = (i, used)
        if key in memo:
            return memo[key]
        tot = zero
        if sizes[i] == 1 and dust:
            tot += dust * rec(i + 1, used)
        for c, sc in enumerate(s):
            if sc and not used >> c & 1:
                tot += sc ** sizes[i] * rec(i + 1, used | 1 << c)
        memo[key] = tot
        return tot

    return rec(0, 0)


class PaintboxMixture(DislocationMeasure):
    """Exchangeable measure int kappa_s nu(ds).

    ``atoms`` lists (weight, s) pairs; ``binary_density`` optionally adds a
    continuous part nu(ds) = f(s_1) ds_1 on s = (s_1, 1 - s_1), s_1 in
    (1/2, ``upper``], integrated by adaptive quadrature.
    """

    variant = "paintbox_mixture"

    def __init__(self, atoms: Sequence[tuple] = (), binary_density=None, upper: float = 1.0, scale=1):
        vals = [_num(w, True) for w, _ in atoms]
        svals = [[_num(x, True) for x in s] for _, s in atoms]
        self.exact = binary_density is None and not any(
            isinstance(v, float) for v in vals + [x for s in svals for x in s]
        ) and not isinstance(scale, float)
        if not self.exact:
            vals = [float(v) for v in vals]
            svals = [[float(x) for x in s] for s in svals]
        for s in svals:
            if any(x < 0 for x in s) or sum(s) > 1 or list(s) != sorted(s, reverse=True):
                raise ValueError(f"invalid ranked frequencies {s}")
            if s and s[0] == 1:
                raise ValueError("paintbox at (1, 0, ...) charges 1_N")
        self.atoms = list(zip(vals, [tuple(s) for s in svals]))
        self.binary_density = binary_density
        self.upper = float(upper)
        self.scale = _num(scale, self.exact)

    def _quad(self, fn):
        val, _ = integrate.quad(lambda x: fn(x) * self.binary_density(x), 0.5, self.upper,
                                epsabs=1e-12, epsrel=1e-10, limit=200)
        return val

    def cylinder(self, pi):
        if pi.is_one():
            raise ValueError("use one_mass for 1_[n]")
        out = sum((w * paintbox_cylinder(s, pi) for w, s in self.atoms), self._zero())
        if self.binary_density is not None and pi.k == 2:
            a, b = pi.sizes
            out += self._quad(lambda x: x ** a * (1 - x) ** b + x ** b * (1 - x) ** a)
        return self.scale * out

    def lam(self, n):
        out = self._zero()
        for w, s in self.atoms:
            out += w * (1 - sum((x ** n for x in s), self._zero()))
        if self.binary_density is not None:
            out += self._quad(lambda x: 1 - x ** n - (1 - x) ** n)
        return self.scale * out

    def scaled(self, c):
        return PaintboxMixture(self.atoms, self.binary_density, self.upper, self.scale * _num(c, self.exact))

    def to_json(self):
        if self.binary_density is not None:
            raise ValueError("continuous paintbox mixtures are not serialisable")
        return {"variant": self.variant, "scale": to_text(self.scale),
                "atoms": [{"weight": to_text(w), "s": [to_text(x) for x in s]} for w, s in self.atoms]}


class FromGrowthRule(DislocationMeasure):
    """kappa(P^pi) = lambda_n p_n(pi) for a growth model and lambda_2."""

    variant = "from_growth_rule"

    def __init__(self, model: GrowthModel, lam2=1):
        self.model = model
        self.exact = model.exact and not isinstance(lam2, float)
        self.lam2 = _num(lam2, self.exact)
        if self.lam2 <= 0:
            raise ValueError("lambda_2 must be positive")
        self._lams = [None, None, self.lam2]
        self._split: dict = {}

    def lam(self, n):
        while len(self._lams) <= n:
            j = len(self._lams) - 1
            self._lams.append(self._lams[j] / (1 - self.model.g0(j)))
        return self._lams[n]

    def cylinder(self, pi):
        if pi.is_one():
            raise ValueError("use one_mass for 1_[n]")
        return self.lam(pi.n) * self._split_prob(pi)

    def _split_prob(self, pi):
        """p_n(pi) from p_{n-1} of its prefix, memoised."""
        if pi in self._split:
            return self._split[pi]
        rgs = pi.rgs()
        prefix = PartitionN.from_rgs(rgs[:-1])
        if prefix.is_one():
            p = splitting_rule(self.model, pi)
        else:
            p = self._split_prob(prefix) * self.model.probs_for(prefix)[rgs[-1] + 1]
        self._split[pi] = p
        return p

    def scaled(self, c):
        return FromGrowthRule(self.model, self.lam2 * _num(c, self.exact))

    def to_json(self):
        return {"variant": self.variant, "model": self.model.to_json(), "lambda2": to_text(self.lam2)}


def measure_from_json(data, exact: bool = True) -> DislocationMeasure:
    if isinstance(data, str):
        data = json.loads(data)
    v = data.get("variant")
    if v == "ordered_beta":
        return OrderedBetaMixture(as_number(data["alpha"], exact), as_number(data["theta"], exact),
                                  as_number(data.get("scale", "1"), exact))
    if v == "from_growth_rule":
        return FromGrowthRule(model_from_json(data["model"], exact), as_number(data.get("lambda2", "1"), exact))
    if v == "paintbox_mixture":
        atoms = [(as_number(a["weight"], exact), [as_number(x, exact) for x in a["s"]]) for a in data["atoms"]]
        return PaintboxMixture(atoms, scale=as_number(data.get("scale", "1"), exact))
    if v == "finite_atomic":
        atoms = [(as_number(a["weight"], exact), StepFamily.from_json(a["family"])) for a in data["atoms"]]
        return FiniteAtomic(atoms)
    if v == "step_atomic":
        m = StepAtomic(data["gamma"], data.get("kind", "good"), int(data.get("horizon", 4096)))
        return m.scaled(float(data.get("scale", 1.0)))
    raise ValueError(f"unknown measure variant {v!r}")


# ---------------------------------------------------------------------------
# kappa <-> growth rule


def kappa_cylinder(d: DislocationMeasure, pi: PartitionN):
    """kappa(P^pi); for pi = 1_[n] the mass kappa(P^[n]) when it is finite."""
    if pi.is_one():
        return d.one_mass(pi.n)
    return d.cylinder(pi)


def kappa_one_mass(d: DislocationMeasure, n: int):
    """kappa(P^[n]) with +inf for measures of infinite total mass."""
    try:
        return d.one_mass(n)
    except InfiniteMassError:
        return math.inf


def growth_from_kappa_zero(d: DislocationMeasure, n: int):
    """g_n(0) = 1 - lambda_n / lambda_{n+1}."""
    if n == 1:
        return Fraction(1) if d.exact else 1.0
    return 1 - d.lam(n) / d.lam(n + 1)


def growth_from_kappa(d: DislocationMeasure, pi: PartitionN, i: int):
    """g_n(pi, i) = (lambda_n / lambda_{n+1}) kappa(P^{pi + i}) / kappa(P^pi)."""
    if pi.is_one():
        raise ValueError("growth probabilities need a split partition")
    if not 1 <= i <= pi.k + 1:
        return Fraction(0) if d.exact else 0.0
    base = d.cylinder(pi)
    if base == 0:
        raise ZeroDivisionError(f"kappa(P^{pi}) = 0: conditioning on a null cylinder")
    return d.lam(pi.n) / d.lam(pi.n + 1) * d.cylinder(pi.insert(i)) / base


# ---------------------------------------------------------------------------
# unlabelled projection and export


def unlabelled_split(m: GrowthModel, n: int, force: bool = False) -> dict:
    """p_n^o(n_1, ..., n_k): splitting probabilities of ranked block sizes."""
    table = splitting_distribution(m, n, force)
    out = {key: (Fraction(0) if m.exact else 0.0) for key in integer_partitions(n) if len(key) > 1}
    for pi, p in table.items():
        out[tuple(sorted(pi.sizes, reverse=True))] += p
    return out


def splitting_csv(m: GrowthModel, n: int, force: bool = False, lam2=1) -> str:
    """CSV with one row per partition, a totals row and the lambda column."""
    table = splitting_distribution(m, n, force)
    lams = lambda_seq(m, lam2, max(n, 2))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["partition", "probability", "float"])
    total = Fraction(0) if m.exact else 0.0
    for pi, p in table.items():
        total += p
        w.writerow([str(pi), to_text(p), f"{float(p):.17g}"])
    w.writerow(["total", to_text(total), f"{float(total):.17g}"])
    w.writerow([])
    w.writerow(["n", "lambda", "lambda_float"])
    for j, lam in enumerate(lams, start=2):
        w.writerow([j, to_text(lam), f"{float(lam):.17g}"])
    return buf.getvalue()
