"""Finite-horizon numerical checks of the convergence conditions and the
scaling limits.

The condition series are

    tree(n) = int (|Gamma^[n]|_1^down - |Gamma|_1^down) kappa(dGamma)
    mass(n) = int (|Gamma_1^[n]| - |Gamma_1|) kappa(dGamma)

For the step-rule measures (atoms Gamma(j) of weight gamma j^(gamma-1)) the
terms with j > n equal gamma j^(gamma-2) in both series, so each series is a
finite sum plus a Hurwitz-zeta tail.  ``certified_step_series`` redoes the
sum in integer arithmetic with rigorous enclosures of every power.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from ._rational import power_bounds, to_text
from ._rng import seed_to_int, spawn_seeds
from .laws import (
    DislocationMeasure,
    FiniteAtomic,
    FromGrowthRule,
    OrderedBetaMixture,
    PaintboxMixture,
    StepAtomic,
    lambda_array,
    lambda_seq,
    splitting_distribution,
    unlabelled_split,
)
from .models import GrowthModel
from .partitions import StepBatch, StepFamily, _first_block_after

__all__ = [
    "Series",
    "Report",
    "step_batch",
    "step_series",
    "certified_step_series",
    "tree_condition_series",
    "mass_condition_series",
    "corollary_terms",
    "window_onset",
    "bound_holds_from",
    "HMMeasure",
    "hm_condition_measure",
    "loglog_slope",
    "height_scaling_experiment",
    "step_chain_samples",
    "residual_limit_test",
]

_FAR = np.int64(np.iinfo(np.int64).max // 4)


# ---------------------------------------------------------------------------
# result containers


@dataclass
class Series:
    """A condition series on a grid of n with an enclosure [lo, hi] of each value."""

    name: str
    n: np.ndarray
    value: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_rows(self) -> list[dict]:
        return [{"n": int(n), "value": float(v), "lo": float(a), "hi": float(b)}
                for n, v, a, b in zip(self.n, self.value, self.lo, self.hi)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value", "lo", "hi"])
        for r in self.to_rows():
            w.writerow([r["n"], f"{r['value']:.17g}", f"{r['lo']:.17g}", f"{r['hi']:.17g}"])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"name": self.name, "meta": self.meta, "rows": self.to_rows()}


@dataclass
class Report:
    """Rows of an experiment plus everything needed to rerun it."""

    kind: str
    spec: dict
    seed: int | None
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"kind": self.kind, "spec": self.spec, "seed": self.seed, "summary": self.summary,
                "rows": self.rows}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        w = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x).__name__}")


# ---------------------------------------------------------------------------
# step-rule measures


def step_batch(d: StepAtomic, j_max: int) -> StepBatch:
    """Two-phase description of the atoms Gamma(2..j_max) of a step-rule measure."""
    if j_max > d.horizon:
        raise ValueError(f"the construction is only specified up to level {d.horizon}")
    js = np.arange(2, j_max + 1, dtype=np.int64)
    if d.kind == "good":
        return StepBatch(js, js - 1, js.copy(), js.copy(), js - 1, js.copy())
    if d.kind == "half":
        rel = np.array([d.release.get(int(j), 2 * d.horizon + 2) for j in js], dtype=np.int64)
        return StepBatch(js, np.ones_like(js), np.full_like(js, 2), np.maximum(rel, js), js - 1, js.copy())
    return d.schedule.batch(j_max)


def _step_terms(d: StepAtomic, batch: StepBatch, n: int, which: str):
    """Numerators c_j (exact ints) with term_j = gamma * c_j * j^(gamma-2) / n, for j = 2..n."""
    b = batch.first_block_sizes(n)[: n - 1]
    js = batch.start[: n - 1]
    r = np.maximum(b, n - b) if which == "tree" else b
    return js, r * js - (js - 1) * n


def step_series(d: StepAtomic, n_list, which: str = "tree") -> Series:
    """Float condition series of a step-rule measure with a rounding-error enclosure."""
    _check_which(which)
    ns = np.asarray(sorted(set(int(n) for n in n_list)), dtype=np.int64)
    if ns.size == 0 or ns[0] < 2:
        raise ValueError("n must be >= 2")
    batch = step_batch(d, int(ns[-1]))
    g = d.gamma
    vals, errs = [], []
    for n in ns:
        js, c = _step_terms(d, batch, int(n), which)
        terms = g * c.astype(float) * js.astype(float) ** (g - 2.0) / n
        body = math.fsum(terms)
        tail = g * float(special.zeta(2.0 - g, n + 1))
        vals.append(d.scale * (body + tail))
        # per-term relative error of a few ulps, plus the zeta routine's
        errs.append(d.scale * (8e-16 * float(np.sum(np.abs(terms))) + 1e-13 * tail))
    v = np.array(vals)
    e = np.array(errs)
    return Series(f"{which}_condition", ns, v, v - e, v + e,
                  {"measure": d.to_json(), "method": "float sum + Hurwitz zeta tail"})


def _rational(x: float, what: str) -> Fraction:
    f = Fraction(x).limit_denominator(10**6)
    if float(f) != x:
        raise ValueError(f"{what} = {x} is not a small rational; certified mode needs one")
    return f


def certified_step_series(d: StepAtomic, n_list, which: str = "tree", digits: int = 30) -> Series:
    """Rigorous enclosures [lo, hi] of the condition series in exact arithmetic.

    Every j^(gamma-2) is enclosed by integer roots at scale 10**digits; the
    integer coefficients c_j pick the bound that pushes the sum outward.
    The tail sum over j > n is enclosed by the integrals from n+1 and n.
    """
    _check_which(which)
    g = _rational(d.gamma, "gamma")
    sc = _rational(d.scale, "scale")
    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 2:
        raise ValueError("n must be >= 2")
    S = 10**digits
    batch = step_batch(d, ns[-1])
    lo_p = [0, 0]
    hi_p = [0, 0]
    for j in range(2, ns[-1] + 1):
        a, b = power_bounds(j, g - 2, S)
        lo_p.append(a)
        hi_p.append(b)
    lo_out, hi_out = [], []
    for n in ns:
        js, c = _step_terms(d, batch, n, which)
        up = down = 0
        for j, cj in zip(js.tolist(), c.tolist()):
            if cj > 0:
                up += cj * hi_p[j]
                down += cj * lo_p[j]
            elif cj < 0:
                up += cj * lo_p[j]
                down += cj * hi_p[j]
        t_lo = Fraction(power_bounds(n + 1, g - 1, S)[0], S) / (1 - g)
        t_hi = Fraction(power_bounds(n, g - 1, S)[1], S) / (1 - g)
        lo_out.append(sc * g * (Fraction(down, n * S) + t_lo))
        hi_out.append(sc * g * (Fraction(up, n * S) + t_hi))
    lo_f = np.array([float(x) for x in lo_out])
    hi_f = np.array([float(x) for x in hi_out])
    s = Series(f"{which}_condition", np.array(ns), (lo_f + hi_f) / 2, lo_f, hi_f,
               {"measure": d.to_json(), "method": "certified integer enclosure", "digits": digits})
    s.meta["exact_lo"] = lo_out
    s.meta["exact_hi"] = hi_out
    return s


def window_onset(d: StepAtomic, x_gap=Fraction(1, 3)) -> int:
    """First level from which the active windows carry weight > 1 and every
    active atom j has x^(j) - 1/2 >= x_gap.

    An atom i is active at level n when 2i <= n <= a_i; then its first block
    sits at frequency ~1/2 while its limit is 1 - 1/i.
    """
    if d.kind != "half":
        raise ValueError("window onset is defined for the 'half' construction")
    j_min = int(math.ceil(1 / (Fraction(1, 2) - x_gap)))  # 1 - 1/j - 1/2 >= gap
    horizon = d.horizon
    onset = None
    for n in range(4, horizon + 1):
        active = [i for i in range(2, n // 2 + 1) if d.release.get(i, 2 * horizon + 2) >= n]
        weight = sum(d.weight(i) for i in active)
        ok = weight > 1 and min(active) >= j_min
        if ok and onset is None:
            onset = n
        elif not ok:
            onset = None
        if onset is not None and n >= 4 * onset:
            break
    if onset is None:
        raise ValueError("no onset below the horizon")
    return onset


def bound_holds_from(series: Series, bound: float, strict: bool = True) -> int | None:
    """Smallest grid n from which hi < bound (or <=) holds at every later grid point."""
    ok = series.hi < bound if strict else series.hi <= bound
    if ok.all():
        return int(series.n[0])
    bad = np.flatnonzero(~ok)
    last = bad[-1]
    return None if last + 1 >= len(ok) else int(series.n[last + 1])


# ---------------------------------------------------------------------------
# general measures


def _check_which(which):
    if which not in ("tree", "mass"):
        raise ValueError("which must be 'tree' or 'mass'")


def _as_measure(d):
    if isinstance(d, GrowthModel):
        from .residual import ordered_beta_for

        return ordered_beta_for(d)
    if isinstance(d, FromGrowthRule):
        from .residual import ordered_beta_for

        return ordered_beta_for(d.model, float(d.lam2))
    return d


def _binom_excess(n: int, u: float, ordered: bool) -> tuple[float, float]:
    """(E (2X - n)^+, E (n - 2X)^+) for X = 1 + Bin(n-1, u) (ordered) or Bin(n, u)."""
    if ordered:
        k = np.arange(n)
        p = stats.binom.pmf(k, n - 1, u)
        x = k + 1
    else:
        x = np.arange(n + 1)
        p = stats.binom.pmf(x, n, u)
    return float(np.sum(p * np.maximum(2 * x - n, 0))), float(np.sum(p * np.maximum(n - 2 * x, 0)))


def _ordered_beta_quad(d: OrderedBetaMixture, h: Callable[[float], float], a=0.0, b=1.0) -> float:
    """int_a^b h(u) (1 - u) kappa(du): ``h`` is the integrand divided by (1 - u)."""
    from .residual import _ordered_beta_weight

    al, th, factor = _ordered_beta_weight(d)
    left = th - 1.0 if a == 0.0 else 0.0
    right = -al if b == 1.0 else 0.0

    def body(u):
        # end-point powers not carried by the weight go into the integrand
        out = h(u) * (al * u + th * (1 - u))
        if not left:
            out *= u ** (th - 1.0)
        if not right:
            out *= (1 - u) ** -al
        return out

    val, _ = integrate.quad(body, a, b, weight="alg", wvar=(left, right),
                            epsabs=1e-13, epsrel=1e-10, limit=400)
    return factor * val


def _ordered_tree_over(n: int, u: float) -> float:
    """(E max(X, n-X)/n - max(u, 1-u)) / (1 - u), X = 1 + Bin(n-1, u)."""
    if u >= 1.0:
        return 1.0 / n
    up, down = _binom_excess(n, u, True)
    if u >= 0.5:
        # E max = E X + E(n-2X)^+, and E X / n - u = (1-u)/n
        return 1.0 / n + down / (n * (1 - u))
    # E max = E(n-X) + E(2X-n)^+, and E(n-X)/n - (1-u) = -(1-u)/n
    return -1.0 / n + up / (n * (1 - u))


def _paintbox_tree_term(n: int, s, rng, samples: int) -> tuple[float, float]:
    """E |Gamma^[n]|_1^down - s_1 for one paintbox, with a standard error."""
    s = [float(x) for x in s]
    if len(s) == 2 and abs(s[0] + s[1] - 1.0) < 1e-15:
        up, down = _binom_excess(n, s[0], False)
        # E max(B, n-B) = E B + E(n-2B)^+
        return (n * s[0] + down) / n - s[0], 0.0
    dust = max(0.0, 1.0 - sum(s))
    counts = rng.multinomial(n, s + [dust], size=samples)
    top = counts[:, :-1].max(axis=1)
    top = np.maximum(top, (counts[:, -1] > 0).astype(np.int64))
    vals = top / n - s[0]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def _general_series(d, ns, which, samples, seed):
    rng = np.random.default_rng(seed_to_int(seed))
    vals, ses = [], []
    if isinstance(d, FiniteAtomic):
        for n in ns:
            tot = Fraction(0) if d.exact else 0.0
            for w, f in d.atoms:
                limit = f.first_limit if which == "mass" else (f.ranked_limit or [None])[0]
                if limit is None:
                    raise ValueError("frequencies unavailable for an atom")
                if which == "mass":
                    obs = Fraction(f.first_block_size(n), n)
                else:
                    obs = Fraction(f.ranked_counts(n)[0], n)
                term = w * (obs - limit) if d.exact else float(w) * float(obs - limit)
                tot += term
            vals.append(tot)
            ses.append(0.0)
        return vals, ses, "finite sum"
    if isinstance(d, OrderedBetaMixture):
        if which == "mass":
            # E|Gamma_1^[n]| - u = (1-u)/n for an ordered paintbox
            lam2 = float(d.lam(2)) * d.unit() if d.exact else float(d.lam(2))
            return [lam2 / n for n in ns], [0.0] * len(ns), "closed form lambda_2 / n"
        return ([_ordered_beta_quad(d, lambda u, n=n: _ordered_tree_over(n, u)) for n in ns],
                [0.0] * len(ns), "quadrature")
    if isinstance(d, PaintboxMixture):
        sc = float(d.scale)
        if which == "mass":
            return [float(d.lam(2)) / n for n in ns], [0.0] * len(ns), "closed form lambda_2 / n"
        for n in ns:
            tot, var = 0.0, 0.0
            for w, s in d.atoms:
                m, se = _paintbox_tree_term(n, s, rng, samples)
                tot += float(w) * m
                var += (float(w) * se) ** 2
            if d.binary_density is not None:
                def h(x, n=n):
                    up, down = _binom_excess(n, x, False)
                    return down / n
                tot += d._quad(h)
            vals.append(sc * tot)
            ses.append(sc * math.sqrt(var))
        return vals, ses, "binomial sums, quadrature and Monte Carlo"
    raise ValueError(f"frequencies unavailable for {type(d).__name__}")


def _condition_series(d, n_list, which, exact, samples, seed) -> Series:
    d = _as_measure(d)
    if isinstance(d, StepAtomic):
        return certified_step_series(d, n_list, which) if exact else step_series(d, n_list, which)
    ns = sorted(set(int(n) for n in n_list))
    if not ns or ns[0] < 2:
        raise ValueError("n must be >= 2")
    vals, ses, method = _general_series(d, ns, which, samples, seed)
    v = np.array([float(x) for x in vals])
    se = np.array(ses)
    s = Series(f"{which}_condition", np.array(ns), v, v - 3 * se, v + 3 * se, {"method": method})
    if any(isinstance(x, Fraction) for x in vals):
        s.meta["exact"] = vals
    return s


def tree_condition_series(d, n_list, exact: bool = False, samples: int = 20_000, seed=None) -> Series:
    """n -> int (|Gamma^[n]|_1^down - |Gamma|_1^down) kappa(dGamma)."""
    return _condition_series(d, n_list, "tree", exact, samples, seed)


def mass_condition_series(d, n_list, exact: bool = False, samples: int = 20_000, seed=None) -> Series:
    """n -> int (|Gamma_1^[n]| - |Gamma_1|) kappa(dGamma)."""
    return _condition_series(d, n_list, "mass", exact, samples, seed)


def corollary_terms(d, n_list, samples: int = 20_000, seed=None):
    """(kappa(|Gamma_1| != |Gamma|_1^down), series of
    int over {|Gamma_1| = |Gamma|_1^down} of (|Gamma^[n]|_1^down - |Gamma_1^[n]|))."""
    d = _as_measure(d)
    ns = sorted(set(int(n) for n in n_list))
    if isinstance(d, StepAtomic):
        # |Gamma(j)_1| = 1 - 1/j is always the larger frequency
        batch = step_batch(d, ns[-1])
        out = []
        for n in ns:
            b = batch.first_block_sizes(n)[: n - 1]
            js = batch.start[: n - 1]
            w = d.scale * d.gamma * js.astype(float) ** (d.gamma - 1.0)
            out.append(float(np.sum(w * (np.maximum(b, n - b) - b))) / n)
        return 0.0, Series("corollary_equal_set", np.array(ns), np.array(out), np.array(out), np.array(out))
    if isinstance(d, FiniteAtomic):
        mism = 0.0
        vals = []
        for w, f in d.atoms:
            ranked = f.ranked_limit[0] if f.ranked_limit else None
            if f.first_limit is None or ranked is None:
                raise ValueError("frequencies unavailable for an atom")
            if f.first_limit != ranked:
                mism += float(w)
        for n in ns:
            tot = 0.0
            for w, f in d.atoms:
                if f.first_limit == f.ranked_limit[0]:
                    tot += float(w) * (f.ranked_counts(n)[0] - f.first_block_size(n)) / n
            vals.append(tot)
        v = np.array(vals)
        return mism, Series("corollary_equal_set", np.array(ns), v, v, v)
    if isinstance(d, OrderedBetaMixture):
        mism = _ordered_beta_quad(d, lambda u: 1.0 / (1 - u), 0.0, 0.5)

        def h(u, n):
            if u >= 1.0:
                return 0.0
            up, down = _binom_excess(n, u, True)
            return down / (n * (1 - u))

        vals = [_ordered_beta_quad(d, lambda u, n=n: h(u, n), 0.5, 1.0) for n in ns]
        v = np.array(vals)
        return mism, Series("corollary_equal_set", np.array(ns), v, v, v)
    if isinstance(d, PaintboxMixture):
        # 1 falls in a colour of frequency s_c; that equals s_1 unless s_c < s_1
        rng = np.random.default_rng(seed_to_int(seed))
        mism = 0.0
        for w, s in d.atoms:
            s = [float(x) for x in s]
            mism += float(w) * (1.0 - sum(x for x in s if x == s[0]))
        if d.binary_density is not None:
            mism += d._quad(lambda x: 1.0 - x)
        mism *= float(d.scale)
        vals = []
        for n in ns:
            tot = 0.0
            for w, s in d.atoms:
                s = [float(x) for x in s]
                dust = max(0.0, 1.0 - sum(s))
                cnt = rng.multinomial(n - 1, s + [dust], size=samples)
                top_colours = [c for c, x in enumerate(s) if x == s[0]]
                acc = 0.0
                for c in top_colours:
                    own = cnt[:, c] + 1
                    others = cnt.copy()
                    others[:, c] += 1
                    top = others[:, :-1].max(axis=1)
                    acc += s[c] * float(np.mean(top - own))
                tot += float(w) * acc / n
            if d.binary_density is not None:
                def h(x, n=n):
                    k = np.arange(n)
                    p = stats.binom.pmf(k, n - 1, x)
                    own = k + 1
                    return x * float(np.sum(p * np.maximum(n - 2 * own, 0))) / n
                tot += d._quad(h)
            vals.append(float(d.scale) * tot)
        v = np.array(vals)
        return mism, Series("corollary_equal_set", np.array(ns), v, v, v)
    raise ValueError(f"frequencies unavailable for {type(d).__name__}")


# ---------------------------------------------------------------------------
# the finite measure n^gamma l(n) (1 - s_1) p_n^o(ds)


@dataclass
class HMMeasure:
    """Atoms (ranked frequencies -> mass) of norm * (1 - s_1) * p_n^o."""

    n: int
    norm: object
    atoms: dict
    lam_n: object

    def total(self):
        return sum(self.atoms.values())

    def integrate(self, f: Callable):
        return sum((mass * f(s) for s, mass in self.atoms.items()), 0 * self.lam_n)

    def kappa_side(self, d: DislocationMeasure, f: Callable):
        """(norm / lambda_n) * int (1 - |Gamma^[n]|_1^down) f(|Gamma^[n]|^down) kappa(dGamma)."""
        from .partitions import set_partitions

        acc = 0 * self.lam_n
        for pi in set_partitions(self.n):
            if pi.is_one():
                continue
            c = d.cylinder(pi)
            if not c:
                continue
            s = tuple(Fraction(k, self.n) for k in sorted(pi.sizes, reverse=True))
            acc += c * (1 - s[0]) * f(s)
        return self.norm / d.lam(self.n) * acc

    def versus_density(self, density: Callable[[float], float], fs: Sequence[Callable]):
        """Pairs (atom integral, int f(s) (1-s_1) density(s_1) ds_1 over (1/2, 1)) for binary test functions."""
        out = []
        for f in fs:
            ref, _ = integrate.quad(lambda x: f((x, 1 - x)) * (1 - x) * density(x), 0.5, 1.0, limit=200)
            out.append((float(self.integrate(f)), ref))
        return out


def hm_condition_measure(m: GrowthModel, n: int, lam2=1, norm=None, force: bool = False) -> HMMeasure:
    """Atom list of norm * (1 - s_1) * p_n^o(ds) with norm = lambda_n unless given."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if n > 10 and not force:
        raise ValueError("exact enumeration refused for n > 10")
    lam_n = lambda_seq(m, lam2, n)[n - 2]
    norm = lam_n if norm is None else norm
    atoms = {}
    for sizes, p in unlabelled_split(m, n, force=force).items():
        if not p:
            continue
        s = tuple(Fraction(k, n) for k in sizes) if m.exact else tuple(k / n for k in sizes)
        atoms[s] = norm * (1 - s[0]) * p
    return HMMeasure(n, norm, atoms, lam_n)


# ---------------------------------------------------------------------------
# scaling experiments


def loglog_slope(ns, values) -> float:
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _heights(m: GrowthModel, n: int, seeds) -> np.ndarray:
    if m.kernel_code is not None:
        from .kernels import grow_heights

        mf = m.as_float() if m.exact else m
        return np.asarray(grow_heights(mf, n, seeds), dtype=float)
    from .models import grow
    from .trees import height

    return np.array([height(grow(m, n, s)) for s in seeds], dtype=float)


def _height_job(job):
    m, n, seed, samples, lam_n = job
    return _heights(m, n, spawn_seeds(seed, samples)) / lam_n


def height_scaling_experiment(m: GrowthModel, n_list, samples: int = 1000, seed=None, lam2: float = 1.0,
                              gamma_hat: float | None = None, keep: bool = False, workers: int = 1) -> Report:
    """Per-n mean, standard error and quantiles of height(T_n) / lambda_n.

    Seeds are forked per n before any work is scheduled, so the result does
    not depend on ``workers``.

    Heights count edges, the root edge included.  ``ratio`` is the mean at n
    over the mean at the previous n; values near 1 indicate the scaling has
    settled.
    """
    ns = [int(n) for n in n_list]
    if ns != sorted(ns) or len(set(ns)) != len(ns):
        raise ValueError("n_list must be strictly increasing")
    lam = lambda_array(m, lam2, ns[-1])
    if gamma_hat is None and len(ns) > 1:
        grid = np.unique(np.geomspace(max(ns[0], 2), ns[-1], 20).astype(int))
        gamma_hat = loglog_slope(grid, lam[grid])
    master = seed_to_int(seed)
    seeds = spawn_seeds(master, len(ns))
    rep = Report("height", {"model": m.to_json(), "n_list": ns, "samples": samples, "lambda2": lam2},
                 master, summary={"gamma_hat": gamma_hat})
    prev = None
    raw = {}
    jobs = [(m, n, s, samples, float(lam[n])) for n, s in zip(ns, seeds)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_height_job, jobs))
    else:
        results = [_height_job(j) for j in jobs]
    for n, h in zip(ns, results):
        mean = float(h.mean())
        q = np.quantile(h, [0.1, 0.25, 0.5, 0.75, 0.9])
        rep.rows.append({"n": n, "lambda_n": float(lam[n]), "mean": mean,
                         "se": float(h.std(ddof=1) / math.sqrt(samples)),
                         "q10": q[0], "q25": q[1], "q50": q[2], "q75": q[3], "q90": q[4],
                         "ratio": math.nan if prev is None else mean / prev})
        prev = mean
        if keep:
            raw[n] = h
    if keep:
        rep.summary["samples"] = raw
    return rep


def _batch_first_block_at(batch: StepBatch, idx: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Block-1 sizes of atoms ``idx`` (positions in the batch) at per-element levels."""
    s = batch.start[idx]
    sw = np.maximum(batch.switch[idx], s)
    n1 = np.minimum(levels, sw)
    b = _first_block_after(s, s - 1, batch.p1[idx], batch.q1[idx], n1)
    later = levels > sw
    if later.any():
        b2 = _first_block_after(sw[later], b[later], batch.p2[idx][later], batch.q2[idx][later], levels[later])
        b = b.copy()
        b[later] = b2
    return b


def step_chain_samples(d: StepAtomic, n: int, samples: int, seed=None) -> np.ndarray:
    """Residual chains of leaf 1 for a step-rule measure, as a zero-padded matrix.

    From a block of size m the atom is J ~ w_j on 2..m and the block of 1
    becomes the first block of Gamma(J) restricted to [m].
    """
    batch = step_batch(d, n)
    w = np.array([d.weight(j) for j in range(2, n + 1)])
    cum = np.cumsum(w)
    rng = np.random.default_rng(seed_to_int(seed))
    x = np.full(samples, n, dtype=np.int64)
    cols = [x.copy()]
    live = np.flatnonzero(x > 1)
    while live.size:
        m = x[live]
        u = rng.random(live.size) * cum[m - 2]
        idx = np.minimum(np.searchsorted(cum, u, side="right"), m - 2)
        new = _batch_first_block_at(batch, idx, m)
        x[:] = 0
        x[live] = new
        cols.append(x.copy())
        live = live[new > 1]
    cols.append(np.zeros(samples, dtype=np.int64))
    return np.stack(cols, axis=1)


def residual_limit_test(m, d=None, n: int = 10_000, t_list=(0.25, 0.5), samples: int = 10_000, seed=None,
                        lam2: float = 1.0, gamma: float | None = None, limit_samples: int | None = None,
                        tail: float = 1e-8, j_max: int = 100_000) -> Report:
    """KS distances between scaled chain marginals and the Lamperti limit.

    ``m`` is a growth model (its chain is sampled exactly) or a step-rule
    measure; ``d`` is the measure for the limit and defaults to the one of
    ``m``.  The absorption row compares A_n / lambda_n with the limit's
    absorption time; ``z`` is the mean difference in units of the combined
    standard error.  ``j_max`` truncates the atoms of step-rule measures.
    """
    from .residual import chain_samples, jump_law, lamperti_batch, laplace_exponent, scaled_chain_marginals

    master = seed_to_int(seed)
    s_chain, s_limit = spawn_seeds(master, 2)
    if isinstance(m, StepAtomic):
        d = m if d is None else d
        mat = step_chain_samples(m, n, samples, s_chain)
        lam_n = float(m.lam(n))
        gamma = m.gamma if gamma is None else gamma
        spec = {"measure": m.to_json()}
    else:
        d = FromGrowthRule(m, lam2) if d is None else d
        mat = chain_samples(m, n, samples, s_chain)
        lam_n = float(lambda_array(m, lam2, n)[n])
        if gamma is None:
            grid = np.unique(np.geomspace(max(n // 100, 2), n, 20).astype(int))
            gamma = loglog_slope(grid, lambda_array(m, lam2, n)[grid])
        spec = {"model": m.to_json(), "lambda2": lam2}
    t = np.asarray(t_list, dtype=float)
    chain_vals, chain_abs = scaled_chain_marginals(mat, n, lam_n, t)
    psi = laplace_exponent(d)
    law = jump_law(d, j_max=j_max)
    lim_vals, lim_abs = lamperti_batch(law, gamma, t, limit_samples or samples, s_limit, tail=tail, psi=psi)
    rep = Report("residual", {**spec, "n": n, "t": t.tolist(), "samples": samples, "gamma": gamma}, master)
    for i, ti in enumerate(t):
        ks = stats.ks_2samp(chain_vals[:, i], lim_vals[:, i])
        rep.rows.append({"t": float(ti), "ks": float(ks.statistic), "p_value": float(ks.pvalue),
                         "chain_mean": float(chain_vals[:, i].mean()), "limit_mean": float(lim_vals[:, i].mean())})
    se = math.sqrt(chain_abs.var(ddof=1) / chain_abs.size + lim_abs.var(ddof=1) / lim_abs.size)
    rep.summary = {
        "chain_absorption_mean": float(chain_abs.mean()),
        "chain_absorption_se": float(chain_abs.std(ddof=1) / math.sqrt(chain_abs.size)),
        "chain_absorption_var": float(chain_abs.var(ddof=1)),
        "limit_absorption_mean": float(lim_abs.mean()),
        "limit_absorption_se": float(lim_abs.std(ddof=1) / math.sqrt(lim_abs.size)),
        "limit_absorption_var": float(lim_abs.var(ddof=1)),
        "exact_limit_mean": 1.0 / float(psi(gamma)),
        "z": float((chain_abs.mean() - lim_abs.mean()) / se) if se > 0 else 0.0,
        "eps": law.eps,
        "neglected_drift": law.neglected_drift,
    }
    return rep
