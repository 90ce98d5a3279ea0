"""Residual-mass chain of leaf 1, its Lamperti limit and Laplace exponents.

The chain records the size of the block containing leaf 1 at each branch
point on the path from the root to leaf 1; it is absorbed at 0 one step
after reaching 1.  The Lamperti limit is simulated from an epsilon-truncated
subordinator (compound Poisson with jumps of size >= epsilon).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import integrate, special

from ._rng import seed_to_int, spawn_seeds
from .laws import (
    DislocationMeasure,
    FiniteAtomic,
    FromGrowthRule,
    OrderedBetaMixture,
    PaintboxMixture,
    StepAtomic,
    lambda_array,
    splitting_distribution,
)
from .models import AlphaTheta, Ford, GrowthModel, grow
from .trees import LabelledTree, nested_leaves

__all__ = [
    "Composition",
    "MassChainPath",
    "LaplaceExponent",
    "residual_chain",
    "first_step_law",
    "laplace_exponent",
    "uniform_leaf_exponent",
    "ordered_beta_for",
    "truncation_level",
    "JumpLaw",
    "jump_law",
    "lamperti_path",
    "lamperti_batch",
    "chain_samples",
    "alpha_theta_chains",
    "ScaledChain",
    "scaled_chain_path",
    "scaled_chain_marginals",
    "path_csv",
    "laplace_csv",
]


# ---------------------------------------------------------------------------
# chains and compositions


@dataclass(frozen=True)
class Composition:
    parts: tuple[int, ...]

    def __post_init__(self):
        if not self.parts or any(p <= 0 for p in self.parts):
            raise ValueError("composition parts must be positive")

    @property
    def n(self) -> int:
        return sum(self.parts)


@dataclass(frozen=True)
class MassChainPath:
    """X_0 = n > X_1 > ... > X_M = 1, followed by the absorbing 0."""

    values: tuple[int, ...]

    def __post_init__(self):
        v = self.values
        if len(v) < 2 or v[-1] != 0 or v[-2] != 1:
            raise ValueError("a mass chain ends with 1 then 0")
        if any(a <= b for a, b in zip(v[:-1], v[1:])):
            raise ValueError("a mass chain decreases strictly at every split")

    @property
    def absorption(self) -> int:
        """A_n, the first index with X = 0."""
        return len(self.values) - 1

    def composition(self) -> Composition:
        v = self.values
        return Composition(tuple(a - b for a, b in zip(v[:-2], v[1:-1])) + (1,))

    def at(self, m: int) -> int:
        return self.values[m] if m < len(self.values) else 0


def residual_chain(t) -> tuple[MassChainPath, Composition]:
    """Block sizes containing leaf 1 along the root-to-leaf-1 path."""
    nested = t.nested() if isinstance(t, LabelledTree) else t
    values = [len(nested_leaves(nested))]
    sub = nested
    while not isinstance(sub, int):
        # children are ordered by least label, so leaf 1 sits in the first one
        sub = sub[0]
        values.append(len(nested_leaves(sub)))
    values.append(0)
    path = MassChainPath(tuple(values))
    return path, path.composition()


def first_step_law(m: GrowthModel, n: int, exact: bool | None = None, samples: int = 10_000, seed=None,
                   force: bool = False) -> dict:
    """P(X_1 = j), j = 1..n-1.

    Exact mode sums the splitting rule over partitions by first-block size
    (n <= 10 unless forced).  Monte Carlo mode returns empirical frequencies
    with their standard errors as ``{j: (p, se)}``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if exact is None:
        exact = m.exact and n <= 10
    if exact:
        table = splitting_distribution(m, n, force)
        zero = Fraction(0) if m.exact else 0.0
        out = {j: zero for j in range(1, n)}
        for pi, p in table.items():
            out[len(pi.blocks[0])] += p
        return out
    firsts = chain_samples(m, n, samples, seed, first_only=True)
    counts = np.bincount(firsts, minlength=n)[1:n]
    p = counts / samples
    se = np.sqrt(p * (1 - p) / samples)
    return {j: (float(p[j - 1]), float(se[j - 1])) for j in range(1, n)}


# ---------------------------------------------------------------------------
# Laplace exponents


@dataclass
class LaplaceExponent:
    """s -> psi(s) with a note of where it came from."""

    fn: Callable[[float], float]
    provenance: str

    def __call__(self, s):
        if np.ndim(s):
            return np.array([self.fn(float(x)) for x in np.asarray(s, dtype=float)])
        return self.fn(float(s))

    def table(self, s_grid) -> np.ndarray:
        return self(np.asarray(s_grid, dtype=float))

    def check_bernstein(self, s_grid=None, tol: float = 1e-9) -> bool:
        """psi(0) = 0 and psi non-decreasing and concave on the grid."""
        s = np.linspace(0, 10, 41) if s_grid is None else np.asarray(s_grid, dtype=float)
        v = self.table(s)
        scale = max(1.0, float(np.max(np.abs(v))))
        if abs(self.fn(0.0)) > tol * scale:
            return False
        if np.any(np.diff(v) < -tol * scale):
            return False
        slopes = np.diff(v) / np.diff(s)
        return bool(np.all(np.diff(slopes) <= tol * scale))


def _ordered_beta_weight(d: OrderedBetaMixture) -> tuple[float, float, float]:
    """(alpha, theta, factor) with the u-density factor * (alpha u + theta (1-u)) u^(theta-1) (1-u)^(-alpha-1)."""
    factor = float(d.scale) / d.unit()
    return float(d.alpha), float(d.theta), factor


def _quad_ordered_beta(d: OrderedBetaMixture, g: Callable[[float], float]) -> float:
    """int_0^1 g(u) (alpha u + theta (1-u)) u^(theta-1) (1-u)^(-alpha) du, times the factor.

    ``g`` absorbs one power of (1-u); the algebraic end-point weights are
    handled by QUADPACK's 'alg' rule.
    """
    al, th, factor = _ordered_beta_weight(d)
    val, _ = integrate.quad(lambda u: g(u) * (al * u + th * (1 - u)), 0.0, 1.0,
                            weight="alg", wvar=(th - 1.0, -al), epsabs=1e-13, epsrel=1e-12, limit=200)
    return factor * val


def _one_minus_pow_over(u: float, s: float) -> float:
    """(1 - u^s) / (1 - u), stable near u = 1."""
    if u <= 0.0:
        return 1.0 if s > 0 else 0.0
    if u >= 1.0:
        return s
    return -math.expm1(s * math.log(u)) / (1.0 - u)


def _step_jumps(d: StepAtomic, j_max: int = 2_000_000):
    js = np.arange(2, j_max + 1, dtype=float)
    w = d.scale * d.gamma * js ** (d.gamma - 1.0)
    x = 1.0 - 1.0 / js
    return js, w, x


def _check_first_limits(d: FiniteAtomic):
    for _, f in d.atoms:
        lim = getattr(f, "first_limit", None)
        if lim is None or not 0 < lim < 1:
            raise ValueError("every atom needs a declared first-block frequency in (0, 1)")


def ordered_beta_for(m: GrowthModel, lam2=1.0) -> OrderedBetaMixture:
    """Float ordered-beta measure of an alpha-theta (or Ford) model, scaled to the given lambda_2."""
    if isinstance(m, Ford):
        alpha, theta = float(m.alpha), 1.0 - float(m.alpha)
    elif isinstance(m, AlphaTheta):
        alpha, theta = float(m.alpha), float(m.theta)
    else:
        raise TypeError(f"{m!r} has no ordered-beta representation")
    base = OrderedBetaMixture(alpha, theta)
    return base.scaled(float(lam2) / base.lam(2))


def _as_measure(d) -> DislocationMeasure:
    if isinstance(d, GrowthModel):
        return ordered_beta_for(d)
    if isinstance(d, FromGrowthRule):
        return ordered_beta_for(d.model, float(d.lam2))
    return d


def laplace_exponent(d) -> LaplaceExponent:
    """psi(s) = int (1 - |Gamma_1|^s) kappa(dGamma)."""
    d = _as_measure(d)
    if isinstance(d, OrderedBetaMixture):
        return LaplaceExponent(lambda s: _quad_ordered_beta(d, lambda u: _one_minus_pow_over(u, s)) if s else 0.0,
                               f"ordered_beta({d.alpha}, {d.theta})")
    if isinstance(d, FiniteAtomic):
        _check_first_limits(d)
        atoms = [(float(w), float(f.first_limit)) for w, f in d.atoms]
        return LaplaceExponent(lambda s: sum(w * (1 - x ** s) for w, x in atoms), "finite_atomic")
    if isinstance(d, PaintboxMixture):
        return _paintbox_exponent(d, "first-block")
    if isinstance(d, StepAtomic):
        js, w, x = _step_jumps(d)

        def psi(s):
            body = float(np.sum(w * -np.expm1(s * np.log(x))))
            # tail j > J: 1 - x_j^s ~ s / j
            tail = s * d.scale * d.gamma * js[-1] ** (d.gamma - 1.0) / (1.0 - d.gamma)
            return body + tail

        return LaplaceExponent(psi, f"step_atomic({d.kind})")
    raise TypeError(f"no first-block law available for {type(d).__name__}")


def _paintbox_exponent(d: PaintboxMixture, label: str) -> LaplaceExponent:
    atoms = [(float(w), [float(x) for x in s]) for w, s in d.atoms]
    for _, s in atoms:
        if abs(sum(s) - 1.0) > 1e-12:
            raise ValueError("paintbox atoms with dust have |Gamma_1| = 0 with positive mass")
    scale = float(d.scale)

    def psi(s):
        out = sum(w * (1 - sum(x ** (s + 1) for x in sv)) for w, sv in atoms)
        if d.binary_density is not None:
            out += d._quad(lambda x: 1 - x ** (s + 1) - (1 - x) ** (s + 1))
        return scale * out

    return LaplaceExponent(psi, f"paintbox_mixture ({label})")


def uniform_leaf_exponent(d) -> LaplaceExponent:
    """psi_U(s) = int (1 - sum_i (|Gamma|_i^down)^(s+1)) kappa(dGamma)."""
    d = _as_measure(d)
    if isinstance(d, OrderedBetaMixture):
        def g(u, s):
            # (1 - u^(s+1) - (1-u)^(s+1)) / (1 - u)
            return _one_minus_pow_over(u, s + 1) - (1 - u) ** s

        return LaplaceExponent(lambda s: _quad_ordered_beta(d, lambda u: g(u, s)),
                               f"ordered_beta({d.alpha}, {d.theta}) uniform leaf")
    if isinstance(d, PaintboxMixture):
        return _paintbox_exponent(d, "uniform leaf")
    if isinstance(d, FiniteAtomic):
        atoms = []
        for w, f in d.atoms:
            ranked = getattr(f, "ranked_limit", None)
            if not ranked:
                raise ValueError("every atom needs declared ranked frequencies")
            atoms.append((float(w), [float(x) for x in ranked]))
        return LaplaceExponent(lambda s: sum(w * (1 - sum(x ** (s + 1) for x in r)) for w, r in atoms),
                               "finite_atomic uniform leaf")
    if isinstance(d, StepAtomic):
        js, w, x = _step_jumps(d)

        def psi(s):
            body = float(np.sum(w * (1 - x ** (s + 1) - (1 - x) ** (s + 1))))
            tail = (s + 1) * d.scale * d.gamma * js[-1] ** (d.gamma - 1.0) / (1.0 - d.gamma)
            return body + tail

        return LaplaceExponent(psi, f"step_atomic({d.kind}) uniform leaf")
    raise TypeError(f"no ranked frequencies available for {type(d).__name__}")


# ---------------------------------------------------------------------------
# Lamperti limit


def _beta_tail_rate(alpha: float, theta: float, eps: float) -> float:
    """Lambda([eps, inf)) for the unit ordered-beta density: F(e^-eps) with F(u) = u^theta (1-u)^-alpha."""
    return math.exp(-theta * eps) * (-math.expm1(-eps)) ** (-alpha)


def _log_ratio(u):
    """-log(u) / (1 - u), continuous at u = 1."""
    d = 1.0 - u
    if d < 1e-8:
        return 1.0 + d / 2.0
    return -math.log(u) / d


def _beta_small_jump_drift(alpha: float, theta: float, eps: float) -> float:
    """int_0^eps y Lambda(dy) for the unit ordered-beta density."""
    lo = math.exp(-eps)
    # -log(u) / (1 - u) is smooth up to u = 1, the weight keeps (1-u)^-alpha
    val, _ = integrate.quad(lambda u: _log_ratio(u) * (alpha * u + theta * (1 - u)) * u ** (theta - 1.0),
                            lo, 1.0, weight="alg", wvar=(0.0, -alpha), epsabs=1e-15, epsrel=1e-10)
    return val


def truncation_level(d, drift: float = 1e-4) -> float:
    """Largest epsilon (on a decimal grid) whose neglected small-jump drift is below ``drift``."""
    d = _as_measure(d)
    if not isinstance(d, OrderedBetaMixture):
        return 0.0
    al, th, factor = _ordered_beta_weight(d)
    if al == 0.0:
        return 0.0
    eps = 1e-1
    while factor * _beta_small_jump_drift(al, th, eps) >= drift:
        eps /= 2.0
        if eps < 1e-16:
            raise ValueError("cannot reach the requested drift bound")
    return eps


@dataclass
class JumpLaw:
    """A compound-Poisson jump law for xi in one of two kernel encodings.

    kind 0: finitely many jump sizes with rates; kind 1: ordered-beta jumps
    above epsilon, in unit scale, with time sped up by ``factor``.
    """

    kind: int
    params: np.ndarray
    factor: float = 1.0
    eps: float = 0.0
    neglected_drift: float = 0.0

    @property
    def total_rate(self) -> float:
        return float(self.params[len(self.params) // 2 - 1]) * self.factor if self.kind == 0 else \
            float(self.params[2]) * self.factor


def jump_law(d, eps: float | None = None, drift: float = 1e-4, j_max: int = 1_000_000) -> JumpLaw:
    """Lambda, the law of -log |Gamma_1| under kappa, as a simulable jump law."""
    d = _as_measure(d)
    if isinstance(d, OrderedBetaMixture):
        al, th, factor = _ordered_beta_weight(d)
        if al > 0 and eps is None:
            eps = truncation_level(d, drift)
        if al > 0 and not eps:
            raise ValueError("infinite-activity jump law needs eps > 0")
        eps = float(eps or 0.0)
        total = _beta_tail_rate(al, th, eps) if al > 0 else _beta_tail_rate(0.0, th, 0.0)
        nd = factor * _beta_small_jump_drift(al, th, eps) if al > 0 else 0.0
        return JumpLaw(1, np.array([al, th, total, eps]), factor, eps, nd)
    if isinstance(d, FiniteAtomic):
        _check_first_limits(d)
        rates = np.array([float(w) for w, _ in d.atoms])
        sizes = np.array([-math.log(float(f.first_limit)) for _, f in d.atoms])
        return JumpLaw(0, np.concatenate([np.cumsum(rates), sizes]))
    if isinstance(d, StepAtomic):
        js, w, x = _step_jumps(d, j_max)
        sizes = -np.log(x)
        nd = d.scale * d.gamma * j_max ** (d.gamma - 1.0) / (1.0 - d.gamma)
        return JumpLaw(0, np.concatenate([np.cumsum(w), sizes]), 1.0, float(sizes[-1]), nd)
    if isinstance(d, PaintboxMixture) and d.binary_density is None:
        rates, sizes = [], []
        for w, s in d.atoms:
            for x in s:
                if x > 0:
                    rates.append(float(d.scale) * float(w) * float(x))
                    sizes.append(-math.log(float(x)))
        return JumpLaw(0, np.concatenate([np.cumsum(rates), sizes]))
    raise TypeError(f"no jump law for {type(d).__name__}")


def lamperti_batch(law: JumpLaw, gamma: float, t_grid, samples: int, seed=None, tail: float = 1e-8,
                   psi: LaplaceExponent | None = None, pure: bool = False):
    """(values at t_grid, absorption times) for ``samples`` independent paths.

    Paths stop once exp(-gamma xi) < ``tail``; when ``psi`` is given the
    expected remaining clock exp(-gamma xi)/psi(gamma) is added.
    """
    from .kernels import lamperti_batch as _batch

    if gamma <= 0:
        raise ValueError("gamma must be positive")
    t = np.asarray(t_grid, dtype=float) * law.factor
    seeds = np.array(spawn_seeds(seed, samples), dtype=np.uint64)
    tail_rate = 0.0 if psi is None else float(psi(gamma)) / law.factor
    vals, absn = _batch(law.kind, law.params, law.eps, gamma, t, seeds, tail, tail_rate, pure=pure)
    return vals, absn / law.factor


def lamperti_path(law: JumpLaw, gamma: float, t_grid, seed=None, tail: float = 1e-8, psi=None):
    """One path X_t = exp(-xi_tau(t)) on a grid, and its absorption time."""
    vals, absn = lamperti_batch(law, gamma, t_grid, 1, seed, tail, psi)
    return vals[0], float(absn[0])


# ---------------------------------------------------------------------------
# scaled chains


def alpha_theta_chains(alpha: float, theta: float, n: int, samples: int, seed=None,
                       max_steps: int | None = None) -> np.ndarray:
    """Exact residual chains of leaf 1 for the alpha-theta model, vectorised over samples.

    Returns a (samples, steps + 1) integer matrix whose rows are X_0 = n,
    X_1, ... padded with zeros after absorption.  ``max_steps`` stops early.

    The first block of a size-x split is drawn from the ordered-beta
    representation (theta = 0 as its limit): with N = x - 2, either
    U ~ Beta(theta, 1-alpha) and X_1 = 1 + Bin(N, U), or (leaf 2 joins
    leaf 1) an index F in 1..N with weights
    Gamma(theta+F)/Gamma(theta+F+1-alpha), U ~ Beta(theta+F, 1-alpha) and
    X_1 = 1 + F + Bin(N-F, U).
    """
    alpha, theta = float(alpha), float(theta)
    if not 0 <= alpha < 1 or theta < 0:
        raise ValueError("needs 0 <= alpha < 1 and theta >= 0")
    rng = np.random.default_rng(seed_to_int(seed))
    x = np.full(samples, n, dtype=np.int64)
    cols = [x.copy()]
    live = np.flatnonzero(x > 1)

    def log_g(v):
        return special.gammaln(v + 1.0) - special.gammaln(v + 1.0 - alpha)

    lgt = log_g(theta)
    # theta -> 0 leaves a unit atom at U = 0 (leaf 1 split off alone)
    log_th = math.log(theta) + special.betaln(theta, 1.0 - alpha) if theta > 0 else 0.0
    while live.size and (max_steps is None or len(cols) <= max_steps):
        xs = x[live]
        big = xs >= 3
        new = np.ones_like(xs)
        if big.any():
            nn = xs[big] - 2
            # component masses: theta B(theta, 1-alpha) vs Gamma(1-alpha)(G(theta+N) - G(theta))
            lgn = log_g(theta + nn)
            if alpha > 0:
                log_al = special.gammaln(1.0 - alpha) + lgn + np.log1p(-np.exp(lgt - lgn))
                use_al = rng.random(nn.size) * (1.0 + np.exp(log_th - log_al)) < 1.0
            else:
                use_al = np.zeros(nn.size, dtype=bool)
            out = np.empty_like(nn)
            th_idx = ~use_al
            if th_idx.any():
                if theta > 0:
                    u = rng.beta(theta, 1.0 - alpha, int(th_idx.sum()))
                    out[th_idx] = 1 + rng.binomial(nn[th_idx], u)
                else:
                    out[th_idx] = 1
            if use_al.any():
                na = nn[use_al]
                lga = lgn[use_al]
                # invert G(theta+F) >= G(theta) + V (G(theta+N) - G(theta)) over F in 1..N
                g0 = np.exp(lgt - lga)
                target = g0 + rng.random(na.size) * (1.0 - g0)
                lo = np.ones_like(na)
                hi = na.copy()
                while np.any(lo < hi):
                    mid = (lo + hi) // 2
                    ok = np.exp(log_g(theta + mid) - lga) >= target
                    hi = np.where(ok, mid, hi)
                    lo = np.where(ok, lo, mid + 1)
                u = rng.beta(theta + lo, 1.0 - alpha)
                out[use_al] = 1 + lo + rng.binomial(na - lo, u)
            new[big] = out
        # size 2 always splits into singletons
        x[:] = 0
        x[live] = new
        cols.append(x.copy())
        live = live[new > 1]
    if max_steps is None or len(cols) <= max_steps:
        cols.append(np.zeros(samples, dtype=np.int64))
    return np.stack(cols, axis=1)


def chain_samples(m: GrowthModel, n: int, samples: int, seed=None, first_only: bool = False, pure: bool = False):
    """Residual chains of leaf 1 in independent T_n as a zero-padded matrix, or their first steps."""
    if isinstance(m, (AlphaTheta, Ford)) and not pure and float(m.alpha) < 1:
        alpha, theta = (float(m.alpha), 1.0 - float(m.alpha)) if isinstance(m, Ford) else \
            (float(m.alpha), float(m.theta))
        mat = alpha_theta_chains(alpha, theta, n, samples, seed, max_steps=1 if first_only else None)
        return mat[:, 1] if first_only else mat
    seeds = spawn_seeds(seed, samples)
    if m.kernel_code is not None:
        from .kernels import residual_path

        mf = m.as_float() if m.exact else m
        paths = [residual_path(mf, n, s, pure=pure) for s in seeds]
    else:
        paths = [np.asarray(residual_chain(grow(m, n, s))[0].values, dtype=np.int64) for s in seeds]
    if first_only:
        return np.array([p[1] for p in paths])
    width = max(len(p) for p in paths)
    mat = np.zeros((samples, width), dtype=np.int64)
    for i, p in enumerate(paths):
        mat[i, :len(p)] = p
    return mat


@dataclass
class ScaledChain:
    """t -> X_floor(lambda_n t) / n and the scaled absorption time A_n / lambda_n."""

    values: np.ndarray
    n: int
    lam: float
    absorption: float = field(init=False)

    def __post_init__(self):
        self.absorption = (len(self.values) - 1) / self.lam

    def __call__(self, t):
        idx = np.floor(np.asarray(t, dtype=float) * self.lam).astype(np.int64)
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx] / self.n


def scaled_chain_path(m: GrowthModel, n: int, seed=None, lam2=1.0) -> ScaledChain:
    if n < 2:
        raise ValueError("n must be >= 2")
    lam = lambda_array(m, float(lam2), n)[n]
    row = chain_samples(m, n, 1, seed)[0]
    return ScaledChain(row[: int(np.count_nonzero(row)) + 1], n, float(lam))


def scaled_chain_marginals(mat: np.ndarray, n: int, lam: float, t_grid):
    """X_floor(lam t)/n for every chain row and grid point, plus A_n/lam."""
    t = np.asarray(t_grid, dtype=float)
    idx = np.minimum(np.floor(t * lam).astype(np.int64), mat.shape[1] - 1)
    return mat[:, idx] / n, np.count_nonzero(mat, axis=1) / lam


# ---------------------------------------------------------------------------
# export


def path_csv(t_grid, values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value"])
    for t, v in zip(t_grid, values):
        w.writerow([f"{float(t):.10g}", f"{float(v):.17g}"])
    return buf.getvalue()


def laplace_csv(psi: LaplaceExponent, s_grid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "psi"])
    for s, v in zip(s_grid, psi.table(s_grid)):
        w.writerow([f"{float(s):.10g}", f"{float(v):.17g}"])
    return buf.getvalue()
