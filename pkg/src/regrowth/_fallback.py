"""Pure-Python versions of the compiled kernels.

Growth, heights and residual chains consume the SplitMix64 stream in the
same order as the compiled code and return identical results.  The
Lamperti batch is vectorised over paths with numpy instead; it has the
same law but a different random stream.
"""

from __future__ import annotations

import numpy as np

from ._rng import SplitMix64


class _Spec:
    """Minimal stand-in model carrying kernel parameters."""

    def __init__(self, code, a, b, g0tab, rtab):
        self.code, self.a, self.b = code, a, b
        self.g0tab, self.rtab = g0tab, rtab
        self.exact = False

    def _probs(self, n, sizes):
        a, b, k = self.a, self.b, len(sizes)
        if self.code == 0:
            den = n - a
            return [b / den, *[(s - a) / den for s in sizes], ((k - 1) * a - b) / den]
        if self.code == 1:
            den = n - 1 + b
            out = [a / den, (sizes[0] - 1 + b) / den]
            if k == 2:
                out.append((sizes[1] - a) / den)
            else:
                rest = n - sizes[0]
                out.extend(s * (rest - a) / rest / den for s in sizes[1:])
            out.append(0.0)
            return out
        r = self.rtab[n]
        return [self.g0tab[n], *[(s - a) * r for s in sizes], (k * a + b) * r]


def _arena_grow(code, a, b, n, seed, g0tab, rtab):
    from .models import _Arena

    spec = _Spec(code, a, b, g0tab, rtab)
    rng = SplitMix64(seed)
    arena = _Arena()
    for _ in range(1, n):
        arena.insert(spec, rng.uniform)
    return arena


def grow_arrays(code, a, b, n, seed, g0tab=None, rtab=None):
    arena = _arena_grow(code, a, b, n, seed, g0tab, rtab)
    return np.asarray(arena.parent, dtype=np.intc), np.asarray(arena.label, dtype=np.intc)


def _height(arena) -> int:
    depth = {0: 0}
    best = 0
    stack = [0]
    while stack:
        v = stack.pop()
        if not arena.kids[v]:
            best = max(best, depth[v])
        for c in arena.kids[v]:
            depth[c] = depth[v] + 1
            stack.append(c)
    return best


def grow_heights(code, a, b, n, seeds, g0tab=None, rtab=None):
    return np.array([_height(_arena_grow(code, a, b, n, int(s), g0tab, rtab)) for s in seeds], dtype=np.int64)


def _first_block(code, a, b, size, g0tab, rtab, rng) -> int:
    b1, k = 1, 2
    for m in range(2, size):
        u = rng.uniform()
        if code == 0:
            den = m - a
            p0, p1, prest = b / den, (b1 - a) / den, (m - b1 - (k - 1) * a) / den
        elif code == 1:
            den = m - 1 + b
            p0, p1, prest = a / den, (b1 - 1 + b) / den, (m - b1 - a) / den
        else:
            r = rtab[m]
            p0, p1, prest = g0tab[m], (b1 - a) * r, (m - b1 - (k - 1) * a) * r
        if u < p0:
            b1, k = m, 2
        elif u < p0 + p1:
            b1 += 1
        elif u < p0 + p1 + prest or code == 1:
            pass
        else:
            k += 1
    return b1


def residual_path(code, a, b, n, seed, g0tab=None, rtab=None):
    rng = SplitMix64(seed)
    out = [n]
    x = n
    while x > 1:
        x = _first_block(code, a, b, x, g0tab, rtab, rng)
        out.append(x)
    out.append(0)
    return np.asarray(out, dtype=np.int64)


def _beta_jumps(alpha, theta, target, eps):
    """Vectorised solve of theta*y + alpha*log(1 - e^-y) = target, y >= eps."""
    if theta == alpha:
        z = target / alpha
        return np.where(z > 700, z, np.log1p(np.exp(np.minimum(z, 700))))
    if alpha == 0:
        return np.maximum(target / theta, eps)
    lo = np.full_like(target, eps)
    hi = np.ones_like(target)
    h = lambda y: theta * y + alpha * np.log(-np.expm1(-y)) - target  # noqa: E731
    grow = h(hi) < 0
    while grow.any():
        hi = np.where(grow, 2 * hi, hi)
        grow = h(hi) < 0
    y = 0.5 * (lo + hi)
    for _ in range(200):
        hv = h(y)
        lo = np.where(hv < 0, y, lo)
        hi = np.where(hv < 0, hi, y)
        step = y - hv / (theta + alpha / np.expm1(y))
        bad = (step <= lo) | (step >= hi)
        step = np.where(bad, 0.5 * (lo + hi), step)
        done = np.abs(step - y) <= 1e-15 * y
        y = step
        if done.all():
            break
    return y


def lamperti_batch(kind, params, eps, gamma, t_grid, seeds, tail=1e-10, tail_rate=0.0):
    params = np.asarray(params, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    npaths = len(seeds)
    rng = np.random.default_rng(int(seeds[0]) if npaths else 0)
    vals = np.zeros((npaths, len(t_grid)))
    absn = np.zeros(npaths)
    xi = np.zeros(npaths)
    clock = np.zeros(npaths)
    decay = np.ones(npaths)
    live = np.arange(npaths)
    if kind == 0:
        natoms = len(params) // 2
        cum, sizes = params[:natoms], params[natoms:]
        total = cum[-1]
    else:
        alpha, theta, total = params[0], params[1], params[2]
    while live.size:
        m = live.size
        hold = rng.exponential(1.0 / total, m) * decay[live]
        c0 = clock[live]
        for g, t in enumerate(t_grid):
            hit = (t >= c0) & (t < c0 + hold)
            vals[live[hit], g] = np.exp(-xi[live[hit]])
        clock[live] = c0 + hold
        u = rng.random(m) * total
        if kind == 0:
            y = sizes[np.searchsorted(cum, u, side="right").clip(max=natoms - 1)]
        else:
            y = _beta_jumps(alpha, theta, -np.log(np.maximum(u, 1e-300)), eps)
        xi[live] += y
        decay[live] = np.exp(-gamma * xi[live])
        done = decay[live] < tail
        if done.any():
            idx = live[done]
            absn[idx] = clock[idx] + (decay[idx] / tail_rate if tail_rate > 0 else 0.0)
            live = live[~done]
    return vals, absn


def available() -> bool:
    return True


__all__ = ["grow_arrays", "grow_heights", "residual_path", "lamperti_batch"]
