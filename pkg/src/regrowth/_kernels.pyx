# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: tree growth, heights, residual chains, Lamperti paths.

Every routine draws from a SplitMix64 stream; the growth and chain
routines consume it in exactly the order used by the Python fallback.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, pow, fabs
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    s[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* s) noexcept nogil:
    return (_next(s) >> 11) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# growth


cdef struct Arena:
    int* parent
    int* label
    int* count
    int* first
    int* last
    int* nxt
    int* prv
    int nv


cdef inline int _new(Arena* A, int p, int lab, int cnt) noexcept nogil:
    cdef int v = A.nv
    A.nv += 1
    A.parent[v] = p
    A.label[v] = lab
    A.count[v] = cnt
    A.first[v] = -1
    A.last[v] = -1
    A.nxt[v] = -1
    A.prv[v] = -1
    return v


cdef inline void _append(Arena* A, int p, int c) noexcept nogil:
    A.parent[c] = p
    A.prv[c] = A.last[p]
    A.nxt[c] = -1
    if A.last[p] >= 0:
        A.nxt[A.last[p]] = c
    else:
        A.first[p] = c
    A.last[p] = c


cdef inline void _replace(Arena* A, int old, int new) noexcept nogil:
    """Put ``new`` where ``old`` sits in its parent's child list."""
    cdef int p = A.parent[old]
    A.parent[new] = p
    A.prv[new] = A.prv[old]
    A.nxt[new] = A.nxt[old]
    if A.prv[old] >= 0:
        A.nxt[A.prv[old]] = new
    else:
        A.first[p] = new
    if A.nxt[old] >= 0:
        A.prv[A.nxt[old]] = new
    else:
        A.last[p] = new
    A.prv[old] = -1
    A.nxt[old] = -1


cdef inline double _prob(int code, double a, double b, int n, int k, int i, int s, int s1,
                         const double* g0tab, const double* rtab) noexcept nogil:
    """Event probability: i = 0 (below), 1..k (into child of size s), k+1 (new)."""
    cdef double den
    cdef int rest
    if code == 0:
        den = n - a
        if i == 0:
            return b / den
        if i <= k:
            return (s - a) / den
        return ((k - 1) * a - b) / den
    if code == 1:
        den = n - 1 + b
        if i == 0:
            return a / den
        if i == 1:
            return (s - 1 + b) / den
        if i <= k:
            if k == 2:
                return (s - a) / den
            rest = n - s1
            return s * (rest - a) / rest / den
        return 0.0
    if i == 0:
        return g0tab[n]
    if i <= k:
        return (s - a) * rtab[n]
    return (k * a + b) * rtab[n]


cdef void _insert(Arena* A, int code, double a, double b, const double* g0tab,
                  const double* rtab, uint64_t* rng) noexcept nogil:
    cdef int new_label = A.count[0] + 1
    cdef int v = A.first[0]
    cdef int n, k, c, event, i, chosen, s1, last_pos, w, leaf
    cdef double u, acc, p
    A.count[0] += 1
    while True:
        n = A.count[v]
        if A.first[v] < 0:
            event = 0
        else:
            k = 0
            c = A.first[v]
            while c >= 0:
                k += 1
                c = A.nxt[c]
            s1 = A.count[A.first[v]]
            u = _uniform(rng)
            acc = _prob(code, a, b, n, k, 0, 0, s1, g0tab, rtab)
            last_pos = 0 if acc > 0 else -1
            event = -1
            chosen = -1
            if u < acc:
                event = 0
            else:
                c = A.first[v]
                i = 1
                while c >= 0:
                    p = _prob(code, a, b, n, k, i, A.count[c], s1, g0tab, rtab)
                    if p > 0:
                        last_pos = i
                    acc = acc + p
                    if u < acc:
                        event = i
                        chosen = c
                        break
                    c = A.nxt[c]
                    i += 1
                if event < 0:
                    p = _prob(code, a, b, n, k, k + 1, 0, s1, g0tab, rtab)
                    if p > 0:
                        last_pos = k + 1
                    event = last_pos
                    if 1 <= event <= k:
                        c = A.first[v]
                        i = 1
                        while i < event:
                            c = A.nxt[c]
                            i += 1
                        chosen = c
        if event == 0:
            w = _new(A, -1, 0, n + 1)
            _replace(A, v, w)
            leaf = _new(A, w, new_label, 1)
            _append(A, w, v)
            _append(A, w, leaf)
            return
        A.count[v] += 1
        if event == k + 1:
            leaf = _new(A, v, new_label, 1)
            _append(A, v, leaf)
            return
        v = chosen


cdef class _Buffers:
    cdef int[::1] parent, label, count, first, last, nxt, prv, depth, queue
    cdef int cap

    def __init__(self, int n):
        self.cap = 2 * n + 2
        self.parent = np.empty(self.cap, dtype=np.intc)
        self.label = np.empty(self.cap, dtype=np.intc)
        self.count = np.empty(self.cap, dtype=np.intc)
        self.first = np.empty(self.cap, dtype=np.intc)
        self.last = np.empty(self.cap, dtype=np.intc)
        self.nxt = np.empty(self.cap, dtype=np.intc)
        self.prv = np.empty(self.cap, dtype=np.intc)
        self.depth = np.empty(self.cap, dtype=np.intc)
        self.queue = np.empty(self.cap, dtype=np.intc)


cdef inline void _arena_init(Arena* A, _Buffers B) noexcept nogil:
    A.parent = &B.parent[0]
    A.label = &B.label[0]
    A.count = &B.count[0]
    A.first = &B.first[0]
    A.last = &B.last[0]
    A.nxt = &B.nxt[0]
    A.prv = &B.prv[0]
    A.nv = 0
    cdef int root = _new(A, -1, 0, 1)
    cdef int leaf = _new(A, root, 1, 1)
    _append(A, root, leaf)


cdef int _grow(Arena* A, int code, double a, double b, int n, const double* g0tab,
               const double* rtab, uint64_t seed) noexcept nogil:
    cdef uint64_t rng = seed
    cdef int m
    for m in range(1, n):
        _insert(A, code, a, b, g0tab, rtab, &rng)
    return A.nv


cdef int _height(Arena* A, int* depth, int* queue) noexcept nogil:
    cdef int head = 0, tail = 1, v, c, best = 0
    queue[0] = 0
    depth[0] = 0
    while head < tail:
        v = queue[head]
        head += 1
        c = A.first[v]
        if c < 0 and depth[v] > best:
            best = depth[v]
        while c >= 0:
            depth[c] = depth[v] + 1
            queue[tail] = c
            tail += 1
            c = A.nxt[c]
    return best


def _tables(n, g0tab, rtab):
    if g0tab is None:
        g0tab = np.zeros(n + 2)
        rtab = np.zeros(n + 2)
    return np.ascontiguousarray(g0tab, dtype=np.float64), np.ascontiguousarray(rtab, dtype=np.float64)


def grow_arrays(int code, double a, double b, int n, uint64_t seed, g0tab=None, rtab=None):
    """Grow T_n; returns (parent, label) int arrays in arena order."""
    cdef double[::1] g0v, rv
    g0np, rnp = _tables(n, g0tab, rtab)
    g0v = g0np
    rv = rnp
    cdef _Buffers B = _Buffers(n)
    cdef Arena A
    cdef int nv
    with nogil:
        _arena_init(&A, B)
        nv = _grow(&A, code, a, b, n, &g0v[0], &rv[0], seed)
    return np.asarray(B.parent[:nv]).copy(), np.asarray(B.label[:nv]).copy()


def grow_heights(int code, double a, double b, int n, uint64_t[::1] seeds, g0tab=None, rtab=None):
    """Heights (edge counts, root edge included) of independent T_n."""
    cdef double[::1] g0v, rv
    g0np, rnp = _tables(n, g0tab, rtab)
    g0v = g0np
    rv = rnp
    cdef _Buffers B = _Buffers(n)
    cdef Arena A
    cdef Py_ssize_t i, m = seeds.shape[0]
    out_np = np.empty(m, dtype=np.int64)
    cdef int64_t[::1] out = out_np
    with nogil:
        for i in range(m):
            _arena_init(&A, B)
            _grow(&A, code, a, b, n, &g0v[0], &rv[0], seeds[i])
            out[i] = _height(&A, &B.depth[0], &B.queue[0])
    return out_np


# ---------------------------------------------------------------------------
# residual chain via the first-block process


cdef int _first_block(int code, double a, double b, int size, const double* g0tab,
                      const double* rtab, uint64_t* rng) noexcept nogil:
    """Size of the block containing 1 in the first split of T_size.

    Replays the root partition: state (b1, k) suffices for named models.
    """
    cdef int m, b1 = 1, k = 2
    cdef double u, p0, p1, prest, den, r
    for m in range(2, size):
        u = _uniform(rng)
        if code == 0:
            den = m - a
            p0 = b / den
            p1 = (b1 - a) / den
            prest = (m - b1 - (k - 1) * a) / den
        elif code == 1:
            den = m - 1 + b
            p0 = a / den
            p1 = (b1 - 1 + b) / den
            prest = (m - b1 - a) / den
        else:
            r = rtab[m]
            p0 = g0tab[m]
            p1 = (b1 - a) * r
            prest = (m - b1 - (k - 1) * a) * r
        if u < p0:
            b1 = m
            k = 2
        elif u < p0 + p1:
            b1 += 1
        elif u < p0 + p1 + prest or code == 1:
            pass
        else:
            k += 1
    return b1


def residual_path(int code, double a, double b, int n, uint64_t seed, g0tab=None, rtab=None):
    """X_0 = n, X_1, ..., 1, 0 for leaf 1 of T_n."""
    cdef double[::1] g0v, rv
    g0np, rnp = _tables(n, g0tab, rtab)
    g0v = g0np
    rv = rnp
    cdef uint64_t rng = seed
    out = [n]
    cdef int x = n
    while x > 1:
        with nogil:
            x = _first_block(code, a, b, x, &g0v[0], &rv[0], &rng)
        out.append(x)
    out.append(0)
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# Lamperti transform of an epsilon-truncated subordinator


cdef inline double _beta_jump(double alpha, double theta, double target, double eps) noexcept nogil:
    """Jump y >= eps solving theta*y + alpha*log(1 - e^-y) = target."""
    cdef double lo = eps, hi = 1.0, y, h, dh, step
    cdef int it
    if theta == alpha:
        if target / alpha > 700.0:
            return target / alpha
        return log1p(exp(target / alpha))
    if alpha == 0.0:
        return target / theta if target / theta > eps else eps
    while theta * hi + alpha * log(-expm1(-hi)) < target:
        hi *= 2.0
    y = 0.5 * (lo + hi)
    for it in range(200):
        h = theta * y + alpha * log(-expm1(-y)) - target
        if h < 0:
            lo = y
        else:
            hi = y
        dh = theta + alpha / expm1(y)
        step = y - h / dh
        if step <= lo or step >= hi:
            step = 0.5 * (lo + hi)
        if fabs(step - y) <= 1e-15 * y:
            return step
        y = step
    return y


def lamperti_batch(int kind, double[::1] params, double eps, double gamma,
                   double[::1] t_grid, uint64_t[::1] seeds, double tail=1e-10,
                   double tail_rate=0.0):
    """Simulate X_t = exp(-xi_{tau(t)}) for many paths.

    kind 0: atoms; params = (cumulative rates ..., jump sizes ...).
    kind 1: ordered-beta jumps; params = (alpha, theta, total rate, eps).
    Returns (values at t_grid, absorption clock).  Paths stop once
    exp(-gamma xi) < tail; ``tail_rate`` > 0 adds exp(-gamma xi)/tail_rate as
    the expected remaining clock.
    """
    cdef Py_ssize_t npaths = seeds.shape[0], ng = t_grid.shape[0], i, g, j, lo_i, hi_i, mid
    vals_np = np.zeros((npaths, ng))
    absn_np = np.zeros(npaths)
    cdef double[:, ::1] vals = vals_np
    cdef double[::1] absn = absn_np
    cdef Py_ssize_t natoms = params.shape[0] // 2 if kind == 0 else 0
    cdef double total, xi, clock, hold, decay, y, target, u, alpha, theta
    cdef uint64_t rng
    with nogil:
        for i in range(npaths):
            rng = seeds[i]
            xi = 0.0
            clock = 0.0
            g = 0
            decay = 1.0
            if kind == 0:
                total = params[natoms - 1]
            else:
                alpha = params[0]
                theta = params[1]
                total = params[2]
            while True:
                hold = -log1p(-_uniform(&rng)) / total * decay
                while g < ng and t_grid[g] < clock + hold:
                    vals[i, g] = exp(-xi)
                    g += 1
                clock += hold
                u = _uniform(&rng) * total
                if kind == 0:
                    lo_i = 0
                    hi_i = natoms - 1
                    while lo_i < hi_i:
                        mid = (lo_i + hi_i) // 2
                        if params[mid] > u:
                            hi_i = mid
                        else:
                            lo_i = mid + 1
                    y = params[natoms + lo_i]
                else:
                    # F(u) = u^theta (1-u)^-alpha; invert F(e^-y) = U * total
                    target = -log(u if u > 0 else 1e-300)
                    y = _beta_jump(alpha, theta, target, eps)
                xi += y
                decay = exp(-gamma * xi)
                if decay < tail:
                    break
            if tail_rate > 0:
                clock += decay / tail_rate
            absn[i] = clock
    return vals_np, absn_np
