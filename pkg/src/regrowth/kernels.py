"""Kernel selection: the compiled extension when it imports, else the fallback.

Set ``REGROWTH_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from ._rng import seed_to_int

if os.environ.get("REGROWTH_PURE_PYTHON"):
    from . import _fallback as _impl

    HAVE_KERNELS = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        HAVE_KERNELS = True
    except ImportError:  # pragma: no cover - depends on the build
        from . import _fallback as _impl

        HAVE_KERNELS = False

from . import _fallback

__all__ = ["HAVE_KERNELS", "backend", "grow_arrays", "grow_heights", "residual_path", "lamperti_batch", "model_args"]


def backend(pure: bool = False):
    return _fallback if pure else _impl


def model_args(m, n: int):
    """(code, a, b, g0 table, r table) for a float named model."""
    if m.kernel_code is None:
        raise TypeError(f"{m!r} has no compiled kernel")
    a, b = m.kernel_args()
    if m.kernel_code == 2:
        g0, r = m.as_float().tables(n + 1) if m.exact else m.tables(n + 1)
        return m.kernel_code, a, b, g0, r
    return m.kernel_code, a, b, None, None


def grow_arrays(m, n: int, seed=None, pure: bool = False):
    code, a, b, g0, r = model_args(m, n)
    return backend(pure).grow_arrays(code, a, b, n, seed_to_int(seed), g0, r)


def grow_heights(m, n: int, seeds, pure: bool = False):
    code, a, b, g0, r = model_args(m, n)
    seeds = np.ascontiguousarray([seed_to_int(s) for s in seeds], dtype=np.uint64)
    return backend(pure).grow_heights(code, a, b, n, seeds, g0, r)


def residual_path(m, n: int, seed=None, pure: bool = False):
    code, a, b, g0, r = model_args(m, n)
    return backend(pure).residual_path(code, a, b, n, seed_to_int(seed), g0, r)


def lamperti_batch(kind, params, eps, gamma, t_grid, seeds, tail=1e-10, tail_rate=0.0, pure=False):
    return backend(pure).lamperti_batch(
        int(kind),
        np.ascontiguousarray(params, dtype=np.float64),
        float(eps),
        float(gamma),
        np.ascontiguousarray(t_grid, dtype=np.float64),
        np.ascontiguousarray(seeds, dtype=np.uint64),
        float(tail),
        float(tail_rate),
    )
