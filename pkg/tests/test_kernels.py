"""The compiled kernels and the pure-Python fallback must agree draw for draw."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regrowth import kernels
from regrowth.models import AlphaGamma, AlphaTheta, Ford, PoissonDirichlet, grow, grow_python
from regrowth.trees import height

MODELS = [Ford(0.3), AlphaGamma(0.6, 0.2), AlphaTheta(0.5, 0.5), AlphaTheta(0.2, 3.0), PoissonDirichlet(0.5, 0.25),
          PoissonDirichlet(0.3, -0.5)]


def test_backend_flag():
    assert isinstance(kernels.HAVE_KERNELS, bool)
    assert kernels.backend(pure=True).__name__.endswith("_fallback")


@pytest.mark.parametrize("m", MODELS, ids=repr)
def test_grow_arrays_agree(m):
    for seed in range(20):
        a = kernels.grow_arrays(m, 64, seed)
        b = kernels.grow_arrays(m, 64, seed, pure=True)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(np.asarray(x), np.asarray(y))


@pytest.mark.parametrize("m", MODELS, ids=repr)
def test_grow_heights_agree(m):
    seeds = list(range(30))
    a = kernels.grow_heights(m, 80, seeds)
    b = kernels.grow_heights(m, 80, seeds, pure=True)
    np.testing.assert_array_equal(a, b)
    assert [int(x) for x in a] == [int(height(grow_python(m, 80, s))) for s in seeds]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(MODELS), st.integers(1, 120), st.integers(0, 2**63 - 1))
def test_grow_paths_agree(m, n, seed):
    assert grow(m, n, seed) == grow_python(m, n, seed)
