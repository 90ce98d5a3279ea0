from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regrowth.laws import splitting_distribution, tree_prob
from regrowth.models import (
    AlphaGamma,
    AlphaTheta,
    AssumptionError,
    Ford,
    PoissonDirichlet,
    gibbs_norm,
    grow,
    grow_python,
    grow_sequence,
    grow_step,
    growth_probs,
    model_from_json,
)
from regrowth.partitions import PartitionN, set_partitions
from regrowth.trees import LabelledTree, enumerate_trees, remove_leaf

HALF = F(1, 2)
PI2 = PartitionN.from_blocks([[1], [2]])

EXACT_MODELS = [
    Ford(F(3, 10)),
    AlphaGamma(HALF, F(3, 10)),
    AlphaTheta(HALF, HALF),
    AlphaTheta(F(1, 3), F(2)),
    PoissonDirichlet(HALF, F(1, 4)),
    PoissonDirichlet(F(1, 3), F(-1, 2)),
]


def test_growth_probs_examples():
    assert growth_probs(AlphaTheta(HALF, HALF), PI2) == [F(1, 3)] * 3 + [0]
    a, g = F(2, 5), F(1, 5)
    assert growth_probs(AlphaGamma(a, g), PI2)[0] == g / (2 - a)
    a = F(3, 10)
    assert growth_probs(Ford(a), PI2)[:3] == [a / (2 - a), (1 - a) / (2 - a), (1 - a) / (2 - a)]


def test_growth_probs_rejects_one_block():
    with pytest.raises(ValueError):
        growth_probs(Ford(HALF), PartitionN.one(3))


@pytest.mark.parametrize("m", EXACT_MODELS, ids=repr)
def test_growth_probs_are_probability_vectors(m):
    for n in range(2, 9):
        g0 = m.g0(n)
        for pi in set_partitions(n):
            if pi.is_one():
                continue
            probs = growth_probs(m, pi)
            assert len(probs) == pi.k + 2
            assert sum(probs) == 1
            assert all(p >= 0 for p in probs)
            assert probs[0] == g0


@pytest.mark.parametrize("m", EXACT_MODELS, ids=repr)
def test_float_mode_matches_exact(m):
    fm = m.as_float()
    for pi in set_partitions(5):
        if not pi.is_one():
            np.testing.assert_allclose([float(x) for x in growth_probs(m, pi)], growth_probs(fm, pi), atol=1e-12)


def test_parameter_validation():
    with pytest.raises(ValueError):
        AlphaGamma(F(1, 3), HALF)
    with pytest.raises(ValueError):
        Ford(F(3, 2))
    with pytest.raises(AssumptionError):
        Ford(1)
    with pytest.raises(ValueError):
        model_from_json({"kind": "nope"})


def test_model_json_round_trip():
    for m in EXACT_MODELS:
        assert model_from_json(m.to_json()) == m
    m = model_from_json('{"kind": "alpha_theta", "alpha": "1/2", "theta": "1/2"}')
    assert m == AlphaTheta(HALF, HALF)


def test_gibbs_norm():
    assert gibbs_norm(HALF, F(1, 4), 2) == 1
    assert gibbs_norm(HALF, -1, 3) == F(3, 2)
    with pytest.raises(ValueError):
        gibbs_norm(HALF, -2, 4)


def test_gibbs_norm_ratio_grows_linearly():
    # c(n+1)/c(n) ~ n, so the ratio over n tends to one; exact to avoid overflow
    ratios = [float(gibbs_norm(HALF, F(1, 4), n + 1) / gibbs_norm(HALF, F(1, 4), n)) / n for n in (10, 100, 1000)]
    assert all(abs(r - 1) < 1 for r in ratios)
    assert abs(ratios[-1] - 1) < abs(ratios[0] - 1)


def test_grow_small_cases():
    t1 = LabelledTree.single()
    for m in EXACT_MODELS:
        assert grow(m, 1, seed=0) == t1
        assert grow_step(t1, m, seed=5) == LabelledTree.from_nested((1, 2))


def test_alpha_theta_is_binary():
    m = AlphaTheta(HALF, HALF)
    probs = {t: tree_prob(m, t) for t in enumerate_trees(3)}
    assert probs[(1, 2, 3)] == 0
    assert sorted(v for t, v in probs.items() if t != (1, 2, 3)) == [F(1, 3)] * 3


def test_ford_cherry_probability():
    assert tree_prob(Ford(HALF), ((1, 2), 3)) == F(1, 3)


def test_uniform_binary_model():
    m = AlphaTheta(HALF, HALF)
    for n, count in ((4, 15), (5, 105)):
        probs = [tree_prob(m, t) for t in enumerate_trees(n)]
        assert sorted(p for p in probs if p) == [F(1, count)] * count


def test_grow_sequence_is_consistent():
    for m in EXACT_MODELS:
        seq = grow_sequence(m.as_float(), 12, seed=7)
        for n in range(1, 12):
            assert remove_leaf(seq[n], n + 1) == seq[n - 1]


def test_grow_is_deterministic_given_seed():
    m = Ford(0.3)
    assert grow(m, 50, seed=11) == grow(m, 50, seed=11)
    assert grow(m, 50, seed=11) != grow(m, 50, seed=12)


def test_python_grower_matches_kernel_path():
    for m in (Ford(0.3), AlphaTheta(0.5, 0.5), PoissonDirichlet(0.5, 0.25)):
        for seed in range(5):
            assert grow(m, 40, seed=seed) == grow_python(m, 40, seed=seed)


@pytest.mark.slow
def test_empirical_t3_frequencies():
    m = AlphaGamma(HALF, F(3, 10))
    exact = {t: float(tree_prob(m, t)) for t in enumerate_trees(3)}
    samples = 100_000
    counts = dict.fromkeys(exact, 0)
    for s in range(samples):
        counts[grow(m.as_float(), 3, seed=s).nested()] += 1
    for t, p in exact.items():
        se = np.sqrt(p * (1 - p) / samples)
        assert abs(counts[t] / samples - p) <= 3 * se + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.integers(2, 30), st.integers(0, 2**32))
def test_alpha_gamma_grow_produces_valid_trees(alpha, frac, n, seed):
    m = AlphaGamma(alpha, alpha * frac)
    t = grow(m, n, seed=seed)
    assert t.n == n


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7))
def test_exact_splitting_sums_for_pd(n):
    m = PoissonDirichlet(HALF, F(1, 4))
    assert sum(splitting_distribution(m, n).values()) == 1
