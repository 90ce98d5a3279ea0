import math
from collections import defaultdict
from fractions import Fraction as F

import numpy as np
import pytest
from scipy import special, stats

from regrowth.laws import FiniteAtomic, FromGrowthRule, OrderedBetaMixture, PaintboxMixture, kappa_cylinder, tree_prob
from regrowth.models import AlphaGamma, AlphaTheta, Ford, PoissonDirichlet
from regrowth.partitions import RuleFamily, set_partitions
from regrowth.residual import (
    Composition,
    MassChainPath,
    chain_samples,
    first_step_law,
    jump_law,
    lamperti_batch,
    lamperti_path,
    laplace_exponent,
    residual_chain,
    scaled_chain_path,
    truncation_level,
    uniform_leaf_exponent,
)
from regrowth.trees import LabelledTree, enumerate_trees

HALF = F(1, 2)


@pytest.mark.parametrize("nested,path,comp", [
    ((1, 2), (2, 1, 0), (1, 1)),
    (((1, 2), 3), (3, 2, 1, 0), (1, 1, 1)),
    ((1, 2, 3), (3, 1, 0), (2, 1)),
])
def test_residual_chain_examples(nested, path, comp):
    p, c = residual_chain(LabelledTree.from_nested(nested))
    assert p.values == path
    assert c.parts == comp
    assert p.absorption == len(path) - 1


def test_path_and_composition_validation():
    with pytest.raises(ValueError):
        MassChainPath((3, 3, 1, 0))
    with pytest.raises(ValueError):
        Composition((2, 0))


def test_path_composition_duality():
    for t in enumerate_trees(6):
        p, c = residual_chain(t)
        assert c.n == 6
        assert list(c.parts[:-1]) == [a - b for a, b in zip(p.values[:-2], p.values[1:-1])]
        assert c.parts[-1] == 1


def test_first_step_law_examples():
    assert first_step_law(Ford(HALF), 2) == {1: 1}
    a = F(3, 10)
    assert first_step_law(Ford(a), 3) == {1: (1 - a) / (2 - a), 2: 1 / (2 - a)}


@pytest.mark.parametrize("m", [Ford(F(3, 10)), AlphaGamma(HALF, F(1, 5)), PoissonDirichlet(HALF, F(1, 4))], ids=repr)
def test_first_step_law_matches_kappa(m):
    d = FromGrowthRule(m, 1)
    for n in range(2, 8):
        law = first_step_law(m, n)
        assert sum(law.values()) == 1
        by_size = defaultdict(F)
        for pi in set_partitions(n):
            if not pi.is_one():
                by_size[len(pi.blocks[0])] += kappa_cylinder(d, pi)
        assert law == {j: by_size[j] / d.lam(n) for j in range(1, n)}


def _alpha_theta_first_law(alpha, theta, n):
    # closed-form splitting rule summed over first blocks of size j
    out = np.zeros(n)
    for j in range(1, n):
        base = special.gammaln(j - 1 + theta) + special.gammaln(n - j - alpha) \
            - special.gammaln(n - 1 + theta) - special.gammaln(1 - alpha)
        with_two = math.comb(n - 2, j - 2) * alpha if j >= 2 else 0.0
        without = math.comb(n - 2, j - 1) * theta
        out[j] = (with_two + without) * math.exp(base)
    return out[1:]


def test_first_step_law_monte_carlo_at_50():
    m = AlphaTheta(0.5, 0.5)
    exact = _alpha_theta_first_law(0.5, 0.5, 50)
    assert exact.sum() == pytest.approx(1.0, abs=1e-12)
    mc = first_step_law(m, 50, exact=False, samples=40_000, seed=3)
    p = np.array([mc[j][0] for j in range(1, 50)])
    se = np.sqrt(exact * (1 - exact) / 40_000)
    assert np.all(np.abs(p - exact) <= 4 * se + 1e-12)
    assert p.sum() == pytest.approx(1.0)


def test_regenerative_compositions():
    # conditionally on C_0 = j the rest of the composition is a copy of C_{n-j}
    m = AlphaGamma(HALF, F(1, 5))
    laws = {}
    for n in range(1, 7):
        law = defaultdict(F)
        for t in enumerate_trees(n):
            law[residual_chain(t)[1].parts] += tree_prob(m, t)
        laws[n] = law
    for n in range(2, 7):
        head = defaultdict(F)
        for parts, p in laws[n].items():
            head[parts[0]] += p
        for parts, p in laws[n].items():
            j = parts[0]
            assert p == head[j] * laws[n - j][parts[1:]]


def test_laplace_exponent_single_atom():
    w = F(3, 2)
    psi = laplace_exponent(FiniteAtomic([(w, RuleFamily.odds_evens())]))
    for s in (0.0, 0.5, 1.0, 3.0):
        assert psi(s) == pytest.approx(float(w) * (1 - 2.0 ** -s))


def _trapezoid_psi_one(alpha, theta):
    # u = sin(phi)^2 makes the integrand smooth for alpha = theta = 1/2
    phi = np.linspace(0.0, np.pi / 2, 1_000_001)
    u = np.sin(phi) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (1 - u) * (alpha * u + theta * (1 - u)) * u ** (theta - 1) * (1 - u) ** (-alpha - 1) \
            * 2 * np.sin(phi) * np.cos(phi)
    f[0] = 2 * theta
    f[-1] = 2 * alpha
    return np.trapezoid(f, phi) if hasattr(np, "trapezoid") else np.trapz(f, phi)


def test_alpha_theta_psi_one_against_trapezoid():
    psi = laplace_exponent(OrderedBetaMixture(0.5, 0.5))
    oracle = _trapezoid_psi_one(0.5, 0.5)
    assert psi(1.0) == pytest.approx(oracle, abs=1e-8)
    assert oracle == pytest.approx(math.pi / 2, abs=1e-10)


@pytest.mark.parametrize("d", [
    OrderedBetaMixture(0.5, 0.5),
    OrderedBetaMixture(0.3, 2.0),
    FiniteAtomic([(1, RuleFamily.odds_evens())]),
    PaintboxMixture([(1.0, [0.5, 0.3, 0.2]), (0.5, [0.9, 0.1])]),
    Ford(0.25),
], ids=["beta", "beta2", "atom", "paintbox", "ford"])
def test_psi_is_bernstein_on_grid(d):
    psi = laplace_exponent(d)
    assert psi(0.0) == 0.0
    assert psi.check_bernstein(np.linspace(0, 10, 41))


def test_uniform_leaf_examples():
    w = 2.0
    d = PaintboxMixture([(w, [0.5, 0.5])])
    assert uniform_leaf_exponent(d)(1.0) == pytest.approx(w / 2)
    mix = PaintboxMixture([(1.0, [0.5, 0.3, 0.2]), (0.5, [0.9, 0.1])],
                          binary_density=lambda x: x ** -0.5, upper=0.999)
    for s in (0.5, 1.0, 2.0):
        assert laplace_exponent(mix)(s) == pytest.approx(uniform_leaf_exponent(mix)(s), abs=1e-8)
    d = OrderedBetaMixture(0.5, 0.25)
    assert abs(laplace_exponent(d)(1.0) - uniform_leaf_exponent(d)(1.0)) > 1e-3


def test_truncation_meets_drift_bound():
    d = OrderedBetaMixture(0.5, 0.5)
    eps = truncation_level(d, 1e-4)
    law = jump_law(d, eps)
    assert 0 < law.neglected_drift < 1e-4
    with pytest.raises(ValueError):
        jump_law(d, eps=0.0)


def test_lamperti_single_atom_closed_form():
    w = 1.5
    law = jump_law(FiniteAtomic([(w, RuleFamily.odds_evens())]))
    t = np.array([0.0, 0.2, 0.7, 1.5])
    vals, absn = lamperti_batch(law, 0.5, t, 4000, seed=9)
    assert np.all(vals[:, 0] == 1.0)
    pos = vals[vals > 0]
    assert np.allclose(np.log2(pos), np.round(np.log2(pos)))
    assert np.all(np.diff(vals, axis=1) <= 0)
    exact = 1 / (w * (1 - 2 ** -0.5))
    assert abs(absn.mean() - exact) < 4 * absn.std() / np.sqrt(len(absn))


def test_lamperti_one_path():
    law = jump_law(Ford(0.5))
    vals, a = lamperti_path(law, 0.5, [0.0, 0.1, 0.5], seed=1)
    assert vals[0] == 1.0
    assert np.all(np.diff(vals) <= 0)
    assert a > 0


def test_kernel_and_python_lamperti_have_the_same_law():
    # the fallback is vectorised with its own stream, so compare distributions
    law = jump_law(Ford(0.5))
    t = [0.1, 0.5]
    a_vals, a_abs = lamperti_batch(law, 0.5, t, 3000, seed=4)
    b_vals, b_abs = lamperti_batch(law, 0.5, t, 3000, seed=5, pure=True)
    for i in range(len(t)):
        assert stats.ks_2samp(a_vals[:, i], b_vals[:, i]).pvalue > 1e-3
    assert stats.ks_2samp(a_abs, b_abs).pvalue > 1e-3


def test_scaled_chain_path_shape():
    ch = scaled_chain_path(AlphaTheta(0.5, 0.5), 500, seed=2)
    assert ch(0.0) == 1.0
    grid = np.linspace(0, ch.absorption + 1, 200)
    v = ch(grid)
    assert np.all(np.diff(v) <= 0)
    assert ch(ch.absorption + 1e-9) == 0.0


def test_residual_path_kernel_matches_python():
    from regrowth import kernels

    for m in (Ford(0.3), AlphaTheta(0.5, 0.5), PoissonDirichlet(0.5, 0.25)):
        for seed in range(10):
            a = kernels.residual_path(m, 60, seed)
            b = kernels.residual_path(m, 60, seed, pure=True)
            np.testing.assert_array_equal(a, b)
    a = chain_samples(PoissonDirichlet(0.5, 0.25), 60, 50, seed=5)
    b = chain_samples(PoissonDirichlet(0.5, 0.25), 60, 50, seed=5, pure=True)
    np.testing.assert_array_equal(a, b)


@pytest.mark.slow
def test_finite_atomic_limit_matches_large_chain():
    # step-rule atoms with first frequencies 1 - 1/j; chain oracle at large n
    from regrowth.diagnostics import residual_limit_test
    from regrowth.laws import StepAtomic

    rep = residual_limit_test(StepAtomic(0.5, "good", 20_000), n=5000, t_list=(0.25, 0.5, 1.0),
                              samples=2000, seed=1, gamma=0.5, limit_samples=2000, j_max=20_000)
    assert max(r["ks"] for r in rep.rows) < 0.05
    assert stats.norm.sf(abs(rep.summary["z"])) > 1e-4
