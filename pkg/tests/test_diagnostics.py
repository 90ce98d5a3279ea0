import json
import math
from fractions import Fraction as F

import numpy as np
import pytest
from scipy import integrate

from regrowth.diagnostics import (
    Report,
    bound_holds_from,
    certified_step_series,
    corollary_terms,
    height_scaling_experiment,
    hm_condition_measure,
    loglog_slope,
    mass_condition_series,
    residual_limit_test,
    step_batch,
    step_series,
    tree_condition_series,
    window_onset,
)
from regrowth.laws import FiniteAtomic, FromGrowthRule, OrderedBetaMixture, PaintboxMixture, StepAtomic
from regrowth.models import AlphaGamma, AlphaTheta, Ford, PoissonDirichlet
from regrowth.partitions import OrderedPaintboxFamily, StepFamily, build_good_family


def _direct_step_series(d, n, which, j_far=2_000_000):
    """Per-atom sum from the families themselves, numeric tail beyond n."""
    g = d.gamma
    body = 0.0
    for j in range(2, n + 1):
        b = d.family(j).first_block_size(n)
        obs = max(b, n - b) / n if which == "tree" else b / n
        body += d.weight(j) * (obs - (1 - 1 / j))
    # j > n: Gamma(j)^[n] is one block, the term is w_j / j
    js = np.arange(n + 1, j_far + 1, dtype=float)
    tail = float(np.sum(g * js ** (g - 2.0))) + g * j_far ** (g - 1.0) / (1.0 - g)
    return body + tail


@pytest.mark.parametrize("kind", ["good", "half", "mixed"])
@pytest.mark.parametrize("which", ["tree", "mass"])
def test_step_series_matches_direct_sum(kind, which):
    d = StepAtomic(0.5, kind, 600)
    ns = [20, 57, 300, 600]
    s = step_series(d, ns, which)
    for n, v in zip(ns, s.value):
        assert v == pytest.approx(_direct_step_series(d, n, which), abs=1e-6)


def test_step_batch_matches_families():
    for kind in ("good", "half", "mixed"):
        d = StepAtomic(0.5, kind, 500)
        batch = step_batch(d, 500)
        for n in (10, 77, 500):
            sizes = batch.first_block_sizes(n)[: n - 1]
            assert sizes.tolist() == [d.family(j).first_block_size(n) for j in range(2, n + 1)]
    with pytest.raises(ValueError):
        step_batch(StepAtomic(0.5, "good", 100), 101)


def test_certified_series_encloses_float_series():
    d = StepAtomic(0.5, "half", 800)
    ns = [22, 100, 400, 800]
    c = certified_step_series(d, ns, "tree")
    f = step_series(d, ns, "tree")
    assert np.all(c.lo <= f.value) and np.all(f.value <= c.hi)
    width = c.hi - c.lo
    assert np.all(width < 5e-3) and np.all(np.diff(width) < 0)
    assert all(lo <= hi for lo, hi in zip(c.meta["exact_lo"], c.meta["exact_hi"]))


def test_good_series_tends_to_zero():
    d = StepAtomic(0.5, "good", 4096)
    s = tree_condition_series(d, [64, 512, 4096])
    assert np.all(np.diff(np.abs(s.value)) < 0)
    assert abs(s.value[-1]) < 0.01


def test_half_series_below_minus_a_third():
    d = StepAtomic(0.5, "half", 2048)
    onset = window_onset(d)
    s = certified_step_series(d, range(onset, 2049, 7), "tree")
    assert np.all(s.hi <= -1 / 3)
    assert bound_holds_from(s, -1 / 3) == onset
    with pytest.raises(ValueError):
        window_onset(StepAtomic(0.5, "good", 100))


def test_bound_holds_from():
    from regrowth.diagnostics import Series

    v = np.array([0.0, -1.0, 0.5, -1.0, -2.0])
    s = Series("x", np.arange(5) + 10, v, v, v)
    assert bound_holds_from(s, -0.5) == 13
    assert bound_holds_from(Series("x", np.arange(2), np.zeros(2), np.zeros(2), np.ones(2)), 0.5) is None


def test_exchangeable_half_atom_rate():
    d = PaintboxMixture([(1.0, [0.5, 0.5])])
    s = tree_condition_series(d, [100, 400, 1600], samples=40_000, seed=2)
    # E max(X, n - X)/n - 1/2 ~ 1/sqrt(2 pi n)
    scaled = s.value * np.sqrt(2 * np.pi * s.n)
    assert np.all(np.abs(scaled - 1) < 0.1)


def test_paintbox_mass_series_closed_form():
    d = PaintboxMixture([(1.0, [0.5, 0.3, 0.2])])
    s = mass_condition_series(d, [10, 100])
    np.testing.assert_allclose(s.value, float(d.lam(2)) / np.array([10, 100]))


def test_ordered_paintbox_atom_mass_lln():
    u = 0.3
    fam = OrderedPaintboxFamily(u, seed=5)
    s = mass_condition_series(FiniteAtomic([(1, fam)]), [100, 10_000])
    assert np.all(np.abs(s.value) <= 4 * np.sqrt(u * (1 - u) / s.n) + 1 / s.n)


def test_ordered_beta_mass_series_closed_form():
    d = OrderedBetaMixture(0.5, 0.5)
    s = mass_condition_series(d, [10, 1000])
    # E|Gamma_1^[n]| - u = (1 - u)/n, integrated against kappa gives lambda_2 / n
    np.testing.assert_allclose(s.value, d.lam(2) / np.array([10, 1000]))


def test_alpha_theta_tree_series_shrinks():
    s = tree_condition_series(AlphaTheta(0.5, 0.5), [10, 100, 1000])
    assert np.all(np.diff(np.abs(s.value)) < 0)


def test_corollary_examples():
    mism, s = corollary_terms(StepAtomic(0.5, "good", 2000), [100, 2000])
    assert mism == 0.0
    quarter = StepFamily(2, [(F(1, 4), None)])
    assert quarter.first_limit == F(1, 4)
    mism, _ = corollary_terms(FiniteAtomic([(F(3, 2), quarter)]), [50])
    assert mism == 1.5


def test_corollary_alpha_theta_mismatch_quadrature():
    d = OrderedBetaMixture(0.5, 0.5)
    mism, _ = corollary_terms(d, [50])
    ref, _ = integrate.quad(lambda u: (0.5 * u + 0.5 * (1 - u)) * u ** -0.5 * (1 - u) ** -1.5, 0, 0.5)
    assert mism == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("m", [Ford(F(1, 2)), AlphaGamma(F(1, 2), F(1, 5)), PoissonDirichlet(F(1, 3), F(1, 2))],
                         ids=repr)
def test_hm_identity_exact(m):
    d = FromGrowthRule(m, 1)
    for n in range(2, 8):
        hm = hm_condition_measure(m, n)
        for f in (lambda s: 1, lambda s: s[0], lambda s: s[0] ** 2):
            assert hm.integrate(f) == hm.kappa_side(d, f)


def test_hm_ford_three_leaves():
    hm = hm_condition_measure(Ford(F(1, 2)), 3)
    assert hm.atoms == {(F(2, 3), F(1, 3)): F(1, 2)}


def test_hm_total_mass_equals_kappa_integral():
    m = Ford(F(1, 2))
    d = FromGrowthRule(m, 1)
    hm = hm_condition_measure(m, 6)
    assert hm.total() == hm.kappa_side(d, lambda s: 1)


def test_loglog_slope():
    ns = np.array([10, 100, 1000])
    assert loglog_slope(ns, 3 * ns ** 0.5) == pytest.approx(0.5)


def test_height_experiment_is_worker_independent():
    m = AlphaTheta(0.5, 0.5)
    a = height_scaling_experiment(m, [50, 100], samples=200, seed=3)
    b = height_scaling_experiment(m, [50, 100], samples=200, seed=3, workers=2)
    assert a.rows == b.rows or json.dumps(a.rows, default=str) == json.dumps(b.rows, default=str)
    assert all(r["mean"] > 0 for r in a.rows)
    assert math.isnan(a.rows[0]["ratio"]) and a.rows[1]["ratio"] > 0
    assert a.summary["gamma_hat"] == pytest.approx(0.5, abs=0.1)
    with pytest.raises(ValueError):
        height_scaling_experiment(m, [100, 50], samples=10)


def test_report_serialisation():
    rep = residual_limit_test(AlphaTheta(0.5, 0.5), n=300, t_list=(0.25, 0.5), samples=300, seed=1, gamma=0.5)
    data = json.loads(rep.dumps())
    assert data["kind"] == "residual"
    assert {"t", "ks", "p_value", "chain_mean", "limit_mean"} <= set(data["rows"][0])
    assert data["summary"]["exact_limit_mean"] == pytest.approx(math.pi / 2, rel=1e-6)
    assert rep.to_csv().startswith("t,ks")
    assert isinstance(Report("x", {}, None).to_csv(), str)


@pytest.mark.slow
def test_mixed_measure_keeps_chain_away_from_limit():
    d = StepAtomic(0.5, "mixed", 200_000)
    rep = residual_limit_test(d, n=1000, t_list=(0.25, 0.5, 1.0), samples=1000, seed=2,
                              limit_samples=1000, j_max=20_000)
    assert min(r["ks"] for r in rep.rows) > 0.1
