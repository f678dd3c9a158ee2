import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quadlimit.errors import (
    InstanceTooLargeError,
    SimulationOverflowError,
    ValidationError,
)
from quadlimit.graphs import GraphFamily, build, count_subgraph, induced_truncation
from quadlimit.quadform import (
    Pmf,
    SimConfig,
    SparseLaw,
    decompose,
    decompose_samples,
    exact_pmf,
    general_law_mismatch,
    moment,
    poisson_theta_for_p1,
    simulate,
    simulate_samples,
    truncated_mean_var,
)

import reference as ref


def fam(kind, seed=None, **params):
    return GraphFamily(kind, params, seed)


def bern_cfg(samples, seed, p, **kw):
    return SimConfig(samples=samples, seed=seed, law=SparseLaw.bernoulli(p), **kw)


# ---------------------------------------------------------------------------
# sparse laws


def test_law_p1_formulas():
    assert SparseLaw.bernoulli(0.2).p1 == pytest.approx(0.2)
    th = 0.7
    assert SparseLaw.poisson(th).p1 == pytest.approx(th * math.exp(-th))
    m, q = 5, 0.1
    assert SparseLaw.binomial(m, q).p1 == pytest.approx(m * q * (1 - q) ** (m - 1))
    assert SparseLaw.negbinomial(m, q).p1 == pytest.approx(m * q * (1 - q) ** m)
    N, K, mm = 30, 4, 6
    exact = K * math.comb(N - K, mm - 1) / math.comb(N, mm)
    assert SparseLaw.hypergeometric(N, K, mm).p1 == pytest.approx(exact)


def test_law_p0_and_mean():
    assert SparseLaw.poisson(0.5).p0 == pytest.approx(math.exp(-0.5))
    assert SparseLaw.binomial(4, 0.3).mean == pytest.approx(1.2)
    assert SparseLaw.negbinomial(3, 0.25).mean == pytest.approx(1.0)
    law = SparseLaw.hypergeometric(20, 5, 4)
    assert law.mean == pytest.approx(1.0)
    assert law.p0 == pytest.approx(math.comb(15, 4) / math.comb(20, 4))


def test_law_validation():
    with pytest.raises(ValidationError):
        SparseLaw.bernoulli(0.0)
    with pytest.raises(ValidationError):
        SparseLaw.poisson(-1.0)
    with pytest.raises(ValidationError):
        SparseLaw.binomial(0, 0.5)
    with pytest.raises(ValidationError):
        SparseLaw.hypergeometric(5, 3, 4)  # m + K > N, no room for X = 0
    with pytest.raises(ValidationError):
        SparseLaw("lognormal", (1.0,))


def test_bernoulli_one_allowed():
    law = SparseLaw.bernoulli(1.0)
    assert law.p1 == 1.0 and law.p0 == 0.0


def test_poisson_theta_solver():
    for p in (0.01, 0.1, 0.3, 1 / math.e - 1e-6):
        th = poisson_theta_for_p1(p)
        assert th * math.exp(-th) == pytest.approx(p, abs=1e-13)
        assert th < 1.0
    with pytest.raises(ValidationError):
        poisson_theta_for_p1(0.5)


@pytest.mark.parametrize("law", [
    SparseLaw.poisson(1.3),
    SparseLaw.binomial(6, 0.35),
    SparseLaw.negbinomial(2, 0.4),
    SparseLaw.hypergeometric(25, 6, 7),
], ids=lambda l: l.kind)
def test_conditional_sampler_distribution(law):
    from quadlimit.rng import stream
    rng = stream(42, "cond", law.kind)
    n = 200_000
    draws = law.sample_conditional_positive(rng, n)
    assert draws.min() >= 1
    # conditional pmf by recursion
    pk = law.p1
    q = law.prob_active
    k = 1
    expect = {}
    while pk / q > 1e-7:
        expect[k] = pk / q
        pk *= law._pmf_ratio(k)
        k += 1
        if k > 500:
            break
    emp = {int(v): c / n for v, c in zip(*np.unique(draws, return_counts=True))}
    for k, pr in expect.items():
        se = math.sqrt(pr * (1 - pr) / n)
        assert abs(emp.get(k, 0.0) - pr) < 5 * se + 1e-6


# ---------------------------------------------------------------------------
# pmf container


def test_pmf_validation():
    with pytest.raises(ValidationError):
        Pmf({0: 0.5, 1: 0.1})  # mass 0.6
    with pytest.raises(ValidationError):
        Pmf({0: 1.1, 1: -0.1})
    with pytest.raises(ValidationError):
        Pmf({-1: 0.5, 0: 0.5})
    p = Pmf({1: 0.25, 0: 0.5}, tail_mass=0.25)
    assert list(p.probs) == [0, 1]
    assert p.tail_mass == 0.25


def test_pmf_moments():
    p = Pmf({0: 0.25, 1: 0.5, 2: 0.25})
    assert p.mean == pytest.approx(1.0)
    assert p.variance == pytest.approx(0.5)
    assert p.moment(3) == pytest.approx(0.5 + 8 * 0.25)


# ---------------------------------------------------------------------------
# exact enumeration


def test_exact_pmf_k2():
    pmf = exact_pmf(build(fam("complete", n=2)), 0.5)
    assert pmf.probs == {0: pytest.approx(0.75), 1: pytest.approx(0.25)}


def test_exact_pmf_k3():
    pmf = exact_pmf(build(fam("complete", n=3)), 0.5)
    assert pmf.probs == {0: pytest.approx(0.5), 1: pytest.approx(0.375),
                         3: pytest.approx(0.125)}


def test_exact_pmf_path3_moments():
    pmf = exact_pmf(build(fam("path", n=3)), 0.1)
    assert pmf.mean == pytest.approx(0.02, abs=1e-12)
    assert pmf.variance == pytest.approx(0.0216, abs=1e-12)


def test_exact_pmf_against_brute_force():
    rng = np.random.default_rng(10)
    for _ in range(12):
        n = int(rng.integers(2, 9))
        g = build(fam("erdos-renyi", n=n, q=0.5, seed=int(rng.integers(10 ** 6))))
        p = float(rng.choice([0.1, 0.3, 0.5, 0.9]))
        got = exact_pmf(g, p)
        want = ref.brute_pmf(g.n, g.edges.tolist(), p)
        assert set(got.probs) == {k for k, v in want.items() if v > 0}
        for k, v in want.items():
            assert got.prob(k) == pytest.approx(v, abs=1e-12)


def test_exact_pmf_degenerate_p():
    g = build(fam("complete", n=3))
    assert exact_pmf(g, 0.0).probs == {0: 1.0}
    assert exact_pmf(g, 1.0).probs == {3: 1.0}


def test_exact_pmf_too_large():
    with pytest.raises(InstanceTooLargeError):
        exact_pmf(build(fam("cycle", n=23)), 0.5)


# ---------------------------------------------------------------------------
# moments


def test_moment_first_order():
    g = build(fam("complete", n=4))
    assert moment(g, 0.5, 1) == pytest.approx(1.5)
    g = build(fam("cycle", n=9))
    assert moment(g, 0.2, 1) == pytest.approx(9 * 0.04)


def test_moment_second_order_path3():
    g = build(fam("path", n=3))
    p = 0.1
    assert moment(g, p, 2) == pytest.approx(2 * p ** 2 + 2 * p ** 3, abs=1e-15)


def test_moments_match_enumeration():
    rng = np.random.default_rng(11)
    graphs = [build(fam("complete", n=4)), build(fam("path", n=5)),
              build(fam("cycle", n=6)), build(fam("star", n=4)),
              build(fam("star-plus-matching", n=2))]
    for _ in range(10):
        graphs.append(build(fam("erdos-renyi", n=int(rng.integers(3, 9)),
                                q=float(rng.uniform(0.2, 0.9)),
                                seed=int(rng.integers(10 ** 6)))))
    for g in graphs:
        for p in (0.1, 0.3, 0.5):
            pmf = ref.brute_pmf(g.n, g.edges.tolist(), p)
            for a in (1, 2, 3):
                want = ref.pmf_moment(pmf, a)
                assert moment(g, p, a) == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_moment_bad_order():
    with pytest.raises(ValidationError):
        moment(build(fam("path", n=3)), 0.5, 4)


def test_moment_truncated():
    g = build(fam("star-plus-matching", n=9))
    # M=1, r_n=3 keeps only the matching: mean 9 p^2, no two-stars
    p = 0.2
    assert moment(g, p, 1, M=1.0, r_n=3.0) == pytest.approx(9 * p ** 2)
    assert moment(g, p, 2, M=1.0, r_n=3.0) == pytest.approx(
        9 * p ** 2 + (81 - 9) * p ** 4)


# ---------------------------------------------------------------------------
# truncated mean / variance


def test_truncated_mean_var_path3():
    g = build(fam("path", n=3))
    mean, var = truncated_mean_var(g, 0.1, 100.0, 1.0)
    assert mean == pytest.approx(0.02, abs=1e-15)
    assert var == pytest.approx(0.0216, abs=1e-15)


def test_truncated_mean_var_star_vanishes():
    n = 16
    g = build(fam("star", n=n))
    mean, var = truncated_mean_var(g, 1 / math.sqrt(n), 1.0, math.sqrt(n))
    assert mean == 0.0 and var == 0.0


def test_truncated_mean_var_cycle_large():
    n = 10 ** 5
    g = build(fam("cycle", n=n))
    p = math.sqrt(2 / n)
    mean, var = truncated_mean_var(g, p, 10.0, 1 / p)
    assert mean == pytest.approx(2.0, abs=1e-12)
    assert abs(var - 2.0) / 2.0 < 0.01


def test_truncated_mean_var_matches_enumeration_in_rationals():
    rng = np.random.default_rng(12)
    for _ in range(8):
        n = int(rng.integers(3, 9))
        g = build(fam("erdos-renyi", n=n, q=0.6, seed=int(rng.integers(10 ** 6))))
        M, r_n = 0.8, float(rng.integers(1, 4))
        gm = induced_truncation(g, M, r_n)
        for p in (Fraction(1, 10), Fraction(3, 10), Fraction(1, 2)):
            pmf = ref.brute_pmf(gm.n, gm.edges.tolist(), float(p))
            mean_enum = sum(Fraction(k) * Fraction(v).limit_denominator(10 ** 14)
                            for k, v in pmf.items())
            m = gm.m
            s = count_subgraph(gm, "two_star")
            mean_formula = m * p ** 2
            var_formula = (1 - p ** 2) * mean_formula + 2 * p ** 3 * (1 - p) * s
            got_mean, got_var = truncated_mean_var(g, float(p), M, r_n)
            assert got_mean == pytest.approx(float(mean_formula), abs=1e-13)
            assert got_var == pytest.approx(float(var_formula), abs=1e-13)
            assert abs(float(mean_enum) - float(mean_formula)) < 1e-9


# ---------------------------------------------------------------------------
# simulation


def test_simulate_point_mass():
    g = build(fam("complete", n=2))
    pmf = simulate(g, bern_cfg(500, 1, 1.0))
    assert pmf.probs == {1: 1.0}
    assert pmf.tail_mass == 0.0


def test_simulate_deterministic_and_chunk_invariant():
    g = build(fam("erdos-renyi", n=30, q=0.3, seed=5))
    a = simulate(g, bern_cfg(20_000, 7, 0.2))
    b = simulate(g, bern_cfg(20_000, 7, 0.2))
    c = simulate(g, bern_cfg(20_000, 7, 0.2, chunks=8))
    assert a.probs == b.probs == c.probs
    d = simulate(g, bern_cfg(20_000, 8, 0.2))
    assert a.probs != d.probs


def test_simulate_matches_exact_small():
    rng = np.random.default_rng(13)
    for _ in range(5):
        n = int(rng.integers(3, 11))
        g = build(fam("erdos-renyi", n=n, q=0.5, seed=int(rng.integers(10 ** 6))))
        p = float(rng.choice([0.1, 0.3, 0.5]))
        nsamp = 100_000
        emp = simulate(g, bern_cfg(nsamp, int(rng.integers(10 ** 6)), p))
        ex = exact_pmf(g, p)
        se = math.sqrt(max(ex.variance, 1e-12) / nsamp)
        assert abs(emp.mean - ex.mean) < 4 * se + 1e-9


def test_simulate_truncation_applied():
    g = build(fam("star-plus-matching", n=9))
    p = 0.3
    pmf = simulate(g, bern_cfg(50_000, 3, p, M=1.0, r_n=3.0))
    # only the 9 matching edges remain, so T is Bin(9, p^2)
    mean, var = 9 * p ** 2, 9 * p ** 2 * (1 - p ** 2)
    se = math.sqrt(var / 50_000)
    assert abs(pmf.mean - mean) < 4 * se
    assert max(pmf.support()) <= 9
    for k in range(4):
        want = math.comb(9, k) * p ** (2 * k) * (1 - p ** 2) ** (9 - k)
        assert abs(pmf.prob(k) - want) < 5 * math.sqrt(want * (1 - want) / 50_000) + 1e-3


def test_simulate_general_law_mean():
    g = build(fam("cycle", n=60))
    law = SparseLaw.poisson(0.4)
    cfg = SimConfig(samples=200_000, seed=9, law=law)
    pmf = simulate(g, cfg)
    # E T = |E| (E X)^2 for i.i.d. integer sites
    want = 60 * law.mean ** 2
    # rough SE bound via second moments of Poisson products
    assert abs(pmf.mean - want) / want < 0.05


def test_simulate_overflow_guard():
    g = build(fam("complete", n=4))
    with pytest.raises(SimulationOverflowError):
        simulate(g, bern_cfg(100, 1, 1.0, max_value=2))


def test_sim_config_validation():
    law = SparseLaw.bernoulli(0.5)
    with pytest.raises(ValidationError):
        SimConfig(samples=0, seed=1, law=law)
    with pytest.raises(ValidationError):
        SimConfig(samples=10, seed=1, law=law, chunks=0)
    with pytest.raises(ValidationError):
        SimConfig(samples=10, seed=1, law=law, M=1.0)  # r_n missing
    with pytest.raises(ValidationError):
        SimConfig(samples=10, seed=1, law="bernoulli")


def test_union_bound_mismatch_order():
    # Cor-style check: fraction of replicates where integer products differ
    # from indicators is of order |E| P(X>=2) P(X>=1)
    g = build(fam("cycle", n=400))
    law = SparseLaw.poisson(0.05)
    cfg = SimConfig(samples=100_000, seed=21, law=law)
    frac = general_law_mismatch(g, cfg)
    bound = 2 * g.m * law.prob_ge2 * law.prob_active
    assert frac <= bound * 1.5 + 5e-4
    assert frac >= bound / 50


# ---------------------------------------------------------------------------
# decomposition


def test_decompose_sums_to_simulate():
    g = build(fam("coexistence-1", n=8))
    cfg = bern_cfg(5_000, 17, 1 / 8, M=10.0, r_n=8.0)
    parts = decompose_samples(g, 1.0, 10.0, 8.0, cfg)
    direct = simulate_samples(g, cfg)
    assert np.array_equal(parts.sum(axis=0), direct)


def test_decompose_no_tail_when_k_covers_graph():
    g = build(fam("complete", n=6))
    cfg = bern_cfg(2_000, 2, 0.3)
    res = decompose(g, K=6.0, M=100.0, r_n=1.0, cfg=cfg)
    assert res.cross.probs == {0: 1.0}
    assert res.tail.probs == {0: 1.0}
    assert res.head.probs == res.total.probs


def test_decompose_coexistence_tail_is_poissonish():
    n = 60
    g = build(fam("coexistence-1", n=n))
    cfg = bern_cfg(40_000, 23, 1 / n, M=float(n), r_n=float(n))
    res = decompose(g, K=1.0, M=float(n), r_n=float(n), cfg=cfg)
    # the path component behaves like Pois(1) already at moderate n
    pois = {k: math.exp(-1) / math.factorial(k) for k in range(12)}
    tv = ref.tv_dicts(res.tail.probs, pois)
    assert tv < 0.05


def test_decompose_bad_window():
    g = build(fam("path", n=4))
    cfg = bern_cfg(10, 1, 0.5)
    with pytest.raises(ValidationError):
        decompose_samples(g, K=10.0, M=1.0, r_n=2.0, cfg=cfg)


# ---------------------------------------------------------------------------
# property tests


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10 ** 6),
       st.sampled_from([0.1, 0.3, 0.5]))
def test_property_exact_pmf_moments(n, seed, p):
    g = build(fam("erdos-renyi", n=n, q=0.5, seed=seed))
    pmf = exact_pmf(g, p)
    assert pmf.mean == pytest.approx(moment(g, p, 1), abs=1e-10)
    assert pmf.moment(2) == pytest.approx(moment(g, p, 2), abs=1e-10)
    assert pmf.moment(3) == pytest.approx(moment(g, p, 3), abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10 ** 6))
def test_property_simulate_support_bounded(n, seed):
    g = build(fam("erdos-renyi", n=n, q=0.7, seed=seed))
    pmf = simulate(g, bern_cfg(2_000, seed, 0.5))
    assert all(0 <= k <= g.m for k in pmf.support())
