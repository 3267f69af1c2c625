from fractions import Fraction as F
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condrep.instances import pattern_joint, random_joint
from condrep.intervals import IntervalSet
from condrep.measures import kernel_y_given, marginals
from condrep.operators import (
    BernoulliMixture,
    Cor2Law,
    TooLarge,
    apply_T,
    apply_Tstar,
    bernoulli_mixture_g,
    cor2_check,
    cor2_search,
    cor2_windows,
    operator_norm_bounds,
    solve_unconstrained,
    xi_criterion,
    xi_singletons,
)
from condrep.representation import DimensionMismatch

seeds = st.integers(0, 2**32 - 1)


def brute_xi(dj):
    Ms = kernel_y_given(dj).rows
    I, J = dj.shape
    return min(
        max(sum((Ms[j, i] for i in A), F(0)) for j in range(J))
        for r in range(1, I + 1)
        for A in combinations(range(I), r)
    )


def test_T_constant(sym2):
    assert list(apply_T(sym2, [1, 1])) == [1, 1]
    assert list(apply_Tstar(sym2, [1, 1])) == [1, 1]


def test_T_worked_example(sym2):
    assert list(apply_T(sym2, [F(3, 2), F(-1, 2)])) == [1, 0]


def test_T_dimension(sym2):
    with pytest.raises(DimensionMismatch):
        apply_T(sym2, [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        apply_Tstar(sym2, [1])


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 7))
def test_adjoint_identity_exact(seed, I, J):
    rng = np.random.default_rng(seed)
    dj = random_joint(rng, I, J)
    mu, nu = marginals(dj)
    f = [F(int(v), 7) for v in rng.integers(-9, 10, I)]
    g = [F(int(v), 5) for v in rng.integers(-9, 10, J)]
    assert sum(mu * f * apply_T(dj, g)) == sum(nu * g * apply_Tstar(dj, f))


def test_adjoint_identity_float_1000_pairs(rng):
    dj = random_joint(rng, 5, 7).to_float()
    mu, nu = marginals(dj)
    for _ in range(1000):
        f, g = rng.standard_normal(5), rng.standard_normal(7)
        assert abs(mu @ (f * apply_T(dj, g)) - nu @ (g * apply_Tstar(dj, f))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 7))
def test_nonexpansive(seed, I, J):
    dj = random_joint(np.random.default_rng(seed), I, J)
    rep = operator_norm_bounds(dj, trials=200, seed=seed)
    assert rep.l1_ok and rep.linf_ok
    assert 0 <= rep.delta_sampled <= 1
    if rep.delta_certified is not None:
        assert rep.delta_certified <= rep.delta_sampled + 1e-12


def test_norm_bounds_dirac(pattern):
    rep = operator_norm_bounds(pattern, trials=100)
    assert rep.delta_sampled == pytest.approx(1.0)
    assert rep.delta_certified == 1.0


def test_norm_bounds_product(product):
    assert operator_norm_bounds(product, trials=100).delta_sampled == pytest.approx(0.0, abs=1e-12)


def test_norm_bounds_trials():
    with pytest.raises(ValueError):
        operator_norm_bounds(pattern_joint(), trials=0)


def test_xi_example():
    dj = BernoulliMixture(F(3, 4), [F(1, 4)] * 4).to_joint()
    rep = xi_criterion(dj)
    assert rep.xi == F(13, 16) and rep.verdict == "Surjective" and rep.delta == F(5, 8)


def test_xi_dirac(pattern):
    rep = xi_criterion(pattern)
    assert rep.xi == 1 and rep.delta == 1


def test_xi_too_large(rng):
    dj = random_joint(rng, 13, 13)
    with pytest.raises(TooLarge):
        xi_criterion(dj)
    xi_criterion(dj, max_I=13)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 6))
def test_xi_matches_brute_force(seed, I, J):
    dj = random_joint(np.random.default_rng(seed), I, J)
    xi = brute_xi(dj)
    assert xi_criterion(dj).xi == xi
    assert xi_singletons(dj).xi == xi
    assert xi_criterion(dj.to_float()).xi == pytest.approx(float(xi), abs=1e-12)


@pytest.mark.parametrize("p", [F(1, 4), F(1, 2), F(3, 4)])
@pytest.mark.parametrize("K", [2, 3, 5])
def test_xi_mixture_formula(p, K):
    mu = [F(k + 1, K * (K + 1) // 2) for k in range(K)]
    bm = BernoulliMixture(p, mu)
    dj = bm.to_joint()
    Ms = kernel_y_given(dj).rows
    # remark formula, for every subset A
    for r in range(1, K + 1):
        for A in combinations(range(K), r):
            ess = max(sum((Ms[j, i] for i in A), F(0)) for j in range(K))
            assert ess == p + (1 - p) * sum(mu[i] for i in A)
    assert xi_criterion(dj).xi == p + (1 - p) * min(mu)


def test_mixture_closed_form_example():
    bm = BernoulliMixture.uniform(F(1, 2), 2)
    sol = bernoulli_mixture_g(bm, [1, 0])
    assert list(sol.g) == [F(3, 2), F(-1, 2)]
    assert list(apply_T(bm.to_joint(), sol.g)) == [1, 0]
    assert sol.has_negative


def test_mixture_constant_f():
    sol = bernoulli_mixture_g(BernoulliMixture.uniform(F(1, 3), 4), [F(2)] * 4)
    assert list(sol.g) == [2] * 4 and not sol.has_negative


def test_mixture_dirac_mu():
    sol = bernoulli_mixture_g(BernoulliMixture(F(1, 3), [F(1)]), [F(5)])
    assert list(sol.g) == [5]


def test_mixture_validation():
    with pytest.raises(ValueError):
        BernoulliMixture(F(1), [F(1)])
    with pytest.raises(ValueError):
        BernoulliMixture(F(1, 2), [F(1, 2), F(1, 3)])
    with pytest.raises(ValueError):
        BernoulliMixture(F(1, 2))


@settings(max_examples=40, deadline=None)
@given(st.fractions(F(1, 20), F(19, 20)), st.integers(1, 6), st.data())
def test_mixture_properties(p, K, data):
    w = data.draw(st.lists(st.integers(1, 9), min_size=K, max_size=K))
    mu = [F(v, sum(w)) for v in w]
    f = [F(v) for v in data.draw(st.lists(st.integers(0, 9), min_size=K, max_size=K))]
    bm = BernoulliMixture(p, mu)
    sol = bernoulli_mixture_g(bm, f)
    dj = bm.to_joint()
    assert list(apply_T(dj, sol.g)) == f
    mu_a, nu_a = marginals(dj)
    l1_g = sum(n * abs(v) for n, v in zip(nu_a, sol.g))
    l1_f = sum(m * abs(v) for m, v in zip(mu_a, f))
    assert l1_g >= l1_f
    assert (l1_g == l1_f) == (not sol.has_negative)
    assert sol.has_negative == any(v < (1 - p) * sol.mean_f for v in f)


def test_mixture_continuous_empirical():
    bm = BernoulliMixture(0.5, sampler=lambda r, n: r.random(n))
    sol = bernoulli_mixture_g(bm, lambda x: (x < 0.3) * 1.0, n_samples=400_000)
    assert sol.has_negative
    assert sol.max_error < 5e-3
    X, Y = bm.sample(np.random.default_rng(1), 400_000)
    gy = sol.g(Y)
    inside = X < 0.3
    assert abs(gy[inside].mean() - 1) < 0.02 and abs(gy[~inside].mean()) < 0.02


def test_surjective_implies_unconstrained_solvable(rng):
    for _ in range(10):
        K = int(rng.integers(2, 7))
        dj = BernoulliMixture(F(int(rng.integers(1, 10)), 10), [F(1, K)] * K).to_joint()
        rep = xi_criterion(dj)
        if not rep.surjective:
            continue
        for _ in range(20):
            _, resid = solve_unconstrained(dj, rng.random(K))
            assert resid <= 1e-10


def test_cor2_windows():
    L = Cor2Law()
    assert cor2_windows(L, F(13, 4)) == IntervalSet.interval(F(1, 8), F(3, 8))
    assert cor2_windows(L, 0.25) == IntervalSet.interval(0, 1)
    assert cor2_windows(L, F(1, 2) + 1) == IntervalSet.interval(0, 1)
    with pytest.raises(ValueError):
        cor2_windows(L, -1)


@pytest.mark.parametrize("delta", [F(51, 100), F(9, 10), F(999, 1000)])
def test_cor2_unit(delta):
    assert cor2_check(Cor2Law(), IntervalSet.unit(), delta)


def test_cor2_interval():
    A = IntervalSet.interval(F(3, 10), F(4, 10))
    res = cor2_search(Cor2Law("discrete"), A, F(9, 10))
    assert res and res.ratio > F(9, 10)
    assert res.window == cor2_windows(Cor2Law(), res.y)
    assert (res.window - A).length == 0


def test_cor2_preconditions():
    with pytest.raises(ValueError):
        cor2_check(Cor2Law(), IntervalSet.unit(), F(1, 2))
    with pytest.raises(ValueError):
        cor2_check(Cor2Law(), IntervalSet.empty(), F(3, 4))
    with pytest.raises(ValueError):
        Cor2Law("other")


def test_cor2_not_found_is_reported():
    A = IntervalSet.interval(0, F(1, 2**40))
    res = cor2_search(Cor2Law(), A, F(3, 4), n_max=5)
    assert not res and res.y is None


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 999), st.integers(1, 50)), min_size=1, max_size=5),
       st.fractions(F(51, 100), F(99, 100)))
def test_cor2_always_finds_witness(parts, delta):
    A = IntervalSet((F(a, 1000), min(F(a + w, 1000), F(1))) for a, w in parts)
    res = cor2_search(Cor2Law(), A, delta)
    assert res
    assert (A & res.window).length / res.window.length > delta
