from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condrep.instances import joint_from_counts, random_joint
from condrep.measures import DiscreteJoint, kernel_x_given
from condrep.representation import (
    ConditionDViolated,
    DimensionMismatch,
    EmptyA,
    all_row_subsets,
    check_condition_d,
    check_necessary,
    construct_g_dirac,
    decide_rplus,
    find_tau,
    mass_gap,
    necessary_report,
    solve_nonneg,
    verify_certificate,
)

seeds = st.integers(0, 2**32 - 1)


def test_find_tau_pattern(pattern):
    # 1-based (1->2, 2->1, 3->4, 4->6)
    assert find_tau(pattern) == (1, 0, 3, 5)


def test_find_tau_single_atom():
    assert find_tau(DiscreteJoint([0], [0], [[F(1)]])) == (0,)


def test_find_tau_product(product):
    assert find_tau(product) is None


def test_find_tau_smallest_column():
    dj = joint_from_counts([[1, 1, 1], [0, 0, 1]])
    # columns 0 and 1 both sit on row 0 alone
    assert find_tau(dj) is None
    dj = joint_from_counts([[1, 1, 0], [0, 0, 1]])
    assert find_tau(dj) == (0, 2)


def test_condition_d(pattern, product):
    assert check_condition_d(pattern)
    assert not check_condition_d(product)
    # column 0 spreads over both rows, column 1 sits on row 1: D={1}, row 0 misses it
    dj = DiscreteJoint([0, 1], [0, 1], [[F(1, 2), F(0)], [F(1, 4), F(1, 4)]])
    assert not check_condition_d(dj)


def test_construct_g_single_atom():
    dj = DiscreteJoint([0], [0], [[F(1)]])
    assert list(construct_g_dirac(dj, [F(7, 3)])) == [F(7, 3)]


def test_construct_g_pattern_indicator(pattern):
    g = construct_g_dirac(pattern, [1, 0, 0, 0])
    assert [j for j, v in enumerate(g) if v != 0] == [1]
    M = kernel_x_given(pattern).rows
    assert list(M @ g) == [1, 0, 0, 0]


def test_construct_g_rejects_without_d(product):
    with pytest.raises(ConditionDViolated):
        construct_g_dirac(product, [1, 0])


def test_solve_product_indicator_infeasible(product):
    res = solve_nonneg(product, [1, 0])
    assert not res.feasible
    M = kernel_x_given(product).rows
    assert verify_certificate(M, np.array([F(1), F(0)], dtype=object), res.certificate, 0)


def test_solve_dimension_mismatch(product):
    with pytest.raises(DimensionMismatch):
        solve_nonneg(product, [1, 0, 0])


def test_solve_float_mode_matches_exact(pattern, product):
    for dj in (pattern, product):
        f = [1] + [0] * (dj.shape[0] - 1)
        assert solve_nonneg(dj, f).feasible == solve_nonneg(dj.to_float(), f).feasible


def test_decide_rplus(pattern, product):
    rep = decide_rplus(pattern)
    assert rep.rplus and rep.agrees and rep.tau == (1, 0, 3, 5)
    rep = decide_rplus(product)
    assert not rep.rplus and rep.agrees
    assert set(rep.certificates) == {0, 1}


def test_check_necessary_product(product):
    assert not check_necessary(product, [0])


def test_check_necessary_pattern_vacuous(pattern):
    for A in all_row_subsets(4):
        rep = necessary_report(pattern, A)
        assert rep.holds and rep.vacuous
        assert rep.dirac == (0, 1, 3, 5)


def test_check_necessary_empty(product):
    with pytest.raises(EmptyA):
        check_necessary(product, [])


def test_check_necessary_witness():
    # row 0 has no Dirac column; column 1 is spread over rows 0 and 1 only
    dj = joint_from_counts([[1, 1, 0], [0, 1, 1], [1, 0, 1], [0, 0, 0 + 1]])
    rep = necessary_report(dj, [0, 1])
    assert not rep.vacuous


@settings(max_examples=60, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 7), st.booleans())
def test_lp_decision_equals_tau_decision(seed, I, J, plant):
    rng = np.random.default_rng(seed)
    if plant and J < I:
        J = I
    dj = random_joint(rng, I, J, plant_tau=plant)
    rep = decide_rplus(dj)
    assert rep.agrees
    assert rep.rplus == check_condition_d(dj)


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 7))
def test_certificates_and_mass(seed, I, J):
    rng = np.random.default_rng(seed)
    dj = random_joint(rng, I, J)
    M = kernel_x_given(dj).rows
    f = [F(int(v)) for v in rng.integers(0, 5, size=I)]
    res = solve_nonneg(dj, f)
    if res.feasible:
        assert all(v >= 0 for v in res.g)
        assert list(M @ res.g) == f
        assert mass_gap(dj, f, res.g) == 0
    else:
        assert verify_certificate(M, np.array(f, dtype=object), res.certificate, 0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 6), st.fractions(F(1, 10), 10))
def test_scaling(seed, I, J, c):
    rng = np.random.default_rng(seed)
    dj = random_joint(rng, I, J)
    f = [F(int(v)) for v in rng.integers(0, 4, size=I)]
    a = solve_nonneg(dj, f)
    b = solve_nonneg(dj, [c * v for v in f])
    assert a.feasible == b.feasible
    if a.feasible:
        M = kernel_x_given(dj).rows
        assert list(M @ (c * a.g)) == [c * v for v in f]


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 7))
def test_condition_d_construction_is_valid(seed, I, J):
    rng = np.random.default_rng(seed)
    dj = random_joint(rng, I, max(I, J), plant_tau=True)
    f = [F(int(v), 3) for v in rng.integers(0, 7, size=I)]
    assert solve_nonneg(dj, f).feasible
    g = construct_g_dirac(dj, f)
    M = kernel_x_given(dj).rows
    assert list(M @ g) == f
    assert mass_gap(dj, f, g) == 0


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 5), st.integers(1, 6))
def test_rplus_implies_necessary_for_all_subsets(seed, I, J):
    dj = random_joint(np.random.default_rng(seed), I, J)
    all_hold = all(check_necessary(dj, A) for A in all_row_subsets(I))
    rplus = decide_rplus(dj).rplus
    if rplus:
        assert all_hold
    # on finite supports the converse also holds: a row without Dirac mass
    # yields A = {i} with no witness column
    assert all_hold == rplus
