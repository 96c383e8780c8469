import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bilateral.contracts import (ContinuousFee, ContractSpec, DiscreteFlows, EuropeanClaim, Exogenous,
                                 HedgerQ, Mixed, Negotiated, PiecewiseLinear, cash_flow_increments,
                                 check_q_predicates, collateral_interest, discounted_flows, eval_negotiated,
                                 eval_q, grid_index, is_decreasing)
from bilateral.lattice import LatticeConfig, build
from bilateral.market import AssetDynamics, ConfigError, MeasureSelection, RateEnvironment, Regime


def lattice(n, T=1.0, rates=None):
    rates = rates or RateEnvironment(0.05, 0.05, 0.02)
    return build(AssetDynamics(100, 0.2), rates, LatticeConfig(n, T, MeasureSelection(Regime.LENDING, rates.r_l)))


def test_eval_q_examples():
    assert eval_q(HedgerQ.haircut(0.0, 0.0), 5.0) == 5.0
    for a1, a2 in ((0.3, -0.2), (0.0, 0.5)):
        assert eval_q(HedgerQ.haircut(a1, a2), 0.0) == 0.0
    assert eval_q(HedgerQ.haircut(0.1, -0.05), -2.0) == pytest.approx(-1.9, abs=1e-15)


def test_eval_q_wrong_kind():
    with pytest.raises(TypeError):
        eval_q(Negotiated(0.5), 1.0)
    with pytest.raises(TypeError):
        eval_negotiated(HedgerQ(), 1.0, 2.0)


def test_eval_negotiated_examples():
    assert eval_negotiated(Negotiated(0.5), 2.0, 4.0) == 3.0
    assert eval_negotiated(Negotiated(0.37), 0.0, 0.0) == 0.0
    assert eval_negotiated(Negotiated(1.0), 7.0, -3.0) == 7.0


@given(st.floats(0, 1), st.floats(-1e6, 1e6))
def test_negotiated_diagonal(alpha, y):
    assert eval_negotiated(Negotiated(alpha), y, y) == pytest.approx(y, rel=1e-12, abs=1e-12)


def test_collateral_invariants():
    with pytest.raises(ConfigError, match="q\\(0\\) = 0"):
        HedgerQ(PiecewiseLinear.constant(1.0))
    with pytest.raises(ConfigError):
        Negotiated(1.5)
    with pytest.raises(ConfigError):
        PiecewiseLinear((0.0,), (float("inf"),))


maps = st.builds(
    lambda ks, vs, l, r: PiecewiseLinear(tuple(sorted(set(ks)))[:len(vs)], tuple(vs[:len(set(ks))]), l, r),
    st.lists(st.integers(-50, 50).map(float), min_size=1, max_size=5, unique=True),
    st.lists(st.floats(-50, 50), min_size=5, max_size=5),
    st.floats(-3, 3), st.floats(-3, 3))


@settings(max_examples=100)
@given(maps, st.floats(-200, 200), st.floats(-200, 200))
def test_lipschitz_ratio(f, a, b):
    if abs(a - b) < 1e-6:
        return
    assert abs(f(a) - f(b)) / abs(a - b) <= f.lipschitz + 1e-12 * (1 + f.lipschitz)


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(-200, 200), st.floats(-200, 200), st.floats(-200, 200), st.floats(-200, 200))
def test_negotiated_lipschitz(alpha, a1, a2, b1, b2):
    c = Negotiated(alpha, PiecewiseLinear.haircut(0.2, -0.1), PiecewiseLinear.haircut(-0.1, 0.3))
    lhs = abs(eval_negotiated(c, a1, a2) - eval_negotiated(c, b1, b2))
    assert lhs <= c.lipschitz * (abs(a1 - b1) + abs(a2 - b2)) * (1 + 1e-12) + 1e-9


def test_q_predicates_examples():
    p = check_q_predicates(HedgerQ.haircut(0.2, -0.1))
    assert p.nonnegative_shift.holds
    p = check_q_predicates(HedgerQ())
    assert p.nonnegative_shift.holds and p.increasing.holds and p.homogeneous.holds
    p = check_q_predicates(HedgerQ(PiecewiseLinear((0.0,), (0.0,), 2.0, 1.0)))
    assert not p.nonnegative_shift.holds
    y = p.nonnegative_shift.witness
    assert y == 1.0 and y + HedgerQ(PiecewiseLinear((0.0,), (0.0,), 2.0, 1.0)).q(-y) == -1.0


def test_q_predicates_other_shapes():
    kinked = HedgerQ(PiecewiseLinear((-1.0, 0.0, 2.0), (-1.0, 0.0, 1.0), 1.0, 1.0))
    p = check_q_predicates(kinked)
    assert p.increasing.holds and not p.homogeneous.holds
    dec = HedgerQ(PiecewiseLinear.linear(-1.0))
    p = check_q_predicates(dec)
    assert not p.increasing.holds and p.homogeneous.holds and p.nonnegative_shift.holds


@settings(max_examples=100)
@given(st.floats(-0.9, 2.0), st.floats(-0.9, 2.0))
def test_q_predicate_a_matches_sampling(a1, a2):
    conv = HedgerQ.haircut(a1, a2)
    # the far point catches slopes that differ from 1 only in the last bit
    ys = np.concatenate([np.linspace(0, 100, 2001), [1e20]])
    sampled = bool(np.all(ys + conv.q(-ys) >= 0))
    assert check_q_predicates(conv).nonnegative_shift.holds == sampled


def test_flow_increments_european():
    lat = lattice(4)
    c = ContractSpec(1.0, EuropeanClaim(PiecewiseLinear.call(100.0)))
    inc = cash_flow_increments(c, lat)
    assert all(np.all(inc[i] == 0) for i in range(4))
    assert np.array_equal(inc[4], np.maximum(lat.S[4] - 100.0, 0))


def test_flow_increments_fee():
    inc = cash_flow_increments(ContractSpec(1.0, ContinuousFee(1.0)), lattice(4))
    assert [float(x[0]) for x in inc[1:]] == [-0.25] * 4
    assert np.all(inc[0] == 0)


def test_flow_increments_discrete_grid_assignment():
    h = PiecewiseLinear.constant(2.0)
    inc = cash_flow_increments(ContractSpec(1.0, DiscreteFlows(((0.5, h),))), lattice(4))
    assert [float(x.sum()) for x in inc] == [0, 0, 6.0, 0, 0]
    assert grid_index(0.3, 0.25, 4) == 2
    assert grid_index(0.25 + 1e-12, 0.25, 4) == 1


def test_flow_time_beyond_maturity_rejected():
    with pytest.raises(ConfigError, match="flow times in"):
        ContractSpec(1.0, DiscreteFlows(((1.5, PiecewiseLinear.constant(1.0)),)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 0.99), st.floats(-3, 3),
       st.lists(st.tuples(st.floats(0.01, 1.0), st.floats(-5, 5)), max_size=4))
def test_increments_sum_to_total(n, start, c, events):
    events = sorted(events)
    legs = [ContinuousFee(c, start),
            DiscreteFlows(tuple((t, PiecewiseLinear.constant(a)) for t, a in events))]
    inc = cash_flow_increments(ContractSpec(1.0, Mixed(tuple(legs))), lattice(n))
    total = -c * (1.0 - start) + sum(a for _, a in events)
    got = sum(float(x[0]) for x in inc)
    assert got == pytest.approx(total, rel=1e-12, abs=1e-12)


def test_is_decreasing():
    assert is_decreasing(ContractSpec(1.0, ContinuousFee(1.0)))
    assert not is_decreasing(ContractSpec(1.0, ContinuousFee(-1.0)))
    assert not is_decreasing(ContractSpec(1.0, EuropeanClaim(PiecewiseLinear.call(100))))
    assert is_decreasing(ContractSpec(1.0, EuropeanClaim(PiecewiseLinear.call(100).scaled(-1))))
    put_paid = PiecewiseLinear.put(100).scaled(-1)
    assert is_decreasing(ContractSpec(1.0, DiscreteFlows(((0.5, put_paid),))))


def test_discounted_flows_examples():
    lat = lattice(4)
    zero = discounted_flows(ContractSpec.zero(1.0), lat)
    assert zero.total() == 0.0
    one = ContractSpec(1.0, DiscreteFlows(((1.0, PiecewiseLinear.constant(1.0)),)))
    sched = discounted_flows(one, lat, "lending")
    assert np.allclose(sched.edges[-1], math.exp(-0.05), rtol=1e-15)
    assert all(np.all(e == 0) for e in sched.edges[:-1])


def test_collateral_interest_constant():
    lat = lattice(8, rates=RateEnvironment(0.05, 0.05, 0.02))
    conv = Exogenous(PiecewiseLinear.constant(1.0))
    fc = collateral_interest(conv, ContractSpec.zero(1.0), lat)
    assert sum(float(x[0]) for x in fc) == pytest.approx(-0.02, rel=1e-14)
    sched = discounted_flows(ContractSpec.zero(1.0), lat, "lending", conv)
    # posted at 0, returned at T, with interest paid continuously in between
    total = sum(float(e[0, 0]) for e in sched.edges)
    expect = -math.exp(-0.05) - 0.02 * (1 - math.exp(-0.05)) / 0.05
    assert total == pytest.approx(expect, rel=1e-12)


def test_scaled_contract():
    c = ContractSpec(1.0, Mixed((ContinuousFee(1.0), EuropeanClaim(PiecewiseLinear.call(100)))))
    s = c.scaled(2.0)
    assert s.legs[0].rate == 2.0 and s.legs[1].payoff(120.0) == 40.0
