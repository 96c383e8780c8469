import numpy as np
import pytest

from bilateral.contracts import (ContinuousFee, ContractSpec, DiscreteFlows, Exogenous, HedgerQ, Mixed,
                                 Negotiated, PiecewiseLinear)
from bilateral.market import AssetDynamics, RateEnvironment
from bilateral.oracle import (OracleMode, Party, matched_accrual_mode, replicate, replicate_pair,
                              replicate_single_rate)
from bilateral.pricing import PricingRequest, price, price_single_rate

from conftest import black_scholes_call

BERGMAN = RateEnvironment(0.01, 0.05, 0.02)
PN = RateEnvironment(0.01, 0.05, 0.02, 0.06, 0.055)
ASSET = AssetDynamics(100.0, 0.2, 0.05)
CALL = ContractSpec(1.0, Mixed((ContinuousFee(-3.0), DiscreteFlows(((1.0, PiecewiseLinear.call(100.0).scaled(-1)),)))))

SCENARIOS = [
    ("bergman", BERGMAN, HedgerQ(), (0.0, 0.0)),
    ("bergman", BERGMAN, HedgerQ.haircut(0.1, -0.05), (1.0, 2.0)),
    ("bergman", BERGMAN, HedgerQ(), (1.0, -1.0)),
    ("partial_netting", PN, HedgerQ(), (1.0, 0.0)),
    ("partial_netting", PN, HedgerQ.haircut(0.2, 0.1), (1.0, -2.0)),
    ("bergman", BERGMAN, Negotiated(0.5), (0.0, 0.0)),
    ("partial_netting", PN, Negotiated(0.3), (1.0, -1.0)),
    ("bergman", BERGMAN, Exogenous(PiecewiseLinear.constant(2.0)), (1.0, 1.0)),
    ("partial_netting", PN, Exogenous(PiecewiseLinear.constant(-2.0)), (1.0, -1.0)),
]


def request(model, rates, conv, x, n, contract=CALL):
    return PricingRequest(model, rates, ASSET, contract, collateral=conv, x1=x[0], x2=x[1], n_steps=n)


def test_mode_flag():
    assert matched_accrual_mode(True) == OracleMode.MATCHED
    assert matched_accrual_mode(False) == OracleMode.INDEPENDENT


@pytest.mark.parametrize("mode", list(OracleMode))
def test_zero_contract(mode):
    r = request("bergman", BERGMAN, HedgerQ(), (2.0, 1.0), 20, ContractSpec.zero(1.0))
    h, c = replicate_pair(r, mode)
    assert abs(h.price0) <= 1e-14 and abs(c.price0) <= 1e-14
    assert h.wealth0 == pytest.approx(2.0, abs=1e-14)


def test_single_rate_black_scholes():
    call = ContractSpec(1.0, DiscreteFlows(((1.0, PiecewiseLinear.call(100.0).scaled(-1)),)))
    rates = RateEnvironment(0.05, 0.05, 0.05)
    r = PricingRequest("single_rate", rates, ASSET, call, r_mid=0.05, n_steps=1000)
    rep = replicate_single_rate(r, 0.05)
    # the hedger receives the call here, so the price is its premium
    assert rep.price0 == pytest.approx(black_scholes_call(100, 100, 0.05, 0.2, 1.0), abs=0.05)


@pytest.mark.parametrize("model,rates,conv,x", SCENARIOS)
def test_matched_mode_agrees_with_solver(model, rates, conv, x):
    r = request(model, rates, conv, x, 100)
    rep = price(r)
    h, c = replicate_pair(r, OracleMode.MATCHED)
    tol = 1e-10 * rep.scale
    assert abs(h.price0 - rep.P_h0) <= tol
    assert abs(c.price0 - rep.P_c0) <= tol
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(h.price, rep.P_h))
    assert worst <= tol


@pytest.mark.parametrize("model,rates,conv,x", SCENARIOS)
def test_independent_mode_disagreement_halves(model, rates, conv, x):
    gaps = []
    for n in (100, 200):
        r = request(model, rates, conv, x, n)
        rep = price(r)
        h, c = replicate_pair(r, OracleMode.INDEPENDENT)
        gaps.append(max(abs(h.price0 - rep.P_h0), abs(c.price0 - rep.P_c0)))
        assert gaps[-1] <= 2.0 * rep.dt * rep.scale
    assert 1.8 <= gaps[0] / gaps[1] <= 2.2


def test_single_rate_oracle_matches_benchmark():
    r = request("bergman", BERGMAN, HedgerQ(), (0.0, 0.0), 80)
    p = price_single_rate(r, 0.03)[1]
    assert replicate_single_rate(r, 0.03, OracleMode.MATCHED).price0 == pytest.approx(p, abs=1e-10)


@pytest.mark.parametrize("mode", list(OracleMode))
@pytest.mark.parametrize("model,rates,conv,x", SCENARIOS)
def test_self_financing_residuals(model, rates, conv, x, mode):
    h, c = replicate_pair(request(model, rates, conv, x, 40), mode)
    for rep in (h, c):
        scale = max(1.0, max(float(np.max(np.abs(w))) for w in rep.wealth))
        assert max(s.residual() for s in rep.steps) <= 1e-12 * scale


def test_modes_coincide_at_zero_rates():
    rates = RateEnvironment(0.0, 0.0, 0.0)
    asset = AssetDynamics(100.0, 0.2, 0.0)
    r = PricingRequest("bergman", rates, asset, CALL, collateral=HedgerQ(), n_steps=50)
    a = replicate(r, Party.HEDGER, OracleMode.MATCHED)
    b = replicate(r, Party.HEDGER, OracleMode.INDEPENDENT)
    # no accrual at all, so the only gap left is the lattice's one-step martingale defect
    assert all(np.all(s.growth[0] == 0) and np.all(s.growth[1] == 0) for s in a.steps + b.steps)
    dt = 1.0 / 50
    assert abs(a.price0 - b.price0) <= 5 * dt * dt * 50 * 100


@pytest.mark.parametrize("mode", list(OracleMode))
def test_cash_translation(mode):
    fee = ContractSpec(1.0, ContinuousFee(1.0))
    base = request("bergman", BERGMAN, HedgerQ.zero(), (0.0, 0.0), 60, fee)
    p0 = replicate(base, Party.HEDGER, mode).price0
    for x1 in (0.5, 3.0, 40.0):
        assert replicate(base.with_(x1=x1), Party.HEDGER, mode).price0 == pytest.approx(p0, abs=1e-10)


def test_counterparty_side_selection():
    r = request("bergman", BERGMAN, HedgerQ(), (1.0, 2.0), 30)
    h, c = replicate_pair(r)
    assert replicate(r, "counterparty").price0 == c.price0
    assert replicate(r, "hedger").price0 == h.price0
    assert c.price0 <= h.price0 + 1e-10
