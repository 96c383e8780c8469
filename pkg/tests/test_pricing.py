import itertools

import numpy as np
import pytest

from bilateral.bsde import CouplingMode
from bilateral.contracts import (ContinuousFee, ContractSpec, DiscreteFlows, Exogenous, HedgerQ, Negotiated,
                                 PiecewiseLinear)
from bilateral.generators import Family
from bilateral.market import AssetDynamics, ConfigError, Model, RateEnvironment, Regime
from bilateral.pricing import (PricingRequest, fair_range, price, price_counterparty, price_hedger,
                               price_single_rate, range_tolerance, select_regime)

from conftest import black_scholes_call

F = Family
BERGMAN = RateEnvironment(0.01, 0.05, 0.02)
PN = RateEnvironment(0.01, 0.05, 0.02, 0.06, 0.055)
ASSET = AssetDynamics(100.0, 0.2, 0.05)


def req(model="bergman", rates=BERGMAN, contract=None, **kw):
    contract = contract or ContractSpec(1.0, ContinuousFee(1.0))
    kw.setdefault("n_steps", 40)
    return PricingRequest(model, rates, ASSET, contract, **kw)


CONVENTIONS = {"q": HedgerQ(), "neg": Negotiated(0.5), "exo": Exogenous(PiecewiseLinear.constant(1.0))}
EXPECTED = {
    ("bergman", "q", Regime.LENDING): ((F.Bergman_fl, F.Bergman_gl), CouplingMode.SEQUENTIAL_PAIR),
    ("bergman", "q", Regime.BETA): ((F.Bergman_fbar, F.Bergman_gbar), CouplingMode.SEQUENTIAL_PAIR),
    ("partial_netting", "q", Regime.LENDING): ((F.PN_fl, F.PN_gl), CouplingMode.SEQUENTIAL_PAIR),
    ("partial_netting", "q", Regime.BETA): ((F.PN_fbar, F.PN_gbar), CouplingMode.SEQUENTIAL_PAIR),
    ("bergman", "neg", Regime.LENDING): ((F.Coupled_Bergman_g,), CouplingMode.SIMULTANEOUS_PAIR),
    ("bergman", "neg", Regime.BETA): ((F.Coupled_Bergman_ghat,), CouplingMode.SIMULTANEOUS_PAIR),
    ("partial_netting", "neg", Regime.LENDING): ((F.Coupled_PN_g,), CouplingMode.SIMULTANEOUS_PAIR),
    ("partial_netting", "neg", Regime.BETA): ((F.Coupled_PN_ghat,), CouplingMode.SIMULTANEOUS_PAIR),
    ("bergman", "exo", Regime.LENDING): ((F.Bergman_Gl, F.Bergman_Gl), CouplingMode.SCALAR),
    ("bergman", "exo", Regime.BETA): ((F.Bergman_Gh, F.Bergman_Gc), CouplingMode.SCALAR),
    ("partial_netting", "exo", Regime.LENDING): ((F.PN_Gl, F.PN_Gl), CouplingMode.SCALAR),
    ("partial_netting", "exo", Regime.BETA): ((F.PN_Gh, F.PN_Gc), CouplingMode.SCALAR),
}


@pytest.mark.parametrize("model,conv,regime", list(EXPECTED))
def test_dispatch_table(model, conv, regime):
    x2 = 2.0 if regime == Regime.LENDING else -1.0
    sel = select_regime(req(model, PN, collateral=CONVENTIONS[conv], x1=1.0, x2=x2))
    assert (sel.families, sel.mode) == EXPECTED[(model, conv, regime)]
    assert sel.regime == regime
    expect_drift = PN.r_l if regime == Regime.LENDING else PN.beta[0]
    assert sel.measure.drift == expect_drift


def test_dispatch_single_rate():
    sel = select_regime(req("single_rate", collateral=HedgerQ(), r_mid=0.03))
    assert sel.families == (F.SingleRate_f,) and sel.mode == CouplingMode.SCALAR
    assert sel.regime == Regime.LENDING
    with pytest.raises(ConfigError, match="r_l ≤ r_mid ≤ r_b"):
        req("single_rate", r_mid=0.2)
    with pytest.raises(ConfigError):
        select_regime(req("single_rate", collateral=Negotiated(0.5)))


@pytest.mark.parametrize("x1,x2", [(-1.0, 0.0), (-1.0, -1.0), (-0.5, 2.0)])
def test_dispatch_rejects_negative_hedger_endowment(x1, x2):
    with pytest.raises(ConfigError):
        req(x1=x1, x2=x2)


def test_dispatch_rejects_bad_beta():
    rates = RateEnvironment(0.01, 0.05, 0.02, r_ib=0.06, beta=0.07)
    with pytest.raises(ConfigError, match="beta"):
        select_regime(req("partial_netting", rates, x1=1.0, x2=-1.0))
    with pytest.raises(ConfigError, match="beta"):
        select_regime(req("bergman", RateEnvironment(0.01, 0.05, 0.02, beta=0.03), x1=1.0, x2=-1.0))


def test_dispatch_total_over_admissible_grid():
    for model, conv, (x1, x2) in itertools.product(
            ("bergman", "partial_netting"), CONVENTIONS, [(0, 0), (1, 2), (0, -1), (2, -3), (0, 1)]):
        sel = select_regime(req(model, PN, collateral=CONVENTIONS[conv], x1=x1, x2=x2))
        assert sel.regime == (Regime.LENDING if x2 >= 0 else Regime.BETA)


@pytest.mark.parametrize("conv", list(CONVENTIONS))
@pytest.mark.parametrize("model", ["bergman", "partial_netting"])
def test_zero_contract_prices_zero(model, conv):
    r = req(model, PN, contract=ContractSpec.zero(1.0), collateral=CONVENTIONS[conv] if conv != "exo"
            else Exogenous(), x1=1.0, x2=2.0)
    rep = price(r)
    assert rep.P_h0 == 0.0 and rep.P_c0 == 0.0


def test_equal_rates_prices_agree(call):
    rates = RateEnvironment(0.03, 0.03, 0.02, 0.03, 0.03)
    for model, conv in itertools.product(("bergman", "partial_netting"), (HedgerQ.haircut(0.1, 0.2), Negotiated(0.3))):
        rep = price(req(model, rates, call, collateral=conv, x1=1.0, x2=3.0, n_steps=100))
        assert rep.P_h0 == pytest.approx(rep.P_c0, abs=1e-10)


def test_counterparty_below_hedger_call(call):
    rep = price(req("bergman", BERGMAN, call, collateral=HedgerQ(), n_steps=200))
    assert rep.P_c0 <= rep.P_h0
    assert rep.P_h0 < 0   # the hedger delivers the call


def test_price_helpers_agree(call):
    r = req("bergman", BERGMAN, call, collateral=HedgerQ(), n_steps=60)
    rep = price(r)
    assert price_hedger(r)[1] == rep.P_h0
    assert price_counterparty(r)[1] == rep.P_c0


@pytest.mark.parametrize("model,rates", [("bergman", BERGMAN), ("partial_netting", PN)])
@pytest.mark.parametrize("x", [(0.0, 0.0), (1.0, 2.0), (1.0, -1.0)])
def test_exogenous_zero_collateral_matches_q_zero(call, model, rates, x):
    base = req(model, rates, call, x1=x[0], x2=x[1], n_steps=120)
    q = price(base.with_(collateral=HedgerQ.zero()))
    e = price(base.with_(collateral=Exogenous()))
    assert e.P_h0 == pytest.approx(q.P_h0, abs=1e-10)
    assert e.P_c0 == pytest.approx(q.P_c0, abs=1e-10)


def test_single_rate_black_scholes(call):
    rates = RateEnvironment(0.05, 0.05, 0.05)
    _, p0 = price_single_rate(req("bergman", rates, call, n_steps=2000), 0.05)
    assert p0 == pytest.approx(-black_scholes_call(100, 100, 0.05, 0.2, 1.0), abs=0.05)
    _, z0 = price_single_rate(req("bergman", rates, ContractSpec.zero(1.0)), 0.05)
    assert z0 == 0.0
    with pytest.raises(ConfigError):
        price_single_rate(req("bergman", rates, call), 0.07)


@pytest.mark.parametrize("model,rates", [("bergman", RateEnvironment(0.01, 0.05, 0.05)),
                                         ("partial_netting", RateEnvironment(0.01, 0.05, 0.05, 0.06, 0.055))])
def test_single_rate_sandwich(call, model, rates):
    r = req(model, rates, call, collateral=HedgerQ(), n_steps=150)
    rep = price(r)
    tol = 1e-8 * (1 + rep.scale)
    for r_mid in (0.01, 0.03, 0.05):
        p = price_single_rate(r, r_mid)[1]
        assert rep.P_c0 - tol <= p <= rep.P_h0 + tol


def test_fair_range_nonempty_same_sign(call):
    for x in ((0.0, 0.0), (1.0, 2.0), (0.0, -1.0)):
        rep = price(req("bergman", BERGMAN, call, collateral=HedgerQ(), x1=x[0], x2=x[1], n_steps=60))
        entries = fair_range(rep)
        assert len(entries) == 61 and not any(e.any_empty for e in entries)
        assert entries[0].tolerance == range_tolerance(rep)


def test_fair_range_empty_for_search_witness():
    contract = ContractSpec(1.0, DiscreteFlows(((1.0, PiecewiseLinear.constant(1.0)),)))
    rep = price(req("bergman", BERGMAN, contract, x1=1.0, x2=-1.0, n_steps=20))
    first = fair_range(rep, steps=[0])[0]
    assert first.any_empty
    assert rep.P_c0 - rep.P_h0 == pytest.approx(0.03888, abs=5e-5)


def test_report_metadata(call):
    rep = price(req("bergman", BERGMAN, call, collateral=HedgerQ(), n_steps=10))
    assert rep.dt == pytest.approx(0.1) and len(rep.S) == 11 and len(rep.xi_h) == 10
    assert rep.scale >= 1.0
