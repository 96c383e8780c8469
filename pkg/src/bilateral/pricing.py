"""Scenario facade: regime selection, solves and price reports."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bsde import (BsdeProblem, BsdeSolution, CouplingMode, Side, solve_scalar,
                   solve_sequential_pair, solve_simultaneous_pair)
from .contracts import (CollateralConvention, ContractSpec, Exogenous, HedgerQ, Negotiated,
                        cash_flow_increments, collateral_grid)
from .generators import EXOGENOUS, Family, GeneratorSpec
from .lattice import Lattice, LatticeConfig, build
from .market import (AssetDynamics, ConfigError, MeasureSelection, Model, RateEnvironment,
                     Regime, measure_selection, resolve_regime)


@dataclass(frozen=True)
class PricingRequest:
    model: Model
    rates: RateEnvironment
    asset: AssetDynamics
    contract: ContractSpec
    collateral: CollateralConvention = field(default_factory=HedgerQ.zero)
    x1: float = 0.0
    x2: float = 0.0
    r_mid: float | None = None
    n_steps: int = 200
    measure: Regime | None = None
    fixed_point: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "model", Model(self.model))
        if self.measure is not None:
            object.__setattr__(self, "measure", Regime(self.measure))
        if self.rates.d != 1:
            raise ConfigError("d = 1 for lattice pricing", f"d={self.rates.d}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("n_steps ≥ 1")
        if self.model == Model.SINGLE_RATE:
            if self.r_mid is None:
                object.__setattr__(self, "r_mid", self.rates.r_l)
            if not (self.rates.r_l <= self.r_mid <= self.rates.r_b):
                raise ConfigError("r_l ≤ r_mid ≤ r_b", f"r_mid={self.r_mid}")
        resolve_regime(self.x1, self.x2, self.measure)

    def with_(self, **kw) -> PricingRequest:
        return replace(self, **kw)


@dataclass(frozen=True)
class RegimeSelection:
    measure: MeasureSelection
    families: tuple[Family, ...]
    mode: CouplingMode

    @property
    def regime(self) -> Regime:
        return self.measure.regime

    @property
    def exogenous(self) -> bool:
        return self.families[0] in EXOGENOUS


_TABLE = {
    # (partial netting, convention, regime) -> (families, mode)
    (False, HedgerQ, Regime.LENDING): ((Family.Bergman_fl, Family.Bergman_gl), CouplingMode.SEQUENTIAL_PAIR),
    (False, HedgerQ, Regime.BETA): ((Family.Bergman_fbar, Family.Bergman_gbar), CouplingMode.SEQUENTIAL_PAIR),
    (True, HedgerQ, Regime.LENDING): ((Family.PN_fl, Family.PN_gl), CouplingMode.SEQUENTIAL_PAIR),
    (True, HedgerQ, Regime.BETA): ((Family.PN_fbar, Family.PN_gbar), CouplingMode.SEQUENTIAL_PAIR),
    (False, Negotiated, Regime.LENDING): ((Family.Coupled_Bergman_g,), CouplingMode.SIMULTANEOUS_PAIR),
    (False, Negotiated, Regime.BETA): ((Family.Coupled_Bergman_ghat,), CouplingMode.SIMULTANEOUS_PAIR),
    (True, Negotiated, Regime.LENDING): ((Family.Coupled_PN_g,), CouplingMode.SIMULTANEOUS_PAIR),
    (True, Negotiated, Regime.BETA): ((Family.Coupled_PN_ghat,), CouplingMode.SIMULTANEOUS_PAIR),
    (False, Exogenous, Regime.LENDING): ((Family.Bergman_Gl, Family.Bergman_Gl), CouplingMode.SCALAR),
    (False, Exogenous, Regime.BETA): ((Family.Bergman_Gh, Family.Bergman_Gc), CouplingMode.SCALAR),
    (True, Exogenous, Regime.LENDING): ((Family.PN_Gl, Family.PN_Gl), CouplingMode.SCALAR),
    (True, Exogenous, Regime.BETA): ((Family.PN_Gh, Family.PN_Gc), CouplingMode.SCALAR),
}


def select_regime(req: PricingRequest) -> RegimeSelection:
    if req.model == Model.SINGLE_RATE:
        if not isinstance(req.collateral, HedgerQ):
            raise ConfigError("single-rate model uses a HedgerQ collateral convention")
        ms = measure_selection(req.asset, req.rates, Regime.LENDING)
        return RegimeSelection(ms, (Family.SingleRate_f,), CouplingMode.SCALAR)
    regime = resolve_regime(req.x1, req.x2, req.measure)
    if regime == Regime.BETA:
        req.rates.check_beta(req.model)
    kind = type(req.collateral)
    families, mode = _TABLE[(req.model == Model.PARTIAL_NETTING, kind, regime)]
    return RegimeSelection(measure_selection(req.asset, req.rates, regime), families, mode)


def build_lattice(req: PricingRequest, regime: Regime = Regime.LENDING) -> Lattice:
    ms = measure_selection(req.asset, req.rates, regime)
    return build(req.asset, req.rates, LatticeConfig(req.n_steps, req.contract.maturity, ms))


def _spec(req: PricingRequest, family: Family, r_mid=None) -> GeneratorSpec:
    return GeneratorSpec(family, req.rates, req.x1, req.x2, req.collateral, r_mid, req.rates.d)


@dataclass(frozen=True)
class PricingResult:
    selection: RegimeSelection
    lattice: Lattice
    hedger: BsdeSolution
    counterparty: BsdeSolution
    P_h: tuple[np.ndarray, ...]
    P_c: tuple[np.ndarray, ...]


def _flows(req: PricingRequest, lattice: Lattice):
    flows = cash_flow_increments(req.contract, lattice)
    return flows, -flows[-1]


def solve(req: PricingRequest) -> PricingResult:
    sel = select_regime(req)
    lat = build_lattice(req, sel.regime)
    flows, terminal = _flows(req, lat)
    if sel.mode == CouplingMode.SEQUENTIAL_PAIR:
        f, g = (_spec(req, fam) for fam in sel.families)
        h, c = solve_sequential_pair(
            BsdeProblem((f, g), terminal, flows, CouplingMode.SEQUENTIAL_PAIR), lat)
        return PricingResult(sel, lat, h, c, h.y, c.y)
    if sel.mode == CouplingMode.SIMULTANEOUS_PAIR:
        spec = _spec(req, sel.families[0])
        h, c = solve_simultaneous_pair(
            BsdeProblem(spec, (terminal, terminal), flows, CouplingMode.SIMULTANEOUS_PAIR,
                        fixed_point=req.fixed_point), lat)
        return PricingResult(sel, lat, h, c, h.y, c.y)
    if sel.families == (Family.SingleRate_f,):
        spec = _spec(req, Family.SingleRate_f, req.r_mid)
        sol = solve_scalar(BsdeProblem(spec, terminal, flows), lat)
        return PricingResult(sel, lat, sol, sol, sol.y, sol.y)
    # exogenous collateral: two independent scalar solves, prices rebuilt from wealth levels
    C = collateral_grid(req.collateral, req.contract, lat)
    fh, fc = (_spec(req, fam) for fam in sel.families)
    h = solve_scalar(BsdeProblem(fh, terminal, flows, side=Side.HEDGER, collateral=C), lat)
    c = solve_scalar(BsdeProblem(fc, terminal, flows, side=Side.COUNTERPARTY, collateral=C), lat)
    return PricingResult(sel, lat, h, c, _from_wealth(fh, Side.HEDGER, lat, h, C),
                         _from_wealth(fc, Side.COUNTERPARTY, lat, c, C))


def _from_wealth(spec, side, lat, sol, C):
    if sol.wealth is None:
        raise ValueError("exogenous solution without wealth levels")
    if spec.family in (Family.Bergman_Gh, Family.Bergman_Gc, Family.PN_Gh, Family.PN_Gc):
        return tuple(w - c for w, c in zip(sol.wealth, C))
    B = np.exp(spec.rates.r_l * lat.times)
    if side == Side.HEDGER:
        return tuple(B[i] * (w - spec.x1) - C[i] for i, w in enumerate(sol.wealth))
    return tuple(-B[i] * (w - spec.x2) - C[i] for i, w in enumerate(sol.wealth))


@dataclass(frozen=True)
class PriceReport:
    x1: float
    x2: float
    regime: Regime
    families: tuple[Family, ...]
    mode: CouplingMode
    times: np.ndarray
    S: tuple[np.ndarray, ...]
    P_h: tuple[np.ndarray, ...]
    P_c: tuple[np.ndarray, ...]
    xi_h: tuple[np.ndarray, ...]   # hedger's asset holding
    xi_c: tuple[np.ndarray, ...]   # counterparty's own asset holding
    benchmark: float | None = None

    @property
    def P_h0(self) -> float:
        return float(self.P_h[0][0])

    @property
    def P_c0(self) -> float:
        return float(self.P_c[0][0])

    @property
    def scale(self) -> float:
        m = max(max(float(np.max(np.abs(a))) for a in self.P_h),
                max(float(np.max(np.abs(a))) for a in self.P_c))
        return max(1.0, m)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def report_from(result: PricingResult, req: PricingRequest) -> PriceReport:
    return PriceReport(req.x1, req.x2, result.selection.regime, result.selection.families,
                       result.selection.mode, result.lattice.times, result.lattice.S,
                       result.P_h, result.P_c, result.hedger.xi,
                       tuple(-x for x in result.counterparty.xi))


def price(req: PricingRequest) -> PriceReport:
    return report_from(solve(req), req)


def price_hedger(req: PricingRequest):
    res = solve(req)
    return res.P_h, float(res.P_h[0][0])


def price_counterparty(req: PricingRequest):
    res = solve(req)
    return res.P_c, float(res.P_c[0][0])


def price_single_rate(req: PricingRequest, r_mid: float | None = None):
    """Benchmark price under one money-market rate r_mid in [r_l, r_b]."""
    r_mid = req.r_mid if r_mid is None else r_mid
    if r_mid is None or not (req.rates.r_l <= r_mid <= req.rates.r_b):
        raise ConfigError("r_l ≤ r_mid ≤ r_b", f"r_mid={r_mid}")
    if not isinstance(req.collateral, HedgerQ):
        raise ConfigError("single-rate benchmark uses a HedgerQ collateral convention")
    fam = Family.PN_SingleRate_f if req.model == Model.PARTIAL_NETTING else Family.SingleRate_f
    lat = build_lattice(req, Regime.LENDING)
    flows, terminal = _flows(req, lat)
    sol = solve_scalar(BsdeProblem(_spec(req, fam, r_mid), terminal, flows), lat)
    return sol.y, sol.y0


@dataclass(frozen=True)
class RangeEntry:
    step: int
    time: float
    lower: np.ndarray
    upper: np.ndarray
    empty: np.ndarray
    tolerance: float

    @property
    def any_empty(self) -> bool:
        return bool(self.empty.any())


def range_tolerance(report: PriceReport) -> float:
    return 1e-8 * (1.0 + report.scale)


def fair_range(report: PriceReport, steps=None, tol: float | None = None) -> list[RangeEntry]:
    """Node-wise intervals [P_c, P_h] at the given grid steps (default all)."""
    tol = range_tolerance(report) if tol is None else tol
    steps = range(len(report.times)) if steps is None else steps
    out = []
    for i in steps:
        lo, hi = report.P_c[i], report.P_h[i]
        out.append(RangeEntry(i, float(report.times[i]), lo, hi, lo > hi + tol, tol))
    return out
