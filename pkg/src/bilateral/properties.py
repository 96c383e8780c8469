"""Executable checks of the structural results.

Each check returns a PropertyVerdict: pass flag, worst violation, the point
where it occurred and the tolerance used.  Checks whose preconditions fail
return an inapplicable verdict rather than asserting anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import generators as gen
from .contracts import (ContractSpec, DiscreteFlows, HedgerQ, Negotiated, PiecewiseLinear,
                        check_q_predicates, is_decreasing)
from .generators import DriverPoint, GeneratorSpec
from .market import AssetDynamics, ConfigError, Model, Regime, resolve_regime
from .pricing import PriceReport, PricingRequest, price, price_single_rate, range_tolerance, solve


@dataclass(frozen=True)
class PropertyVerdict:
    property_id: str
    passed: bool
    worst_violation: float
    witness: dict | None
    tolerance: float
    applicable: bool = True
    details: dict = field(default_factory=dict)

    @classmethod
    def not_applicable(cls, pid: str, reason: str) -> PropertyVerdict:
        return cls(pid, True, 0.0, None, 0.0, applicable=False, details={"reason": reason})

    def to_dict(self) -> dict:
        return {
            "property_id": self.property_id,
            "applicable": self.applicable,
            "passed": self.passed,
            "worst_violation": self.worst_violation,
            "tolerance": self.tolerance,
            "witness": self.witness,
            "details": self.details,
        }


def _verdict(pid, worst, witness, tol, **details) -> PropertyVerdict:
    return PropertyVerdict(pid, bool(worst <= tol), float(worst), witness, float(tol), True, details)


def _node_witness(report: PriceReport, i: int, j: int) -> dict:
    return {"step": i, "node": j, "t": float(report.times[i]), "S": float(report.S[i][j]),
            "P_h": float(report.P_h[i][j]), "P_c": float(report.P_c[i][j])}


def _worst_gap(report: PriceReport):
    worst, at = -math.inf, (0, 0)
    for i, (h, c) in enumerate(zip(report.P_h, report.P_c)):
        d = c - h
        j = int(np.argmax(d))
        if d[j] > worst:
            worst, at = float(d[j]), (i, j)
    return worst, at


def check_ordering(report: PriceReport, tol: float | None = None) -> PropertyVerdict:
    """P_c ≤ P_h + tol at every node."""
    tol = range_tolerance(report) if tol is None else tol
    worst, (i, j) = _worst_gap(report)
    return _verdict("ordering", worst, _node_witness(report, i, j), tol)


# ---------------------------------------------------------------- BSVP

@dataclass(frozen=True)
class BsvpBox:
    t: tuple[float, float]
    s: tuple[float, float]
    y: tuple[float, float]
    z: tuple[float, float]

    def __post_init__(self) -> None:
        for lo, hi in (self.t, self.s, self.y, self.z):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError("BSVP box bounds finite and ordered")
        if self.s[0] <= 0:
            raise ConfigError("BSVP box s > 0")

    @classmethod
    def default(cls, T: float, s0: float, scale: float = 1.0) -> BsvpBox:
        return cls((0.0, T), (s0 / 4.0, 4.0 * s0), (-3.0 * scale, 3.0 * scale),
                   (-3.0 * scale, 3.0 * scale))


@dataclass(frozen=True)
class BsvpSample:
    t: np.ndarray
    s: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    M: float
    lhs: np.ndarray
    rhs: np.ndarray


def projection(y1, y2):
    """Projection onto the half-space {y1 ≥ 0}."""
    return np.maximum(y1, 0.0), y2


def distance(y1, y2):
    return np.maximum(-np.asarray(y1), 0.0)


def coupled_h(spec: GeneratorSpec, asset: AssetDynamics):
    """h = -g with the lattice coefficient converted to the driver's z."""
    lending = spec.family in gen.LENDING_LEVEL

    def h(t, s, y1, y2, z1, z2):
        sig = asset.sigma_bar * s
        scale = np.exp(spec.rates.r_l * t) if lending else 1.0
        g1, g2 = gen.eval(spec, DriverPoint(t, s, (y1, y2), (scale * z1 / sig, scale * z2 / sig)))
        return -g1, -g2

    return h


def sample_bsvp(h, box: BsvpBox, n_samples: int, M: float, seed: int) -> BsvpSample:
    rng = np.random.default_rng(seed)
    u = lambda lo_hi: rng.uniform(lo_hi[0], lo_hi[1], n_samples)
    t, s, y1, y2, z1, z2 = u(box.t), u(box.s), u(box.y), u(box.y), u(box.z), u(box.z)
    p1, p2 = projection(y1, y2)
    h1, h2 = h(t, s, p1 + p2, p2, z1 + z2, z2)
    dk = distance(y1, y2)
    lhs = -4.0 * dk * (h1 - h2)
    rhs = M * dk ** 2 + 2.0 * z1 ** 2
    return BsvpSample(t, s, y1, y2, z1, z2, M, lhs, rhs)


def check_bsvp(spec: GeneratorSpec | None, asset: AssetDynamics, box: BsvpBox | None = None,
               n_samples: int = 10_000, M: float = 0.0, seed: int = 0, T: float = 1.0,
               h_pair=None) -> PropertyVerdict:
    """Sample the viability condition for the half-space {y1 ≥ 0}.

    Reports the smallest M that makes every sample pass as `M_hat`.
    """
    if h_pair is None:
        if spec is None or spec.family not in gen.COUPLED:
            raise ValueError("check_bsvp needs a coupled generator family")
        h_pair = coupled_h(spec, asset)
    box = box or BsvpBox.default(T, asset.s0)
    smp = sample_bsvp(h_pair, box, n_samples, M, seed)
    neg = smp.y1 < 0
    excess = smp.lhs - smp.rhs
    scale = max(1.0, float(np.max(np.abs(smp.rhs))))
    tol = 1e-12 * scale
    k = int(np.argmax(excess))
    dk2 = np.where(neg, smp.y1 ** 2, np.inf)
    need = np.where(neg, (smp.lhs - 2.0 * smp.z1 ** 2) / dk2, -np.inf)
    m_hat = max(0.0, float(np.max(need))) if neg.any() else 0.0
    witness = {"t": float(smp.t[k]), "s": float(smp.s[k]), "y1": float(smp.y1[k]),
               "y2": float(smp.y2[k]), "z1": float(smp.z1[k]), "z2": float(smp.z2[k]),
               "lhs": float(smp.lhs[k]), "rhs": float(smp.rhs[k])}
    return _verdict("bsvp", float(excess[k]), witness, tol, M=M, M_hat=m_hat, seed=seed,
                    n_samples=n_samples)


# ---------------------------------------------------------------- homogeneity / endowments

def _max_abs_diff(a, b) -> tuple[float, tuple[int, int]]:
    worst, at = 0.0, (0, 0)
    for i, (x, y) in enumerate(zip(a, b)):
        d = np.abs(x - y)
        j = int(np.argmax(d))
        if d[j] > worst:
            worst, at = float(d[j]), (i, j)
    return worst, at


def check_homogeneity(req: PricingRequest, lambdas=(0.5, 2.0, 10.0), tol: float = 1e-8) -> PropertyVerdict:
    """P(lam x, lam A) = lam P(x, A) for both parties, node by node."""
    pid = "homogeneity"
    if not isinstance(req.collateral, HedgerQ):
        return PropertyVerdict.not_applicable(pid, "needs a HedgerQ collateral convention")
    if not check_q_predicates(req.collateral).homogeneous.holds:
        return PropertyVerdict.not_applicable(pid, "q is not positively homogeneous")
    if req.model == Model.SINGLE_RATE:
        return PropertyVerdict.not_applicable(pid, "single-rate model")
    base = price(req)
    scale = base.scale
    worst_rel, witness, per = -math.inf, None, {}
    for lam in lambdas:
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        rep = price(req.with_(x1=lam * req.x1, x2=lam * req.x2, contract=req.contract.scaled(lam)))
        dh, ah = _max_abs_diff(rep.P_h, tuple(lam * p for p in base.P_h))
        dc, ac = _max_abs_diff(rep.P_c, tuple(lam * p for p in base.P_c))
        d, at, leg = (dh, ah, "hedger") if dh >= dc else (dc, ac, "counterparty")
        allowed = tol * lam * scale
        rel = d - allowed
        per[str(lam)] = {"max_abs_diff": d, "allowed": allowed}
        if rel > worst_rel:
            worst_rel = rel
            witness = {"lambda": lam, "leg": leg, "step": at[0], "node": at[1], "diff": d}
    return PropertyVerdict(pid, bool(worst_rel <= 0.0), float(worst_rel + 0.0), witness,
                           0.0, True, {"relative_tolerance": tol, "scale": scale, "per_lambda": per})


def _monotone_preconditions(req: PricingRequest) -> str | None:
    if req.model != Model.PARTIAL_NETTING:
        return "assertion is made for the partial-netting model only"
    if not isinstance(req.collateral, HedgerQ):
        return "needs a HedgerQ collateral convention"
    if not check_q_predicates(req.collateral).nonnegative_shift.holds:
        return "q violates y + q(-y) ≥ 0 for y ≥ 0"
    if not is_decreasing(req.contract):
        return "A - A_0 is not decreasing"
    if req.x1 < 0 or req.x2 > 0:
        return "needs x1 ≥ 0 ≥ x2"
    if resolve_regime(req.x1, req.x2, req.measure) != Regime.BETA:
        return "needs the beta measure"
    return None


def check_endowment_independence(req: PricingRequest, x1s=(0.0, 1.0, 5.0),
                                 tol: float = 1e-10) -> PropertyVerdict:
    """The hedger's price grid does not move with x1."""
    pid = "endowment_independence"
    why = _monotone_preconditions(req)
    if why:
        return PropertyVerdict.not_applicable(pid, why)
    reports = [price(req.with_(x1=x)) for x in x1s]
    scale = max(r.scale for r in reports)
    worst, witness = 0.0, {"x1": x1s[0], "x1_other": x1s[0], "step": 0, "node": 0}
    for x, rep in zip(x1s[1:], reports[1:]):
        d, (i, j) = _max_abs_diff(rep.P_h, reports[0].P_h)
        if d > worst:
            worst, witness = d, {"x1": x1s[0], "x1_other": x, "step": i, "node": j}
    return _verdict(pid, worst, witness, tol * scale, scale=scale)


def check_monotone_ordering(req: PricingRequest, tol: float = 1e-10) -> PropertyVerdict:
    """P_c ≤ P_h and P_h ≥ 0 everywhere for decreasing contracts."""
    pid = "monotone_ordering"
    why = _monotone_preconditions(req)
    if why:
        return PropertyVerdict.not_applicable(pid, why)
    rep = price(req)
    gap, (i, j) = _worst_gap(rep)
    low, at = 0.0, (0, 0)
    for k, p in enumerate(rep.P_h):
        m = int(np.argmin(p))
        if -p[m] > low:
            low, at = float(-p[m]), (k, m)
    t = tol * rep.scale
    if gap >= low:
        return _verdict(pid, gap, _node_witness(rep, i, j), t, min_P_h=-low)
    return _verdict(pid, low, _node_witness(rep, *at), t, min_P_h=-low)


# ---------------------------------------------------------------- range violations

@dataclass(frozen=True)
class SearchResult:
    found: bool
    contract: ContractSpec | None
    events: tuple[tuple[float, float], ...] | None
    P_h0: float | None
    P_c0: float | None
    gap: float
    evaluated: int
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "witness": ({"events": [{"t": t, "amount": a} for t, a in self.events]}
                        if self.found else "none"),
            "best_events": [{"t": t, "amount": a} for t, a in self.events] if self.events else None,
            "P_h0": self.P_h0,
            "P_c0": self.P_c0,
            "gap": self.gap,
            "evaluated": self.evaluated,
            "tolerance": self.tolerance,
        }


def search_range_violation(req: PricingRequest, amounts=None, times=None, n_steps: int = 20,
                           tol: float = 1e-4, scale: float = 1.0) -> SearchResult:
    """Grid search over two-flow contracts for P_c(0) > P_h(0) + tol.

    Each candidate pays a1 at an early time and a2 at maturity.  The grid is
    scanned in a fixed order; the largest gap found is reported.
    """
    if not (isinstance(req.collateral, HedgerQ) and req.collateral.q.lipschitz == 0.0):
        raise ConfigError("violation search needs q ≡ 0")
    T = req.contract.maturity
    amounts = np.linspace(-5.0, 5.0, 41) * scale if amounts is None else np.asarray(amounts)
    dt = T / n_steps
    if times is None:
        times = sorted({round(k * n_steps / 4) * dt for k in (1, 2, 3)})
    best = (-math.inf, None, None, None)
    count = 0
    for te in times:
        for a1 in amounts:
            for a2 in amounts:
                events = ((float(te), float(a1)), (float(T), float(a2)))
                contract = ContractSpec(T, DiscreteFlows(tuple(
                    (t, PiecewiseLinear.constant(a)) for t, a in events)))
                res = solve(req.with_(contract=contract, n_steps=n_steps))
                ph, pc = float(res.P_h[0][0]), float(res.P_c[0][0])
                count += 1
                if pc - ph > best[0]:
                    best = (pc - ph, events, ph, pc)
    gap, events, ph, pc = best
    found = gap > tol
    contract = None
    if found:
        contract = ContractSpec(T, DiscreteFlows(tuple((t, PiecewiseLinear.constant(a)) for t, a in events)))
    return SearchResult(found, contract, events, ph, pc, float(gap), count, tol)


# ---------------------------------------------------------------- single-rate sandwich

def _lower_bound_applies(q: PiecewiseLinear, r_mid: float, r_c: float) -> bool:
    if r_mid == r_c:
        return True
    sl = q.slopes
    if r_mid < r_c:
        return all(s >= 0 for s in sl)
    return all(s <= 0 for s in sl)


def check_sandwich(req: PricingRequest, r_mids, tol: float = 1e-6) -> PropertyVerdict:
    """P_c(0) - tol ≤ P_r(0) ≤ P_h(0) + tol for every r_mid."""
    pid = "sandwich"
    if req.x1 != 0 or req.x2 != 0:
        return PropertyVerdict.not_applicable(pid, "needs x1 = x2 = 0")
    if not isinstance(req.collateral, HedgerQ):
        return PropertyVerdict.not_applicable(pid, "needs a HedgerQ collateral convention")
    rep = price(req)
    worst, witness, per = -math.inf, None, {}
    for r in r_mids:
        grid, pr = price_single_rate(req, r)
        lower = _lower_bound_applies(req.collateral.q, r, req.rates.r_c)
        up = pr - rep.P_h0
        lo = rep.P_c0 - pr if lower else -math.inf
        per[str(r)] = {"P_r": pr, "P_h": rep.P_h0, "P_c": rep.P_c0, "lower_checked": lower}
        for v, side in ((up, "upper"), (lo, "lower")):
            if v > worst:
                worst, witness = v, {"r_mid": r, "bound": side, "P_r": pr,
                                     "P_h": rep.P_h0, "P_c": rep.P_c0}
    return _verdict(pid, worst, witness, tol, per_r_mid=per)
