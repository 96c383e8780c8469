"""Replication pricer: one-step self-financing portfolios on the lattice.

This path never evaluates a BSDE driver.  Each party holds xi shares, a cash
account that lends at r_l and borrows at r_b, its collateral balance, and
under partial netting a per-asset funding loan at r_ib for long positions.
Walking backwards, xi comes from the spread of next-step wealth and the
current wealth solves the piecewise-linear budget equation.

Two accrual modes are available.  INDEPENDENT uses the actual lattice moves,
exact exponential growth and an implicit solve for wealth, an O(dt) different
discretisation from the BSDE scheme.  MATCHED linearises the moves and the
accrual around the continuation mean the way the solver does, so the two
recursions agree to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .contracts import (Exogenous, HedgerQ, Negotiated, PiecewiseLinear, cash_flow_increments,
                        collateral_grid)
from .lattice import Lattice, LatticeConfig, build
from .market import Model, Regime, measure_selection, resolve_regime


class OracleMode(str, Enum):
    INDEPENDENT = "independent"
    MATCHED = "matched"


class Party(str, Enum):
    HEDGER = "hedger"
    COUNTERPARTY = "counterparty"


def matched_accrual_mode(flag: bool) -> OracleMode:
    return OracleMode.MATCHED if flag else OracleMode.INDEPENDENT


@dataclass(frozen=True)
class ReplicationStep:
    """Portfolio held over one step at every node of step `step`."""

    step: int
    xi: np.ndarray
    cash: np.ndarray          # lent if positive, borrowed if negative
    funding: np.ndarray       # per-asset loan for a long position (partial netting)
    collateral: np.ndarray    # own collateral balance, positive when held
    wealth: np.ndarray        # wealth after the flow at this step
    dS: tuple[np.ndarray, np.ndarray]        # asset moves used, down and up
    dividend: np.ndarray
    growth: tuple[np.ndarray, np.ndarray]    # cash, funding and collateral growth per state
    target: tuple[np.ndarray, np.ndarray]    # next-step wealth before its flow

    def residual(self) -> float:
        """Largest self-financing mismatch over both states."""
        worst = 0.0
        for k in range(2):
            nxt = self.wealth + self.xi * (self.dS[k] + self.dividend) + self.growth[k]
            worst = max(worst, float(np.max(np.abs(nxt - self.target[k]))))
        return worst


@dataclass(frozen=True)
class Replication:
    party: Party
    mode: OracleMode
    wealth: tuple[np.ndarray, ...]    # before the flow at each step
    price: tuple[np.ndarray, ...]     # pre-jump price at each step
    steps: tuple[ReplicationStep, ...]
    endowment: np.ndarray             # V0 at each grid time

    @property
    def price0(self) -> float:
        return float(self.price[0][0])

    @property
    def wealth0(self) -> float:
        return float(self.wealth[0][0])


def _pos(v):
    return np.maximum(v, 0.0)


def _neg(v):
    return np.maximum(-v, 0.0)


@dataclass
class _Party:
    sign: float               # +1 hedger, -1 counterparty
    v0: np.ndarray            # endowment account value per grid time
    r_end: float
    flows: list               # own flows per step


@dataclass
class _Setup:
    lat: Lattice
    pn: bool
    lend: float
    borrow: float
    r_c: float
    r_ib: float
    ref: float                # drift of the cum-dividend asset under the lattice measure
    kappa: float
    mode: OracleMode


def _solve_budget(st: _Setup, S, xi, F, R, V0, sg, c0, w, qmap: PiecewiseLinear | None):
    """Solve V + growth(V) = R node-wise; growth is piecewise linear in V.

    Own collateral is sg * (c0 + w * qmap(-sg * (V - V0))).
    """
    dt = st.lat.dt
    el, eb = math.expm1(st.lend * dt), math.expm1(st.borrow * dt)
    ei, ec = math.expm1(st.r_ib * dt), math.expm1(st.r_c * dt)
    base = F - xi * S

    def coll(V):
        if w == 0.0 or qmap is None:
            return sg * c0 + 0.0 * V
        return sg * (c0 + w * qmap(-sg * (V - V0)))

    def phi(V):
        C = coll(V)
        K = V + C + base
        return V + _pos(K) * el - _neg(K) * eb - F * ei - C * ec

    cands = [V0 + 0.0 * S]
    if w != 0.0 and qmap is not None:
        ks = qmap.kinks
        for k in ks:
            cands.append(V0 - sg * k)
        # zero of the cash balance on each linear piece of the map
        edges = (-np.inf,) + tuple(ks) + (np.inf,)
        for p in range(len(edges) - 1):
            lo, hi = edges[p], edges[p + 1]
            if np.isfinite(lo) and np.isfinite(hi):
                ref = 0.5 * (lo + hi)
            elif np.isfinite(lo):
                ref = lo + 1.0
            elif np.isfinite(hi):
                ref = hi - 1.0
            else:
                ref = 0.0
            b = _piece_slope(qmap, ref)
            a = float(qmap(ref)) - b * ref
            # K = V + sg*(c0 + w*(a + b*(-sg*(V - V0)))) + base
            den = 1.0 - w * b
            num = -(sg * c0 + sg * w * a + w * b * V0 + base)
            cands.append(num / den if abs(den) > 1e-14 else V0 + 0.0 * S)
    else:
        cands.append(-(sg * c0 + base))
    Cm = np.sort(np.stack(np.broadcast_arrays(*cands), axis=-1), axis=-1)
    P = phi(Cm.T).T if Cm.ndim > 1 else phi(Cm)
    lo_v, hi_v = Cm[:, 0], Cm[:, -1]
    lo_s = P[:, 0] - phi(lo_v - 1.0)
    hi_s = phi(hi_v + 1.0) - P[:, -1]
    V = np.where(R <= P[:, 0], lo_v - (P[:, 0] - R) / lo_s, hi_v + (R - P[:, -1]) / hi_s)
    for k in range(Cm.shape[1] - 1):
        a, b = Cm[:, k], Cm[:, k + 1]
        pa, pb = P[:, k], P[:, k + 1]
        inside = (R > pa) & (R <= pb) & (pb > pa)
        V = np.where(inside, a + (R - pa) * (b - a) / np.where(pb > pa, pb - pa, 1.0), V)
    C = coll(V)
    K = V + C + base
    return V, C, K


def _piece_slope(f: PiecewiseLinear, x: float) -> float:
    ks, sl = f.knots, f.slopes
    idx = int(np.searchsorted(ks, x, side="right"))
    return sl[idx]


def _grow_exact(st: _Setup, K, F, C):
    dt = st.lat.dt
    return (_pos(K) * math.expm1(st.lend * dt) - _neg(K) * math.expm1(st.borrow * dt)
            - F * math.expm1(st.r_ib * dt) - C * math.expm1(st.r_c * dt))


def _setup(req, regime, mode, lend=None, borrow=None) -> _Setup:
    ms = measure_selection(req.asset, req.rates, regime)
    lat = build(req.asset, req.rates, LatticeConfig(req.n_steps, req.contract.maturity, ms))
    r = req.rates
    return _Setup(lat, req.model == Model.PARTIAL_NETTING,
                  r.r_l if lend is None else lend, r.r_b if borrow is None else borrow,
                  r.r_c, r.r_ib[0], ms.drift + req.asset.kappa_bar, req.asset.kappa_bar, mode)


def _party(st: _Setup, sign, x, rate, dA):
    v0 = x * np.exp(rate * st.lat.times)
    return _Party(sign, v0, rate, [sign * a for a in dA])


def _step_inputs(st: _Setup, pt: _Party, i, W):
    """xi, R, moves and state targets for one party at step i."""
    lat, dt = st.lat, st.lat.dt
    S = lat.S[i]
    Wd, Wu = W[:-1], W[1:]
    div = st.kappa * S * dt
    if st.mode == OracleMode.MATCHED:
        adj = -pt.v0[i + 1] + pt.v0[i] * (1.0 + pt.r_end * dt)
        Wd, Wu = Wd + adj, Wu + adj
        sb = lat.asset.sigma_bar
        mu = st.ref - st.kappa
        dSd = S * (mu * dt - sb * lat.sqrt_dt)
        dSu = S * (mu * dt + sb * lat.sqrt_dt)
        xi = (Wu - Wd) / (2.0 * sb * S * lat.sqrt_dt)
        R = 0.5 * (Wu + Wd) - xi * st.ref * S * dt
    else:
        dSd = lat.S[i + 1][:-1] - S
        dSu = lat.S[i + 1][1:] - S
        if np.any(dSu == dSd):
            raise ArithmeticError(f"degenerate asset spread at step {i}")
        xi = (Wu - Wd) / (dSu - dSd)
        R = 0.5 * (Wu - xi * dSu + Wd - xi * dSd) - xi * div
    return S, xi, R, (dSd, dSu), div, (Wd, Wu)


class _Runner:
    """Backward sweep over both parties with the requested collateral coupling."""

    def __init__(self, st: _Setup, parties: list[_Party], coupling):
        self.st, self.parties, self.coupling = st, parties, coupling

    def run(self):
        st, lat = self.st, self.st.lat
        n = lat.n_steps
        out_w = [[None] * (n + 1) for _ in self.parties]
        out_steps = [[None] * n for _ in self.parties]
        for k, pt in enumerate(self.parties):
            out_w[k][n] = pt.v0[n] - pt.flows[n]
        for i in range(n - 1, -1, -1):
            res = self._step(i, [w[i + 1] for w in out_w])
            for k, pt in enumerate(self.parties):
                step = res[k]
                out_steps[k][i] = step
                out_w[k][i] = step.wealth - (pt.flows[i] if i > 0 else 0.0)
        reps = []
        for k, pt in enumerate(self.parties):
            price = tuple(pt.sign * (out_w[k][i] - pt.v0[i]) for i in range(n + 1))
            reps.append((tuple(out_w[k]), price, tuple(out_steps[k]), pt.v0))
        return reps

    def _step(self, i, Ws):
        st = self.st
        ins = [_step_inputs(st, pt, i, W) for pt, W in zip(self.parties, Ws)]
        if st.mode == OracleMode.MATCHED:
            return self._matched(i, ins)
        return self._independent(i, ins)

    # -- matched: collateral at the continuation-mean price of each party
    def _matched(self, i, ins):
        st, dt = self.st, self.st.lat.dt
        preds = []
        for pt, (S, xi, R, moves, div, tg) in zip(self.parties, ins):
            vhat = 0.5 * (tg[0] + tg[1]) - pt.v0[i] * pt.r_end * dt
            preds.append((vhat, pt.sign * (vhat - pt.v0[i])))
        C = self._collateral(i, [p[1] for p in preds])
        out = []
        for pt, (S, xi, R, moves, div, tg), (vhat, _) in zip(self.parties, ins, preds):
            Cown = pt.sign * C
            F = _pos(xi * S) if st.pn else 0.0 * S
            K = vhat + Cown - xi * S + F
            acc = (st.lend * _pos(K) - st.borrow * _neg(K) - st.r_ib * F - st.r_c * Cown) * dt
            V = R - acc
            out.append(ReplicationStep(i, xi, K, F, Cown, V, moves, div, (acc, acc), tg))
        return out

    def _collateral(self, i, prices):
        kind, obj = self.coupling
        if kind == "exogenous":
            return obj[i]
        if kind == "hedger":
            return obj(-prices[0])
        return obj.alpha * obj.hedger_map(-prices[0]) + (1 - obj.alpha) * obj.counterparty_map(-prices[1])

    # -- independent: implicit budget solve with exact growth
    def _independent(self, i, ins):
        st = self.st
        kind, obj = self.coupling
        res = [None] * len(self.parties)
        if kind == "exogenous":
            for k, pt in enumerate(self.parties):
                res[k] = self._solve(i, pt, ins[k], obj[i], 0.0, None)
            return res
        if kind == "hedger":
            res[0] = self._solve(i, self.parties[0], ins[0], 0.0, 1.0, obj)
            if len(self.parties) > 1:
                ph = res[0].wealth - self.parties[0].v0[i]
                res[1] = self._solve(i, self.parties[1], ins[1], obj(-ph), 0.0, None)
            return res
        a, q1, q2 = obj.alpha, obj.hedger_map, obj.counterparty_map
        h, c = self.parties
        # start from the continuation means and alternate between the two budgets
        pc = -(0.5 * (ins[1][5][0] + ins[1][5][1]) - c.v0[i + 1])
        for _ in range(100):
            rh = self._solve(i, h, ins[0], (1 - a) * q2(-pc), a, q1)
            ph = rh.wealth - h.v0[i]
            rc = self._solve(i, c, ins[1], a * q1(-ph), 1 - a, q2)
            pc_new = c.v0[i] - rc.wealth
            if np.max(np.abs(pc_new - pc)) <= 1e-13 * (1.0 + np.max(np.abs(pc_new))):
                pc = pc_new
                break
            pc = pc_new
        rh = self._solve(i, h, ins[0], (1 - a) * q2(-pc), a, q1)
        return [rh, rc]

    def _solve(self, i, pt, inp, c0, w, qmap):
        st = self.st
        S, xi, R, moves, div, tg = inp
        F = _pos(xi * S) if st.pn else 0.0 * S
        V, C, K = _solve_budget(st, S, xi, F, R, pt.v0[i], pt.sign, c0, w, qmap)
        g = _grow_exact(st, K, F, C)
        return ReplicationStep(i, xi, K, F, C, V, moves, div, (g, g), tg)


def _coupling(req, st: _Setup):
    conv = req.collateral
    if isinstance(conv, Exogenous):
        return ("exogenous", collateral_grid(conv, req.contract, st.lat))
    if isinstance(conv, HedgerQ):
        return ("hedger", conv.q)
    if isinstance(conv, Negotiated):
        return ("negotiated", conv)
    raise TypeError(f"unsupported collateral {type(conv).__name__}")


def replicate_pair(req, mode: OracleMode = OracleMode.INDEPENDENT):
    """Replicate for both parties; returns (hedger, counterparty)."""
    mode = OracleMode(mode)
    if req.model == Model.SINGLE_RATE:
        rep = replicate_single_rate(req, req.r_mid, mode)
        return rep, Replication(Party.COUNTERPARTY, rep.mode, rep.wealth, rep.price, rep.steps,
                                rep.endowment)
    regime = resolve_regime(req.x1, req.x2, req.measure)
    st = _setup(req, regime, mode)
    dA = cash_flow_increments(req.contract, st.lat)
    r = req.rates
    h = _party(st, 1.0, req.x1, r.r_l, dA)
    c_rate = r.r_b if (regime == Regime.BETA and req.x2 < 0) else r.r_l
    c = _party(st, -1.0, req.x2, c_rate, dA)
    reps = _Runner(st, [h, c], _coupling(req, st)).run()
    return tuple(Replication(p, mode, *rep) for p, rep in zip((Party.HEDGER, Party.COUNTERPARTY), reps))


def replicate(req, side: Party = Party.HEDGER, mode: OracleMode = OracleMode.INDEPENDENT) -> Replication:
    h, c = replicate_pair(req, mode)
    return h if Party(side) == Party.HEDGER else c


def replicate_single_rate(req, r_mid: float, mode: OracleMode = OracleMode.INDEPENDENT) -> Replication:
    """Hedger replication when cash lends and borrows at the single rate r_mid."""
    mode = OracleMode(mode)
    st = _setup(req, Regime.LENDING, mode, lend=r_mid, borrow=r_mid)
    dA = cash_flow_increments(req.contract, st.lat)
    h = _party(st, 1.0, 0.0, st.lend, dA)
    conv = req.collateral if isinstance(req.collateral, HedgerQ) else HedgerQ.zero()
    ((w, p, s, v0),) = _Runner(st, [h], ("hedger", conv.q)).run()
    return Replication(Party.HEDGER, mode, w, p, s, v0)
