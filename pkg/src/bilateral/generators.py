"""BSDE drivers for the funding models, evaluated pointwise and vectorised.

Every driver is an exact piecewise-linear expression; positive and negative
parts are plain max(v, 0) and max(-v, 0).  The argument `z` is the holding in
the asset as it enters the driver formula; converting a lattice coefficient
into this form is the solver's job.

Families ending in `fl`/`fbar` are hedger drivers, `gl`/`gbar` their
counterparty partners, which read the hedger's value through `y1_external`.
The `G*` families act on wealth levels under exogenous collateral.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .contracts import CollateralConvention, Exogenous, HedgerQ, Negotiated, eval_negotiated
from .market import ConfigError, RateEnvironment


class Family(str, Enum):
    Bergman_fl = "Bergman_fl"
    Bergman_gl = "Bergman_gl"
    Bergman_fbar = "Bergman_fbar"
    Bergman_gbar = "Bergman_gbar"
    Bergman_Gl = "Bergman_Gl"
    Bergman_Gb = "Bergman_Gb"
    Bergman_Gh = "Bergman_Gh"
    Bergman_Gc = "Bergman_Gc"
    SingleRate_f = "SingleRate_f"
    PN_SingleRate_f = "PN_SingleRate_f"
    PN_fl = "PN_fl"
    PN_gl = "PN_gl"
    PN_fbar = "PN_fbar"
    PN_gbar = "PN_gbar"
    PN_Gl = "PN_Gl"
    PN_Gb = "PN_Gb"
    PN_Gh = "PN_Gh"
    PN_Gc = "PN_Gc"
    Coupled_Bergman_g = "Coupled_Bergman_g"
    Coupled_Bergman_ghat = "Coupled_Bergman_ghat"
    Coupled_PN_g = "Coupled_PN_g"
    Coupled_PN_ghat = "Coupled_PN_ghat"


F = Family
HEDGER_Q = {F.Bergman_fl, F.PN_fl, F.Bergman_fbar, F.PN_fbar}
COUNTER_Q = {F.Bergman_gl, F.PN_gl, F.Bergman_gbar, F.PN_gbar}
SINGLE = {F.SingleRate_f, F.PN_SingleRate_f}
WEALTH = {F.Bergman_Gl, F.Bergman_Gb, F.PN_Gl, F.PN_Gb}
EXO_BETA = {F.Bergman_Gh, F.Bergman_Gc, F.PN_Gh, F.PN_Gc}
EXOGENOUS = WEALTH | EXO_BETA
COUPLED = {F.Coupled_Bergman_g, F.Coupled_Bergman_ghat, F.Coupled_PN_g, F.Coupled_PN_ghat}
PARTIAL_NETTING = {f for f in Family if f.value.startswith("PN") or f == F.Coupled_PN_g
                   or f == F.Coupled_PN_ghat}
# Families whose z is a lending-discounted holding (z S / B^l appears).
LENDING_LEVEL = {F.Bergman_fl, F.Bergman_gl, F.PN_fl, F.PN_gl, F.SingleRate_f,
                 F.PN_SingleRate_f, F.Coupled_Bergman_g, F.Coupled_PN_g}


@dataclass(frozen=True)
class GeneratorSpec:
    family: Family
    rates: RateEnvironment
    x1: float = 0.0
    x2: float = 0.0
    collateral: CollateralConvention | None = None
    r_mid: float | None = None
    d: int = 1

    def __post_init__(self) -> None:
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if self.d != self.rates.d:
            raise ConfigError("d = number of per-asset rates", f"d={self.d}, rates.d={self.rates.d}")
        if fam in SINGLE:
            r = self.r_mid
            if r is None or not (self.rates.r_l <= r <= self.rates.r_b):
                raise ConfigError("r_l ≤ r_mid ≤ r_b", f"r_mid={r}")
            if self.collateral is None:
                object.__setattr__(self, "collateral", HedgerQ.zero())
        need = (HedgerQ if fam in HEDGER_Q | COUNTER_Q | SINGLE
                else Exogenous if fam in EXOGENOUS else Negotiated)
        if not isinstance(self.collateral, need):
            raise ConfigError(f"{fam.value} requires a {need.__name__} collateral convention")

    def with_endowments(self, x1: float, x2: float) -> GeneratorSpec:
        return dataclasses.replace(self, x1=x1, x2=x2)

    @property
    def is_pair(self) -> bool:
        return self.family in COUPLED


@dataclass(frozen=True)
class DriverPoint:
    """Evaluation point.  For coupled families `y` and `z` are pairs."""

    t: float
    s: object
    y: object
    z: object
    y1_external: object = None


def _pos(v):
    return np.maximum(v, 0.0)


def _neg(v):
    return np.maximum(-v, 0.0)


@dataclass
class _Sums:
    v: object        # sum z_i S_i
    pos: object      # sum (z_i S_i)^+
    neg: object      # sum (z_i S_i)^-
    rib_pos: object  # sum r_ib,i (z_i S_i)^+
    rib_neg: object  # sum r_ib,i (z_i S_i)^-
    beta: object     # sum beta_i z_i S_i


def _sums(rates: RateEnvironment, d: int, s, z) -> _Sums:
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("asset prices must be positive")
    v = np.asarray(z, dtype=float) * s
    if d == 1:
        p, m = _pos(v), _neg(v)
        return _Sums(v, p, m, rates.r_ib[0] * p, rates.r_ib[0] * m, rates.beta[0] * v)
    rib, beta = np.asarray(rates.r_ib), np.asarray(rates.beta)
    p, m = _pos(v), _neg(v)
    return _Sums(v.sum(-1), p.sum(-1), m.sum(-1), (rib * p).sum(-1), (rib * m).sum(-1),
                 (beta * v).sum(-1))


def _hedger_lending(pn, r, t, x1, y, m: _Sums, coll):
    Bl = np.exp(r.r_l * t)
    if pn:
        K = y + coll + x1 * Bl + m.neg / Bl
        extra = -m.rib_pos / Bl
    else:
        K = y + coll + x1 * Bl - m.v / Bl
        extra = 0.0
    return (r.r_l * m.v / Bl + extra - x1 * Bl * r.r_l - r.r_c * coll
            + r.r_l * _pos(K) - r.r_b * _neg(K))


def _counter_lending(pn, r, t, x2, y, m: _Sums, coll):
    Bl = np.exp(r.r_l * t)
    if pn:
        K = -y - coll + x2 * Bl + m.pos / Bl
        extra = m.rib_neg / Bl
    else:
        K = -y - coll + x2 * Bl + m.v / Bl
        extra = 0.0
    return (r.r_l * m.v / Bl + extra + x2 * Bl * r.r_l - r.r_c * coll
            - r.r_l * _pos(K) + r.r_b * _neg(K))


def _hedger_beta(pn, r, t, x1, y, m: _Sums, coll):
    Bl = np.exp(r.r_l * t)
    if pn:
        K = y + coll + x1 * Bl + m.neg
        extra = -m.rib_pos
    else:
        K = y + coll + x1 * Bl - m.v
        extra = 0.0
    return (m.beta + extra - x1 * r.r_l * Bl - r.r_c * coll
            + r.r_l * _pos(K) - r.r_b * _neg(K))


def _counter_beta(pn, r, t, x2, y, m: _Sums, coll):
    Bb = np.exp(r.r_b * t)
    if pn:
        K = -y - coll + x2 * Bb + m.pos
        extra = m.rib_neg
    else:
        K = -y - coll + x2 * Bb + m.v
        extra = 0.0
    return (m.beta + extra + x2 * r.r_b * Bb - r.r_c * coll
            - r.r_l * _pos(K) + r.r_b * _neg(K))


def _wealth(pn, r, t, y, m: _Sums, borrow):
    rho = r.r_b if borrow else r.r_l
    B = np.exp(rho * t)
    if pn:
        K = y * B + m.neg
        return rho * m.v / B - m.rib_pos / B - rho * y + (r.r_l * _pos(K) - r.r_b * _neg(K)) / B
    K = y * B - m.v
    return rho * m.v / B + (r.r_l * _pos(K) - r.r_b * _neg(K)) / B - rho * y


def _single(pn, r, t, rm, y, m: _Sums, coll):
    Bl = np.exp(r.r_l * t)
    if pn:
        return (r.r_l * m.v / Bl - m.rib_pos / Bl + rm * m.neg / Bl
                - r.r_c * coll + rm * (y + coll))
    return (r.r_l - rm) * m.v / Bl - r.r_c * coll + rm * (y + coll)


def collateral_value(spec: GeneratorSpec, p: DriverPoint):
    """The collateral amount a driver uses at `p` (None for exogenous families)."""
    fam = spec.family
    if fam in HEDGER_Q or fam in SINGLE:
        return spec.collateral.q(-np.asarray(p.y, dtype=float))
    if fam in COUNTER_Q:
        if p.y1_external is None:
            raise ValueError(f"{fam.value} needs y1_external")
        return spec.collateral.q(-np.asarray(p.y1_external, dtype=float))
    if fam in COUPLED:
        y1, y2 = p.y
        return eval_negotiated(spec.collateral, -np.asarray(y1, dtype=float),
                               -np.asarray(y2, dtype=float))
    return None


def eval_with_collateral(spec: GeneratorSpec, p: DriverPoint, coll):
    """Evaluate with the collateral amount supplied instead of derived from `p`."""
    fam, r, t = spec.family, spec.rates, np.asarray(p.t, dtype=float)
    pn = fam in PARTIAL_NETTING
    if fam in COUPLED:
        (y1, y2), (z1, z2) = p.y, p.z
        m1 = _sums(r, spec.d, p.s, z1)
        m2 = _sums(r, spec.d, p.s, z2)
        y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
        if fam in (F.Coupled_Bergman_g, F.Coupled_PN_g):
            return (_hedger_lending(pn, r, t, spec.x1, y1, m1, coll),
                    _counter_lending(pn, r, t, spec.x2, y2, m2, coll))
        return (_hedger_beta(pn, r, t, spec.x1, y1, m1, coll),
                _counter_beta(pn, r, t, spec.x2, y2, m2, coll))
    y = np.asarray(p.y, dtype=float)
    m = _sums(r, spec.d, p.s, p.z)
    if fam in (F.Bergman_fl, F.PN_fl):
        return _hedger_lending(pn, r, t, spec.x1, y, m, coll)
    if fam in (F.Bergman_gl, F.PN_gl):
        return _counter_lending(pn, r, t, spec.x2, y, m, coll)
    if fam in (F.Bergman_fbar, F.PN_fbar):
        return _hedger_beta(pn, r, t, spec.x1, y, m, coll)
    if fam in (F.Bergman_gbar, F.PN_gbar):
        return _counter_beta(pn, r, t, spec.x2, y, m, coll)
    if fam in SINGLE:
        return _single(pn, r, t, spec.r_mid, y, m, coll)
    raise ValueError(f"{fam.value} takes no collateral amount")


def eval(spec: GeneratorSpec, p: DriverPoint):
    """Driver value at `p`; a pair for coupled families."""
    fam, r, t = spec.family, spec.rates, np.asarray(p.t, dtype=float)
    if fam in COUPLED:
        if not (isinstance(p.y, (tuple, list)) and len(p.y) == 2 and len(p.z) == 2):
            raise ValueError(f"{fam.value} needs y and z pairs")
    elif isinstance(p.y, (tuple, list)):
        raise ValueError(f"{fam.value} takes a scalar y")
    pn = fam in PARTIAL_NETTING
    if fam in EXOGENOUS:
        y = np.asarray(p.y, dtype=float)
        m = _sums(r, spec.d, p.s, p.z)
        if fam in WEALTH:
            return _wealth(pn, r, t, y, m, borrow=fam in (F.Bergman_Gb, F.PN_Gb))
        if fam in (F.Bergman_Gh, F.PN_Gh):
            return _hedger_beta(pn, r, t, spec.x1, y, m, 0.0)
        return _counter_beta(pn, r, t, spec.x2, y, m, 0.0)
    return eval_with_collateral(spec, p, collateral_value(spec, p))


_GAP_PAIRS = {
    F.Bergman_gl: F.Bergman_fl,
    F.PN_gl: F.PN_fl,
    F.Bergman_gbar: F.Bergman_fbar,
    F.PN_gbar: F.PN_fbar,
}


def eval_gap(spec_a: GeneratorSpec, spec_b: GeneratorSpec, p: DriverPoint):
    """Gap between a counterparty driver and its hedger partner, with its lower bound.

    Both are evaluated at (y, z) of `p`; the counterparty reads y as the
    hedger's value.  x2 comes from `spec_a`, x1 from `spec_b`.
    """
    if _GAP_PAIRS.get(spec_a.family) != spec_b.family:
        raise ValueError(f"incompatible pair {spec_a.family.value}, {spec_b.family.value}")
    if spec_a.rates != spec_b.rates:
        raise ValueError("gap pair must share rates")
    pa = dataclasses.replace(p, y1_external=p.y)
    delta = eval(spec_a, pa) - eval(spec_b, p)
    r, t = spec_a.rates, np.asarray(p.t, dtype=float)
    x1, x2 = spec_b.x1, spec_a.x2
    m = _sums(r, spec_a.d, p.s, p.z)
    absv = m.pos + m.neg
    fam = spec_a.family
    if fam == F.Bergman_gl:
        bound = np.zeros_like(np.asarray(delta, dtype=float))
    elif fam == F.PN_gl:
        Bl = np.exp(r.r_l * t)
        rib_abs = m.rib_pos + m.rib_neg
        bound = (rib_abs - r.r_l * absv) / Bl
    else:
        Bl, Bb = np.exp(r.r_l * t), np.exp(r.r_b * t)
        lo = -(r.r_b - r.r_l) * x1 * Bl
        hi = (r.r_b - r.r_l) * x2 * Bb
        if fam == F.PN_gbar:
            rib_abs = m.rib_pos + m.rib_neg
            lo = lo + rib_abs - r.r_b * absv
            hi = hi + rib_abs - r.r_l * absv
        bound = np.maximum(lo, hi)
    if np.ndim(delta) == 0:
        return float(delta), float(bound)
    return delta, bound


_HOMOGENEOUS = {F.Bergman_fbar, F.PN_fbar, F.Bergman_gbar, F.PN_gbar}


def homogeneity_identity_check(spec: GeneratorSpec, p: DriverPoint, lam: float) -> float:
    """lam * f(x, y/lam, z/lam) - f(lam x, y, z); zero for homogeneous q."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if spec.family not in _HOMOGENEOUS:
        raise ValueError(f"{spec.family.value} is not covered by the homogeneity identity")
    if lam == 0:
        zero = dataclasses.replace(p, y=0.0, z=np.zeros_like(np.asarray(p.z, dtype=float)),
                                   y1_external=0.0)
        return -float(eval(spec.with_endowments(0.0, 0.0), zero))
    ext = None if p.y1_external is None else np.asarray(p.y1_external) / lam
    small = dataclasses.replace(p, y=np.asarray(p.y) / lam, z=np.asarray(p.z) / lam, y1_external=ext)
    lhs = lam * eval(spec, small)
    rhs = eval(spec.with_endowments(lam * spec.x1, lam * spec.x2), p)
    return float(lhs - rhs)


def lipschitz_bound(spec: GeneratorSpec, s_max: float) -> tuple[float, float]:
    """(L_y, L_z) with |f(y,z) - f(y',z')| ≤ L_y|y-y'| + L_z|z-z'| when S ≤ s_max.

    For coupled families the bound applies per component to the sum over both
    y and both z arguments.
    """
    r = spec.rates
    conv = spec.collateral
    if isinstance(conv, HedgerQ):
        lq = conv.q.lipschitz
    elif isinstance(conv, Negotiated):
        lq = max(conv.hedger_map.lipschitz, conv.counterparty_map.lipschitz)
    else:
        lq = 0.0
    rmax = max((r.r_b, r.r_c) + tuple(r.r_ib) + tuple(r.beta) + ((spec.r_mid or 0.0),))
    ly = r.r_c * lq + r.r_b * (1.0 + lq) + rmax
    lz = spec.d * s_max * 4.0 * rmax
    return ly, lz
