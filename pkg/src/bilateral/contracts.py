"""Cash-flow processes, collateral conventions and piecewise-linear maps.

Sign convention: a positive increment of A is cash received by the hedger.
Jump flows that fall between grid times are assigned to the nearest grid time
from above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .market import ConfigError, account_value

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear map of one variable.

    Linear interpolation between `knots`, linear extrapolation with the given
    tail slopes outside them.
    """

    knots: tuple[float, ...]
    values: tuple[float, ...]
    left_slope: float = 0.0
    right_slope: float = 0.0

    def __post_init__(self) -> None:
        knots = tuple(float(k) for k in self.knots)
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        if len(knots) == 0 or len(knots) != len(values):
            raise ConfigError("piecewise-linear map needs matching, non-empty knots and values")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ConfigError("piecewise-linear knots strictly increasing")
        nums = knots + values + (self.left_slope, self.right_slope)
        if not all(math.isfinite(v) for v in nums):
            raise ConfigError("piecewise-linear map finite (uniformly Lipschitz)")

    @classmethod
    def constant(cls, c: float) -> PiecewiseLinear:
        return cls((0.0,), (c,), 0.0, 0.0)

    @classmethod
    def linear(cls, slope: float = 1.0) -> PiecewiseLinear:
        return cls((0.0,), (0.0,), slope, slope)

    @classmethod
    def call(cls, strike: float) -> PiecewiseLinear:
        return cls((strike,), (0.0,), 0.0, 1.0)

    @classmethod
    def put(cls, strike: float) -> PiecewiseLinear:
        return cls((strike,), (0.0,), -1.0, 0.0)

    @classmethod
    def haircut(cls, alpha1: float, alpha2: float) -> PiecewiseLinear:
        """q(y) = (1 + alpha1) y^+ - (1 + alpha2) y^-."""
        return cls((0.0,), (0.0,), 1.0 + alpha2, 1.0 + alpha1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k, v = np.asarray(self.knots), np.asarray(self.values)
        out = np.interp(x, k, v)
        out = np.where(x < k[0], v[0] + self.left_slope * (x - k[0]), out)
        out = np.where(x > k[-1], v[-1] + self.right_slope * (x - k[-1]), out)
        return float(out) if out.ndim == 0 else out

    def scaled(self, lam: float) -> PiecewiseLinear:
        return PiecewiseLinear(self.knots, tuple(lam * v for v in self.values),
                               lam * self.left_slope, lam * self.right_slope)

    @property
    def slopes(self) -> tuple[float, ...]:
        inner = tuple((v1 - v0) / (k1 - k0) for k0, k1, v0, v1 in
                      zip(self.knots, self.knots[1:], self.values, self.values[1:]))
        return (self.left_slope,) + inner + (self.right_slope,)

    @property
    def lipschitz(self) -> float:
        return max(abs(s) for s in self.slopes)

    @property
    def kinks(self) -> tuple[float, ...]:
        """Knots at which the slope actually changes."""
        sl = self.slopes
        return tuple(k for i, k in enumerate(self.knots) if sl[i] != sl[i + 1])

    def is_nonpositive_on_positive_axis(self) -> bool:
        """Exact test of f(s) ≤ 0 for every s > 0."""
        pts = [0.0] + [k for k in self.knots if k > 0]
        if any(self(p) > 0 for p in pts):
            return False
        return self.right_slope <= 0


# ---------------------------------------------------------------- collateral

@dataclass(frozen=True)
class Exogenous:
    """C(t, s) = profile(t) * level(s) before maturity, zero at maturity."""

    level: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(0.0))
    profile: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.constant(1.0))

    def value(self, t: float, s, maturity: float):
        if t >= maturity - _TIME_EPS:
            return np.zeros_like(np.asarray(s, dtype=float))
        return self.profile(t) * np.asarray(self.level(s), dtype=float)


@dataclass(frozen=True)
class HedgerQ:
    """Collateral C = q(-P^h): a function of the hedger's price only."""

    q: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.linear(1.0))

    def __post_init__(self) -> None:
        if self.q(0.0) != 0.0:
            raise ConfigError("q(0) = 0")

    @classmethod
    def haircut(cls, alpha1: float, alpha2: float) -> HedgerQ:
        return cls(PiecewiseLinear.haircut(alpha1, alpha2))

    @classmethod
    def zero(cls) -> HedgerQ:
        return cls(PiecewiseLinear.linear(0.0))


@dataclass(frozen=True)
class Negotiated:
    """C = alpha * q1(y1) + (1 - alpha) * q2(y2), fed with (-P^h, -P^c)."""

    alpha: float = 0.5
    hedger_map: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.linear(1.0))
    counterparty_map: PiecewiseLinear = field(default_factory=lambda: PiecewiseLinear.linear(1.0))

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError("alpha in [0, 1]", f"alpha={self.alpha}")
        if self.hedger_map(0.0) != 0.0 or self.counterparty_map(0.0) != 0.0:
            raise ConfigError("C_hat(0, 0) = 0")

    @property
    def lipschitz(self) -> float:
        return max(self.alpha * self.hedger_map.lipschitz,
                   (1 - self.alpha) * self.counterparty_map.lipschitz)


CollateralConvention = Union[Exogenous, HedgerQ, Negotiated]


def eval_q(conv: CollateralConvention, y):
    if not isinstance(conv, HedgerQ):
        raise TypeError(f"eval_q needs a HedgerQ convention, got {type(conv).__name__}")
    return conv.q(y)


def eval_negotiated(conv: CollateralConvention, y1, y2):
    if not isinstance(conv, Negotiated):
        raise TypeError(f"eval_negotiated needs a Negotiated convention, got {type(conv).__name__}")
    return conv.alpha * conv.hedger_map(y1) + (1 - conv.alpha) * conv.counterparty_map(y2)


@dataclass(frozen=True)
class Predicate:
    holds: bool
    witness: float | None = None


@dataclass(frozen=True)
class QPredicates:
    nonnegative_shift: Predicate   # y + q(-y) >= 0 for all y >= 0
    increasing: Predicate
    homogeneous: Predicate


def check_q_predicates(conv: HedgerQ) -> QPredicates:
    """Decide the three structural predicates exactly from the knots."""
    q = conv.q
    # h(y) = y + q(-y) on [0, inf) is piecewise linear with kinks at -k for k < 0.
    pts = sorted({0.0} | {-k for k in q.kinks if k < 0})
    bad = [y for y in pts if y + q(-y) < 0]
    tail = 1.0 - q.left_slope
    if bad:
        a = Predicate(False, bad[0])
    elif tail < 0:
        a = Predicate(False, pts[-1] + 1.0)
    else:
        a = Predicate(True)

    sl = q.slopes
    if all(s >= 0 for s in sl):
        b = Predicate(True)
    else:
        i = next(i for i, s in enumerate(sl) if s < 0)
        b = Predicate(False, q.knots[0] - 1.0 if i == 0 else q.knots[i - 1])

    off = [k for k in q.kinks if k != 0.0]
    if q(0.0) == 0.0 and not off:
        c = Predicate(True)
    else:
        c = Predicate(False, off[0] if off else 0.0)
    return QPredicates(a, b, c)


# ---------------------------------------------------------------- contracts

@dataclass(frozen=True)
class EuropeanClaim:
    payoff: PiecewiseLinear


@dataclass(frozen=True)
class DiscreteFlows:
    events: tuple[tuple[float, PiecewiseLinear], ...]

    def __post_init__(self) -> None:
        ev = tuple((float(t), h) for t, h in self.events)
        if any(b[0] < a[0] for a, b in zip(ev, ev[1:])):
            raise ConfigError("flow times non-decreasing")
        object.__setattr__(self, "events", ev)


@dataclass(frozen=True)
class ContinuousFee:
    """Fee paid by the hedger at `rate` per year from `start` to maturity."""

    rate: float
    start: float = 0.0


@dataclass(frozen=True)
class Mixed:
    legs: tuple[Union[EuropeanClaim, DiscreteFlows, ContinuousFee], ...]


Flows = Union[EuropeanClaim, DiscreteFlows, ContinuousFee, Mixed]


def _legs(flows: Flows) -> tuple:
    return flows.legs if isinstance(flows, Mixed) else (flows,)


@dataclass(frozen=True)
class ContractSpec:
    maturity: float
    flows: Flows = field(default_factory=lambda: DiscreteFlows(()))

    def __post_init__(self) -> None:
        T = self.maturity
        if not (T > 0 and math.isfinite(T)):
            raise ConfigError("T > 0")
        for leg in _legs(self.flows):
            if isinstance(leg, DiscreteFlows):
                for t, _ in leg.events:
                    if not (0.0 < t <= T + _TIME_EPS):
                        raise ConfigError("flow times in (0, T]", f"t={t}, T={T}")
            elif isinstance(leg, ContinuousFee):
                if not (0.0 <= leg.start < T):
                    raise ConfigError("fee start in [0, T)", f"start={leg.start}")
            elif isinstance(leg, Mixed):
                raise ConfigError("Mixed legs are not nested")

    @property
    def legs(self) -> tuple:
        return _legs(self.flows)

    @classmethod
    def zero(cls, maturity: float = 1.0) -> ContractSpec:
        return cls(maturity)

    def scaled(self, lam: float) -> ContractSpec:
        out = []
        for leg in self.legs:
            if isinstance(leg, EuropeanClaim):
                out.append(EuropeanClaim(leg.payoff.scaled(lam)))
            elif isinstance(leg, DiscreteFlows):
                out.append(DiscreteFlows(tuple((t, h.scaled(lam)) for t, h in leg.events)))
            else:
                out.append(ContinuousFee(lam * leg.rate, leg.start))
        flows = out[0] if len(out) == 1 and not isinstance(self.flows, Mixed) else Mixed(tuple(out))
        return ContractSpec(self.maturity, flows)

    def negated(self) -> ContractSpec:
        return self.scaled(-1.0)


def is_decreasing(contract: ContractSpec) -> bool:
    """True when A - A_0 is non-increasing for every asset path."""
    for leg in contract.legs:
        if isinstance(leg, ContinuousFee):
            if leg.rate < 0:
                return False
        elif isinstance(leg, EuropeanClaim):
            if not leg.payoff.is_nonpositive_on_positive_axis():
                return False
        else:
            if not all(h.is_nonpositive_on_positive_axis() for _, h in leg.events):
                return False
    return True


def grid_index(t: float, dt: float, n: int) -> int:
    """Grid index of the first grid time at or after t."""
    return int(min(max(math.ceil(t / dt - _TIME_EPS), 1), n))


def cash_flow_increments(contract: ContractSpec, lattice) -> list[np.ndarray]:
    """Node-wise increments of A on each grid step; entry i lives at step i.

    Entry 0 is zero. Jumps go to the first grid time at or after their date.
    A fee contributes -c times the overlap of the step with [start, T].
    """
    n, dt = lattice.n_steps, lattice.dt
    if abs(lattice.T - contract.maturity) > _TIME_EPS * max(1.0, contract.maturity):
        raise ConfigError("lattice horizon equals T")
    out = [np.zeros(i + 1) for i in range(n + 1)]
    for leg in contract.legs:
        if isinstance(leg, EuropeanClaim):
            out[n] = out[n] + leg.payoff(lattice.S[n])
        elif isinstance(leg, DiscreteFlows):
            for t, h in leg.events:
                i = grid_index(t, dt, n)
                out[i] = out[i] + h(lattice.S[i])
        else:
            for i in range(1, n + 1):
                lo, hi = (i - 1) * dt, i * dt
                overlap = max(0.0, hi - max(lo, leg.start))
                if overlap:
                    out[i] = out[i] - leg.rate * overlap
    return out


def collateral_grid(conv: Exogenous, contract: ContractSpec, lattice) -> list[np.ndarray]:
    """Exogenous collateral amounts at every node, zero at maturity."""
    return [np.broadcast_to(conv.value(lattice.times[i], lattice.S[i], contract.maturity),
                            lattice.S[i].shape).astype(float)
            for i in range(lattice.n_steps + 1)]


def collateral_interest(conv: Exogenous, contract: ContractSpec, lattice) -> list[np.ndarray]:
    """Per-step increments of F^C = -int r_c C du, indexed by the parent step.

    Entry i (i < n) is the interest over (t_i, t_{i+1}] for each parent node;
    collateral is held constant over the step.
    """
    grid = collateral_grid(conv, contract, lattice)
    r_c = lattice.rates.r_c
    return [-r_c * grid[i] * lattice.dt for i in range(lattice.n_steps)]


@dataclass(frozen=True)
class DiscountedSchedule:
    """Edge increments of the discounted flows A^C.

    `edges[i]` has shape (i + 1, 2): parent node j of step i, then the down
    and up child at step i + 1.
    """

    edges: tuple[np.ndarray, ...]

    def total(self) -> float:
        return float(sum(np.abs(e).sum() for e in self.edges))


def discounted_flows(contract: ContractSpec, lattice, account: str = "lending",
                     collateral: Exogenous | None = None) -> DiscountedSchedule:
    """Increments of int B^{-1} d(A + C + F^C) along every lattice edge.

    Flows are discounted at their occurrence time; collateral interest is
    integrated exactly against the discount factor over each step.
    """
    rates = lattice.rates
    r = rates.r_l if account == "lending" else rates.r_b
    dA = cash_flow_increments(contract, lattice)
    conv = collateral or Exogenous()
    C = collateral_grid(conv, contract, lattice)
    dt, out = lattice.dt, []
    for i in range(lattice.n_steps):
        t0, t1 = lattice.times[i], lattice.times[i + 1]
        disc1 = 1.0 / account_value(r, t1)
        if r > 0:
            idisc = (1.0 / account_value(r, t0) - disc1) / r
        else:
            idisc = dt
        cp = C[i]
        down = (dA[i + 1][:-1] + C[i + 1][:-1] - cp) * disc1 - rates.r_c * cp * idisc
        up = (dA[i + 1][1:] + C[i + 1][1:] - cp) * disc1 - rates.r_c * cp * idisc
        out.append(np.stack([down, up], axis=1))
    return DiscountedSchedule(tuple(out))
