"""Backward induction for scalar and paired BSDEs on the binomial lattice.

Values are stored just before the flow at their grid time (pre-jump).  One
step reads

    m, Z_W = E[Y_{i+1}],  (Y_{i+1,up} - Y_{i+1,down}) / (2 sqrt dt)
    Y_i    = m - g(t_i, S, m, z) dt - dA_i

so the driver is explicit at the continuation mean.  The flow at maturity is
not in the recursion; it is part of the terminal data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import generators as gen
from .contracts import eval_negotiated
from .generators import DriverPoint, Family, GeneratorSpec
from .lattice import Lattice, step_expectation
from .market import NumericError


class CouplingMode(str, Enum):
    SCALAR = "scalar"
    SEQUENTIAL_PAIR = "sequential_pair"
    SIMULTANEOUS_PAIR = "simultaneous_pair"


class Side(str, Enum):
    HEDGER = "hedger"
    COUNTERPARTY = "counterparty"


@dataclass(frozen=True)
class BsdeSolution:
    y: tuple[np.ndarray, ...]       # pre-jump values, steps 0..n
    z_w: tuple[np.ndarray, ...]     # dW coefficient, steps 0..n-1
    xi: tuple[np.ndarray, ...]      # Z_W / sigma(t, S)
    means: tuple[np.ndarray, ...]   # continuation means, steps 0..n-1
    terminal: np.ndarray
    wealth: tuple[np.ndarray, ...] | None = None

    @property
    def y0(self) -> float:
        return float(self.y[0][0])


@dataclass(frozen=True)
class BsdeProblem:
    """A BSDE on a lattice.

    `flows[i]` is the node-wise jump of A at step i; the entry at maturity is
    ignored because `terminal` already holds the pre-jump terminal values.
    Exogenous-collateral families also need `side` and `collateral`, the
    collateral amounts per step.  `hedger` carries the solved hedger leg of a
    sequential pair.
    """

    generator: GeneratorSpec | tuple[GeneratorSpec, GeneratorSpec]
    terminal: np.ndarray | tuple[np.ndarray, np.ndarray]
    flows: Sequence[np.ndarray]
    mode: CouplingMode = CouplingMode.SCALAR
    side: Side = Side.HEDGER
    collateral: Sequence[np.ndarray] | None = None
    hedger: BsdeSolution | None = None
    fixed_point: bool = False

    def __post_init__(self) -> None:
        g = self.generator
        pair = isinstance(g, tuple)
        if self.mode == CouplingMode.SCALAR and (pair or g.is_pair):
            raise ValueError("scalar mode needs a scalar generator")
        if self.mode == CouplingMode.SEQUENTIAL_PAIR and not pair:
            raise ValueError("sequential mode needs a (hedger, counterparty) generator pair")
        if self.mode == CouplingMode.SIMULTANEOUS_PAIR and (pair or not g.is_pair):
            raise ValueError("simultaneous mode needs a coupled generator")


def _check(arr: np.ndarray, i: int, what: str) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite {what} at step {i}, node {j}")


def _z_arg(spec: GeneratorSpec, t: float, xi: np.ndarray) -> np.ndarray:
    if spec.family in gen.LENDING_LEVEL:
        return math.exp(spec.rates.r_l * t) * xi
    return xi


def _wealth_rate(spec: GeneratorSpec) -> float:
    r = spec.rates
    return r.r_b if spec.family in (Family.Bergman_Gb, Family.PN_Gb) else r.r_l


def _exogenous_driver(spec, side, t, s, m, xi, C):
    """Driver of the price P under exogenous collateral, built from a G-family."""
    r = spec.rates
    if spec.family in gen.WEALTH:
        rho = _wealth_rate(spec)
        B = math.exp(rho * t)
        if side == Side.HEDGER:
            G = gen.eval(spec, DriverPoint(t, s, spec.x1 + (m + C) / B, xi))
            return B * G + rho * (m + C) - r.r_c * C
        G = gen.eval(spec, DriverPoint(t, s, spec.x2 - (m + C) / B, -xi))
        return -B * G + rho * (m + C) - r.r_c * C
    return gen.eval(spec, DriverPoint(t, s, m + C, xi)) - r.r_c * C


def _wealth_grid(spec, side, lattice, y, C):
    if spec.family in gen.WEALTH:
        rho = _wealth_rate(spec)
        B = np.exp(rho * lattice.times)
        if side == Side.HEDGER:
            return tuple(spec.x1 + (y[i] + C[i]) / B[i] for i in range(len(y)))
        return tuple(spec.x2 - (y[i] + C[i]) / B[i] for i in range(len(y)))
    return tuple(y[i] + C[i] for i in range(len(y)))


def _sweep(lattice: Lattice, terminal: np.ndarray, flows, driver: Callable) -> BsdeSolution:
    n, dt = lattice.n_steps, lattice.dt
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (n + 1,):
        raise ValueError(f"terminal data must have {n + 1} nodes")
    _check(terminal, n, "terminal value")
    y = [None] * (n + 1)
    zs, xis, means = [None] * n, [None] * n, [None] * n
    y[n] = terminal
    for i in range(n - 1, -1, -1):
        m, zw = step_expectation(y[i + 1], lattice.sqrt_dt)
        xi = zw / lattice.sigma(i)
        g = np.asarray(driver(i, m, xi), dtype=float)
        _check(g, i, "driver value")
        y[i] = m - g * dt - (flows[i] if i > 0 else 0.0)
        zs[i], xis[i], means[i] = zw, xi, m
    return BsdeSolution(tuple(y), tuple(zs), tuple(xis), tuple(means), terminal)


def solve_scalar(problem: BsdeProblem, lattice: Lattice, external=None) -> BsdeSolution:
    """Scalar solve; `external` supplies y1_external per step for counterparty drivers."""
    spec = problem.generator
    if isinstance(spec, tuple):
        raise ValueError("solve_scalar needs a single generator")
    terminal = problem.terminal[0] if isinstance(problem.terminal, tuple) else problem.terminal

    if spec.family in gen.EXOGENOUS:
        C = problem.collateral
        if C is None:
            raise ValueError("exogenous families need collateral amounts")

        def driver(i, m, xi):
            return _exogenous_driver(spec, problem.side, lattice.times[i], lattice.S[i], m, xi, C[i])

        sol = _sweep(lattice, terminal, problem.flows, driver)
        return replace(sol, wealth=_wealth_grid(spec, problem.side, lattice, sol.y, C))

    if spec.family in gen.COUNTER_Q and external is None:
        raise ValueError(f"{spec.family.value} needs the hedger's solution")

    def driver(i, m, xi):
        t = lattice.times[i]
        ext = None if external is None else external[i]
        return gen.eval(spec, DriverPoint(t, lattice.S[i], m, _z_arg(spec, t, xi), ext))

    return _sweep(lattice, terminal, problem.flows, driver)


def solve_sequential_pair(problem: BsdeProblem, lattice: Lattice):
    """Hedger first, then the counterparty reading the hedger's continuation means."""
    if problem.mode != CouplingMode.SEQUENTIAL_PAIR:
        raise ValueError("expected SequentialPair mode")
    f_spec, g_spec = problem.generator
    t1, t2 = problem.terminal if isinstance(problem.terminal, tuple) else (problem.terminal,) * 2
    hedger = problem.hedger
    if hedger is None:
        hedger = solve_scalar(BsdeProblem(f_spec, t1, problem.flows), lattice)
    cp = solve_scalar(BsdeProblem(g_spec, t2, problem.flows), lattice, external=hedger.means)
    return hedger, cp


def solve_simultaneous_pair(problem: BsdeProblem, lattice: Lattice):
    """One sweep for both components; the shared collateral uses the continuation means."""
    if problem.mode != CouplingMode.SIMULTANEOUS_PAIR:
        raise ValueError("expected SimultaneousPair mode")
    spec = problem.generator
    conv = spec.collateral
    n, dt = lattice.n_steps, lattice.dt
    t1, t2 = problem.terminal if isinstance(problem.terminal, tuple) else (problem.terminal,) * 2
    t1, t2 = np.asarray(t1, dtype=float), np.asarray(t2, dtype=float)
    _check(t1, n, "terminal value")
    _check(t2, n, "terminal value")
    ys = [[None] * (n + 1), [None] * (n + 1)]
    zs = [[None] * n, [None] * n]
    xis = [[None] * n, [None] * n]
    ms = [[None] * n, [None] * n]
    ys[0][n], ys[1][n] = t1, t2
    for i in range(n - 1, -1, -1):
        t, s = lattice.times[i], lattice.S[i]
        m1, zw1 = step_expectation(ys[0][i + 1], lattice.sqrt_dt)
        m2, zw2 = step_expectation(ys[1][i + 1], lattice.sqrt_dt)
        sig = lattice.sigma(i)
        xi1, xi2 = zw1 / sig, zw2 / sig
        p = DriverPoint(t, s, (m1, m2), (_z_arg(spec, t, xi1), _z_arg(spec, t, xi2)))
        coll = eval_negotiated(conv, -m1, -m2)
        g1, g2 = gen.eval_with_collateral(spec, p, coll)
        a1, a2 = m1 - g1 * dt, m2 - g2 * dt
        if problem.fixed_point:
            for _ in range(5):
                g1, g2 = gen.eval_with_collateral(spec, p, eval_negotiated(conv, -a1, -a2))
                b1, b2 = m1 - g1 * dt, m2 - g2 * dt
                done = max(np.max(np.abs(b1 - a1)), np.max(np.abs(b2 - a2))) <= 1e-12
                a1, a2 = b1, b2
                if done:
                    break
        _check(a1, i, "driver value")
        _check(a2, i, "driver value")
        flow = problem.flows[i] if i > 0 else 0.0
        ys[0][i], ys[1][i] = a1 - flow, a2 - flow
        zs[0][i], zs[1][i] = zw1, zw2
        xis[0][i], xis[1][i] = xi1, xi2
        ms[0][i], ms[1][i] = m1, m2
    return tuple(BsdeSolution(tuple(ys[k]), tuple(zs[k]), tuple(xis[k]), tuple(ms[k]),
                              (t1, t2)[k]) for k in range(2))


def richardson(p_n, p_2n):
    """First-order extrapolation 2 p_2n - p_n."""
    return 2.0 * p_2n - p_n
