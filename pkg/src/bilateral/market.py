"""Rates, funding accounts, the risky asset and the choice of martingale measure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when an input violates a model invariant; `invariant` names it."""

    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        msg = f"violated invariant: {invariant}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(ArithmeticError):
    """Raised when a solver produces a non-finite value."""


class Regime(str, Enum):
    LENDING = "lending"
    BETA = "beta"


class Model(str, Enum):
    BERGMAN = "bergman"
    PARTIAL_NETTING = "partial_netting"
    SINGLE_RATE = "single_rate"


def _as_tuple(v: float | Sequence[float]) -> tuple[float, ...]:
    if np.ndim(v) == 0:
        return (float(v),)
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class RateEnvironment:
    """Constant per-year rates.

    `r_ib` and `beta` are per-asset; scalars are promoted to length-one tuples.
    When omitted both default to `r_b`.
    """

    r_l: float
    r_b: float
    r_c: float
    r_ib: tuple[float, ...] | float | None = None
    beta: tuple[float, ...] | float | None = None

    def __post_init__(self) -> None:
        r_ib = _as_tuple(self.r_b if self.r_ib is None else self.r_ib)
        beta = _as_tuple(self.r_b if self.beta is None else self.beta)
        if len(beta) == 1 and len(r_ib) > 1:
            beta = beta * len(r_ib)
        object.__setattr__(self, "r_ib", r_ib)
        object.__setattr__(self, "beta", beta)
        vals = (self.r_l, self.r_b, self.r_c) + r_ib + beta
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("rates finite")
        if not (0.0 <= self.r_l <= self.r_b):
            raise ConfigError("0 ≤ r_l ≤ r_b", f"r_l={self.r_l}, r_b={self.r_b}")
        if len(r_ib) != len(beta):
            raise ConfigError("len(r_ib) = len(beta) = d")
        if any(r < self.r_l for r in r_ib):
            raise ConfigError("r_l ≤ r_ib[i]", f"r_ib={r_ib}")

    @property
    def d(self) -> int:
        return len(self.r_ib)

    @classmethod
    def single(cls, r: float, d: int = 1) -> RateEnvironment:
        return cls(r, r, r, (r,) * d, (r,) * d)

    def check_beta(self, model: Model) -> None:
        """Validate the beta-measure constraints for `model`."""
        for b, rib in zip(self.beta, self.r_ib):
            if b < self.r_b:
                raise ConfigError("r_b ≤ beta[i]", f"beta={self.beta}, r_b={self.r_b}")
            if model == Model.PARTIAL_NETTING and b > rib:
                raise ConfigError("r_b ≤ beta[i] ≤ r_ib[i]", f"beta={self.beta}, r_ib={self.r_ib}")


@dataclass(frozen=True)
class AssetDynamics:
    """GBM with proportional dividend yield: dS = mu S dt + sigma S dW, dD = kappa S dt."""

    s0: float
    sigma_bar: float
    mu_bar: float = 0.0
    kappa_bar: float = 0.0

    def __post_init__(self) -> None:
        if not (self.s0 > 0 and math.isfinite(self.s0)):
            raise ConfigError("s0 > 0")
        if not (self.sigma_bar > 0 and math.isfinite(self.sigma_bar)):
            raise ConfigError("sigma_bar > 0")
        if not (self.kappa_bar >= 0 and math.isfinite(self.kappa_bar)):
            raise ConfigError("kappa_bar ≥ 0")
        if not math.isfinite(self.mu_bar):
            raise ConfigError("mu_bar finite")

    def sigma(self, s):
        return self.sigma_bar * np.asarray(s, dtype=float)


@dataclass(frozen=True)
class MeasureSelection:
    regime: Regime
    drift: float


def account_value(rate: float, t):
    """Growth factor exp(rate * t) of a constant-rate account started at 1."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("account_value requires t ≥ 0")
    out = np.exp(rate * t_arr)
    return float(out) if out.ndim == 0 else out


def market_price_of_risk(asset: AssetDynamics, rates: RateEnvironment, regime: Regime) -> float:
    if asset.sigma_bar <= 0:
        raise ConfigError("sigma_bar > 0")
    ref = rates.r_l if regime == Regime.LENDING else rates.beta[0]
    return (asset.mu_bar + asset.kappa_bar - ref) / asset.sigma_bar


def driver_asset_drift(asset: AssetDynamics, rates: RateEnvironment, regime: Regime) -> float:
    ref = rates.r_l if regime == Regime.LENDING else rates.beta[0]
    return ref - asset.kappa_bar


def measure_selection(asset: AssetDynamics, rates: RateEnvironment, regime: Regime) -> MeasureSelection:
    return MeasureSelection(regime, driver_asset_drift(asset, rates, regime))


def resolve_regime(x1: float, x2: float, requested: Regime | None = None) -> Regime:
    """Pick the measure for an endowment pair.

    Equal signs use the lending measure, x1 ≥ 0 ≥ x2 the beta measure.  With
    x2 = 0 both apply and `requested` decides (lending by default).
    """
    if x1 < 0:
        raise ConfigError("x1 ≥ 0", f"x1={x1}")
    if requested is None:
        return Regime.LENDING if x2 >= 0 else Regime.BETA
    if requested == Regime.LENDING and x2 < 0:
        raise ConfigError("x1, x2 ≥ 0 for the lending measure", f"x2={x2}")
    if requested == Regime.BETA and x2 > 0:
        raise ConfigError("x1 ≥ 0, x2 ≤ 0 for the beta measure", f"x2={x2}")
    return Regime(requested)


def endowment_rate(rates: RateEnvironment, regime: Regime, x: float) -> float:
    """Rate of the account an endowment x sits in: borrowing when x < 0 under beta."""
    if regime == Regime.BETA and x < 0:
        return rates.r_b
    return rates.r_l
