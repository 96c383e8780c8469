"""Recombining binomial lattice for the driving Brownian motion and the asset."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import AssetDynamics, ConfigError, MeasureSelection, RateEnvironment


@dataclass(frozen=True)
class LatticeConfig:
    n_steps: int
    T: float
    measure: MeasureSelection

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("n_steps ≥ 1")
        if not (self.T > 0):
            raise ConfigError("T > 0")


@dataclass(frozen=True)
class Lattice:
    n_steps: int
    T: float
    dt: float
    sqrt_dt: float
    times: np.ndarray
    S: tuple[np.ndarray, ...]     # S[i][j], j = number of up-moves
    asset: AssetDynamics
    rates: RateEnvironment
    measure: MeasureSelection

    def sigma(self, i: int) -> np.ndarray:
        """sigma(t, S) at every node of step i."""
        return self.asset.sigma_bar * self.S[i]

    def step_expectation(self, values: np.ndarray):
        return step_expectation(values, self.sqrt_dt)


def build(asset: AssetDynamics, rates: RateEnvironment, config: LatticeConfig) -> Lattice:
    n, T = int(config.n_steps), float(config.T)
    dt = T / n
    sq = math.sqrt(dt)
    sig = asset.sigma_bar
    drift = config.measure.drift
    S = []
    for i in range(n + 1):
        j = np.arange(i + 1)
        S.append(asset.s0 * np.exp((drift - 0.5 * sig * sig) * i * dt + sig * (2 * j - i) * sq))
    times = np.arange(n + 1) * dt
    return Lattice(n, T, dt, sq, times, tuple(S), asset, rates, config.measure)


def step_expectation(values: np.ndarray, sqrt_dt: float, j: int | None = None):
    """Mean and dW-coefficient over one step from the values at the next step.

    `values` holds the i + 2 values of step i + 1.  Without `j` the result is
    an array over all i + 1 parent nodes.
    """
    v = np.asarray(values, dtype=float)
    down, up = v[:-1], v[1:]
    mean = 0.5 * (up + down)
    zw = (up - down) / (2.0 * sqrt_dt)
    if j is None:
        return mean, zw
    return float(mean[j]), float(zw[j])
