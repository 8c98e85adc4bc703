"""Small reference models used by the tests and demos."""

from __future__ import annotations

import math

import numpy as np

from .branching_core import Mode, ProcessConfig
from .env_model import (BernoulliImmigration, EnvironmentDistribution, EnvironmentSample, Exponential,
                        NoImmigration, PoissonOffspring)
from .polling_map import CycleDistribution, PollingCycleParams, ProductMode
from .polling_sim import PollingConfig

# kappa of the scalar toy: 0.6 * 2^-k + 0.4 * 2^k = 1  <=>  2^k = 3/2
SCALAR_TOY_KAPPA = math.log2(1.5)
SCALAR_TOY_ALPHA = -0.2 * math.log(2)


def scalar_toy(immigration: bool = True, immigration_prob: float = 0.5) -> EnvironmentDistribution:
    """Mean offspring 1/2 w.p. 0.6 and 2 w.p. 0.4, Poisson counts, one unit of
    final product per particle, Bernoulli single immigrant."""
    atoms = []
    for mean in (0.5, 2.0):
        imm = BernoulliImmigration(immigration_prob, [1]) if immigration else NoImmigration(1)
        atoms.append(EnvironmentSample(PoissonOffspring([[mean]], product=1.0), imm, f"a={mean:g}"))
    return EnvironmentDistribution(atoms, [0.6, 0.4])


def scalar_toy_process(**kw) -> ProcessConfig:
    return ProcessConfig(scalar_toy(), Mode.MBPIFPRE, **kw)


def _two_station_atom(scale: float, name: str) -> PollingCycleParams:
    eps = np.array([[0.1, 0.3], [0.3, 0.1]]) * scale
    eps_switch = np.full((2, 2), 0.1)
    gamma = np.array([[0.9, 0.05, 0.05], [0.9, 0.05, 0.05]])
    return PollingCycleParams(eps, eps_switch, gamma, [Exponential(1.0)] * 2, [Exponential(0.5)] * 2, name)


def two_station_cycles(surge_scale: float = 4.0, surge_weight: float = 0.2) -> CycleDistribution:
    """Two-station cycles whose arrival rates jump by ``surge_scale`` in a
    fraction ``surge_weight`` of the cycles.  Subcritical with kappa ~ 1.67
    at the defaults."""
    return CycleDistribution([_two_station_atom(1.0, "calm"), _two_station_atom(surge_scale, "surge")],
                             [1 - surge_weight, surge_weight])


def two_station_polling(disciplines="gated", mode=ProductMode.SERVICE_TIME, **kw) -> PollingConfig:
    return PollingConfig(two_station_cycles(), disciplines, 0, mode, **kw)


def supercritical_polling(scale: float = 8.0, max_services: int = 100_000) -> PollingConfig:
    """Every cycle is a heavy surge; the associated Lyapunov exponent is positive."""
    return PollingConfig(CycleDistribution([_two_station_atom(scale, "overload")]), "gated",
                         max_services=max_services)
