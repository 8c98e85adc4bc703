"""Polling system -> branching process correspondence.

A particle of type i is a customer waiting at station i when the server
starts a cycle.  Its offspring are the customers it leaves behind for the
next cycle: serving it produces arrivals and a routed departure; those that
land on a station the server has not yet visited in this cycle are served
within the cycle (and their own descendants followed in turn), the rest
become next-cycle particles.  Switch-over arrivals play the role of
immigrants in the same way.

Stations are indexed 0..m-1 and one cycle visits them in that order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env_model import (AmountLaw, Deterministic, EnvironmentDistribution, EnvironmentSample,
                        ImmigrationLaw, MeanStatistics, OffspringLaw)
from .errors import CensoredDrawError, ConfigurationError, GuardViolation
from .rng import RandomStream

DEFAULT_CYCLE_SERVICE_CAP = 1_000_000
GATED = "gated"
EXHAUSTIVE = "exhaustive"


class ProductMode(str, enum.Enum):
    SERVICE_TIME = "service_time"
    SERVICE_PLUS_SWITCHOVER = "service_plus_switchover"
    UNIT = "unit"


def _laws(laws, m, name) -> tuple[AmountLaw, ...]:
    if isinstance(laws, AmountLaw):
        laws = [laws] * m
    out = tuple(x if isinstance(x, AmountLaw) else Deterministic(float(x)) for x in laws)
    if len(out) != m:
        raise ConfigurationError(f"{name}: expected {m} laws, got {len(out)}")
    return out


@dataclass(frozen=True, eq=False)
class PollingCycleParams:
    """One cycle's parameters.

    ``gamma`` is m x (m+1): column 0 is the probability of leaving the
    system, column j+1 the probability of being routed to station j.
    """

    epsilon: np.ndarray
    epsilon_I: np.ndarray
    gamma: np.ndarray
    service: tuple[AmountLaw, ...]
    switchover: tuple[AmountLaw, ...]
    name: str = ""

    def __post_init__(self):
        eps = np.atleast_2d(np.asarray(self.epsilon, float))
        m = eps.shape[0]
        epsI = np.atleast_2d(np.asarray(self.epsilon_I, float))
        gam = np.atleast_2d(np.asarray(self.gamma, float))
        if eps.shape != (m, m) or epsI.shape != (m, m):
            raise ConfigurationError(f"epsilon and epsilon_I must be {m}x{m}")
        if np.any(eps < 0) or np.any(epsI < 0) or not (np.all(np.isfinite(eps)) and np.all(np.isfinite(epsI))):
            raise ConfigurationError("arrival rates must be finite and >= 0")
        if gam.shape != (m, m + 1):
            raise ConfigurationError(f"gamma must be {m}x{m + 1} (leave column first)")
        if np.any(gam < 0) or not np.allclose(gam.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigurationError("gamma rows must be nonnegative and sum to 1")
        if gam[:, 0].max() <= 0:
            raise ConfigurationError("at least one station must have a positive leave probability")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "epsilon_I", epsI)
        object.__setattr__(self, "gamma", gam / gam.sum(axis=1, keepdims=True))
        object.__setattr__(self, "service", _laws(self.service, m, "service"))
        object.__setattr__(self, "switchover", _laws(self.switchover, m, "switchover"))
        if not all(np.isfinite(law.mean) for law in self.service + self.switchover):
            raise ConfigurationError("service and switch-over means must be finite")

    @property
    def m(self) -> int:
        return self.epsilon.shape[0]

    @property
    def mean_service(self) -> np.ndarray:
        return np.array([law.mean for law in self.service])

    @property
    def mean_switchover(self) -> np.ndarray:
        return np.array([law.mean for law in self.switchover])

    def rotated(self, start: int) -> "PollingCycleParams":
        """Relabel stations so that ``start`` becomes station 0."""
        order = (np.arange(self.m) + start) % self.m
        gam = np.concatenate([self.gamma[order][:, :1], self.gamma[order][:, 1:][:, order]], axis=1)
        return PollingCycleParams(self.epsilon[np.ix_(order, order)], self.epsilon_I[np.ix_(order, order)],
                                  gam, tuple(self.service[k] for k in order),
                                  tuple(self.switchover[k] for k in order), self.name)


class CycleDistribution:
    """Finite mixture of cycle parameters; one iid draw per cycle."""

    def __init__(self, params: Sequence[PollingCycleParams], weights=None):
        params = tuple(params)
        if not params:
            raise ConfigurationError("cycle distribution needs at least one atom")
        m = params[0].m
        if any(p.m != m for p in params):
            raise ConfigurationError("all cycle atoms must have the same number of stations")
        w = np.ones(len(params)) if weights is None else np.asarray(weights, float)
        if w.shape != (len(params),) or np.any(w <= 0):
            raise ConfigurationError("cycle weights must be positive, one per atom")
        self.params = params
        self.weights = w / w.sum()
        self._cdf = np.cumsum(self.weights)

    @property
    def m(self) -> int:
        return self.params[0].m

    def __len__(self):
        return len(self.params)

    def sample_indices(self, rng: RandomStream, size: int) -> np.ndarray:
        if len(self.params) == 1:
            return np.zeros(size, dtype=np.int64)
        return np.minimum(np.searchsorted(self._cdf, rng.random(size), side="right"), len(self.params) - 1)

    def rotated(self, start: int) -> "CycleDistribution":
        return CycleDistribution([p.rotated(start) for p in self.params], self.weights)


def _disciplines(disciplines, m) -> tuple[str, ...]:
    if isinstance(disciplines, str):
        disciplines = [disciplines] * m
    out = tuple(str(d) for d in disciplines)
    if len(out) != m or any(d not in (GATED, EXHAUSTIVE) for d in out):
        raise ConfigurationError(f"disciplines must be {m} entries from {{gated, exhaustive}}, got {out}")
    return out


# ---------------------------------------------------------------------------
# Mean-level formulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StationMeanLaw:
    """Per-visit-unit means: H (customers left), c (product), L and p (switch-over)."""

    H: np.ndarray
    c: np.ndarray
    L: np.ndarray
    p: np.ndarray


def exhaustive_clearing_mean(params: PollingCycleParams, i: int) -> float:
    """W_i = E[tau_i] / (1 - gamma_ii), mean work of one customer including
    its own-station feedback, after checking the sub-busy-period guard."""
    g_ii = params.gamma[i, i + 1]
    if g_ii >= 1:
        raise GuardViolation(f"station {i} exhaustive sub-busy period unstable: self-feedback probability is 1")
    W = params.mean_service[i] / (1 - g_ii)
    if W * params.epsilon[i, i] >= 1:
        raise GuardViolation(
            f"station {i} exhaustive sub-busy period unstable: W*eps_ii = {W * params.epsilon[i, i]:.4g} >= 1")
    return W


def station_mean_law(params: PollingCycleParams, disciplines=GATED,
                     mode: ProductMode | str = ProductMode.SERVICE_TIME) -> StationMeanLaw:
    mode = ProductMode(mode)
    m = params.m
    disc = _disciplines(disciplines, m)
    Et, Es = params.mean_service, params.mean_switchover
    unit = np.ones(m) if mode is ProductMode.UNIT else Et
    route = params.gamma[:, 1:]
    H = np.empty((m, m))
    c = np.empty(m)
    for i in range(m):
        if disc[i] == GATED:
            H[i] = route[i] + params.epsilon[i] * Et[i]
            c[i] = unit[i]
        else:
            W = exhaustive_clearing_mean(params, i)
            g_ii = route[i, i]
            denom = 1 - W * params.epsilon[i, i]
            H[i] = (route[i] / (1 - g_ii) + W * params.epsilon[i]) / denom
            H[i, i] = 0.0
            c[i] = unit[i] / (1 - g_ii) / denom
    L = params.epsilon_I * Es[:, None]
    p = Es.copy() if mode is ProductMode.SERVICE_PLUS_SWITCHOVER else np.zeros(m)
    return StationMeanLaw(H, c, L, p)


def gated_law(params: PollingCycleParams, mode=ProductMode.SERVICE_TIME) -> StationMeanLaw:
    return station_mean_law(params, GATED, mode)


def exhaustive_law(params: PollingCycleParams, mode=ProductMode.SERVICE_TIME) -> StationMeanLaw:
    return station_mean_law(params, EXHAUSTIVE, mode)


def _close(a, b, tol):
    return np.all(np.abs(a - b) <= tol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


def compose_recursive(H) -> np.ndarray:
    """a_mj = h_mj; a_ij = h_ij [j <= i] + sum_{k > i} h_ik a_kj."""
    H = np.asarray(H, float)
    m = H.shape[0]
    A = np.zeros_like(H)
    for i in range(m - 1, -1, -1):
        A[i] = np.where(np.arange(m) <= i, H[i], 0.0) + H[i, i + 1:] @ A[i + 1:]
    return A


def compose_product(H) -> np.ndarray:
    """A = H^(1) H^(2) ... H^(m), H^(i) the identity with row i replaced by H's row i."""
    H = np.asarray(H, float)
    m = H.shape[0]
    A = np.eye(m)
    for i in range(m):
        Hi = np.eye(m)
        Hi[i] = H[i]
        A = A @ Hi
    return A


def compose_cycle(H, tol: float = 1e-12) -> np.ndarray:
    """Mean offspring matrix of one cycle, computed both ways and cross-checked."""
    rec, prod = compose_recursive(H), compose_product(H)
    if not _close(rec, prod, tol):
        raise ArithmeticError(f"cycle composition disagrees: max diff {np.abs(rec - prod).max():.3g}")
    return rec


def final_product_mean(H, c, tol: float = 1e-12) -> np.ndarray:
    """C = (E - H^Delta)^{-1} c by back-substitution, checked against the inverse."""
    H = np.asarray(H, float)
    c = np.asarray(c, float)
    m = c.size
    C = np.zeros(m)
    for i in range(m - 1, -1, -1):
        C[i] = c[i] + H[i, i + 1:] @ C[i + 1:]
    inv = np.linalg.inv(np.eye(m) - np.triu(H, 1)) @ c
    if not _close(C, inv, tol):
        raise ArithmeticError("final-product back-substitution disagrees with the triangular inverse")
    return C


def immigration_mean(L, p, A, C):
    """(B, D) of the cycle immigration law.

    Switch-over i -> i+1 arrivals at stations j <= i wait for the next cycle;
    arrivals at k > i are served within the cycle and contribute A's row k
    and C_k:

        B_j = sum_{i >= j} l_ij + sum_i sum_{k > i} l_ik a_kj
        D   = sum_i (p_i + sum_{k > i} l_ik C_k)
    """
    L, A, C, p = (np.asarray(v, float) for v in (L, A, C, p))
    upper = np.triu(L, 1)
    B = np.tril(L).sum(axis=0) + (upper @ A).sum(axis=0)
    D = float(p.sum() + (upper @ C).sum())
    return B, D


def mean_statistics(params: PollingCycleParams, disciplines=GATED,
                    mode=ProductMode.SERVICE_TIME) -> MeanStatistics:
    law = station_mean_law(params, disciplines, mode)
    A = compose_cycle(law.H)
    C = final_product_mean(law.H, law.c)
    B, D = immigration_mean(law.L, law.p, A, C)
    return MeanStatistics(A, B, C, D)


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


class CycleLaw:
    """Sampling procedures of one cycle's parameters under given disciplines.

    ``serve(i, k)`` is the aggregate of ``k[r]`` independent visit units at
    station i (one service stage under gated, one clearing sub-busy period
    under exhaustive); ``switch(i)`` is one switch-over from station i.
    """

    def __init__(self, params: PollingCycleParams, disciplines=GATED,
                 mode: ProductMode | str = ProductMode.SERVICE_TIME,
                 service_cap: int = DEFAULT_CYCLE_SERVICE_CAP):
        self.params = params
        self.m = params.m
        self.disciplines = _disciplines(disciplines, self.m)
        self.mode = ProductMode(mode)
        self.service_cap = service_cap
        self.means = mean_statistics(params, self.disciplines, self.mode)

    def _stage(self, i, k, rng):
        """k[r] service stages at station i: (arrivals + routed, product)."""
        p = self.params
        T = p.service[i].sample_sum(rng, k)
        out = rng.poisson(T[:, None] * p.epsilon[i][None, :]).astype(np.int64)
        out += rng.multinomial(k, p.gamma[i])[:, 1:]
        prod = k.astype(float) if self.mode is ProductMode.UNIT else T
        return out, prod

    def serve(self, i: int, k: np.ndarray, rng: RandomStream):
        k = np.asarray(k, dtype=np.int64)
        if self.disciplines[i] == GATED:
            out, prod = self._stage(i, k, rng)
            return out, prod, k.copy()
        out = np.zeros((k.size, self.m), dtype=np.int64)
        prod = np.zeros(k.size)
        services = np.zeros(k.size, dtype=np.int64)
        current = k.copy()
        live = np.flatnonzero(current)
        while live.size:
            o, pr = self._stage(i, current[live], rng)
            services[live] += current[live]
            prod[live] += pr
            current[live] = o[:, i]
            o[:, i] = 0
            out[live] += o
            if services[live].max() > self.service_cap:
                raise CensoredDrawError(f"station {i} clearing exceeded {self.service_cap} services")
            live = live[current[live] > 0]
        assert not out[:, i].any(), "exhaustive visit left customers at its own station"
        return out, prod, services

    def switch(self, i: int, size: int, rng: RandomStream):
        p = self.params
        sigma = np.asarray(p.switchover[i].sample(rng, size), float)
        out = rng.poisson(sigma[:, None] * p.epsilon_I[i][None, :]).astype(np.int64)
        prod = sigma if self.mode is ProductMode.SERVICE_PLUS_SWITCHOVER else np.zeros(size)
        return out, prod

    def _pass(self, pending, rng, switch: bool):
        R = pending.shape[0]
        left = np.zeros_like(pending)
        prod = np.zeros(R)
        services = np.zeros(R, dtype=np.int64)
        for s in range(self.m):
            k = pending[:, s]
            if k.any():
                out, pr, nsv = self.serve(s, k, rng)
                prod += pr
                services += nsv
                left[:, : s + 1] += out[:, : s + 1]
                pending[:, s + 1:] += out[:, s + 1:]
                if services.max() > self.service_cap:
                    raise CensoredDrawError(f"cycle exceeded {self.service_cap} services")
            if switch:
                out, pr = self.switch(s, R, rng)
                prod += pr
                left[:, : s + 1] += out[:, : s + 1]
                pending[:, s + 1:] += out[:, s + 1:]
        return left, prod

    def offspring(self, parents: np.ndarray, rng: RandomStream):
        """Aggregate F-draws for parent vectors (R, m)."""
        return self._pass(np.array(parents, dtype=np.int64, copy=True), rng, switch=False)

    def immigration(self, size: int, rng: RandomStream):
        """``size`` G-draws: all switch-overs of a cycle with their in-cycle descendants."""
        return self._pass(np.zeros((size, self.m), dtype=np.int64), rng, switch=True)


def sample_branching_offspring(law: CycleLaw, station: int, rng: RandomStream, size: int = 1):
    """``size`` draws of (xi, phi) for one customer waiting at ``station``."""
    if not 0 <= station < law.m:
        raise IndexError(f"station {station} outside 0..{law.m - 1}")
    parents = np.zeros((size, law.m), dtype=np.int64)
    parents[:, station] = 1
    return law.offspring(parents, rng)


def sample_branching_immigration(law: CycleLaw, rng: RandomStream, size: int = 1):
    return law.immigration(size, rng)


class PollingOffspringLaw(OffspringLaw):
    def __init__(self, law: CycleLaw):
        self.law = law
        self.m = law.m
        self.mean_matrix = law.means.A
        self.mean_product = law.means.C

    def sample_batch(self, parents, rng, with_product=True):
        children, prod = self.law.offspring(parents, rng)
        return children, prod if with_product else np.zeros_like(prod)


class PollingImmigrationLaw(ImmigrationLaw):
    def __init__(self, law: CycleLaw):
        self.law = law
        self.m = law.m
        self.mean_vector = law.means.B
        self.mean_product = law.means.D

    def sample_batch(self, size, rng):
        return self.law.immigration(size, rng)

    @property
    def is_zero(self):
        return not self.mean_vector.any() and self.mean_product == 0


def associated_environment(cycles: CycleDistribution, disciplines=GATED,
                           mode: ProductMode | str = ProductMode.SERVICE_TIME, start_station: int = 0,
                           service_cap: int = DEFAULT_CYCLE_SERVICE_CAP) -> EnvironmentDistribution:
    """Environment of the branching process associated with a polling system.

    For ``start_station`` J != 0 stations are relabelled so that J becomes
    type 0 (cycles then run J, J+1, ...).
    """
    disc = _disciplines(disciplines, cycles.m)
    if start_station:
        cycles = cycles.rotated(start_station)
        order = (np.arange(cycles.m) + start_station) % cycles.m
        disc = tuple(disc[k] for k in order)
    atoms = []
    for prm in cycles.params:
        law = CycleLaw(prm, disc, mode, service_cap)
        atoms.append(EnvironmentSample(PollingOffspringLaw(law), PollingImmigrationLaw(law), prm.name))
    return EnvironmentDistribution(atoms, cycles.weights)
