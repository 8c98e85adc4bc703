"""Simulation of multitype branching processes with immigration and final
product in a random environment, and of their immigration-free reductions.

Populations are stored as per-type counts.  The batch engine advances many
independent replicates at once: each generation every live replicate gets its
own environment draw, and replicates sharing an atom are sampled together.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env_model import EnvironmentDistribution, EnvironmentSample, sample_environment
from .errors import ConfigurationError, PopulationOverflowError
from .rng import RandomStream

DEFAULT_GENERATION_CAP = 100_000
# Poisson and binomial samplers lose exactness well before int64 overflows.
COUNT_LIMIT = 10**15
START_FROM_IMMIGRATION = "immigration"


class Mode(str, enum.Enum):
    MBPIFPRE = "MBPIFPRE"  # immigration and final product
    MBPFPRE = "MBPFPRE"  # final product, no immigration
    MBPRE = "MBPRE"  # bare branching


@dataclass(frozen=True)
class PopulationState:
    V: np.ndarray
    theta: float = 0.0
    generation: int = 0

    @classmethod
    def zero(cls, m: int) -> "PopulationState":
        return cls(np.zeros(m, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ProcessConfig:
    """How to run a process: environment, mode, starting point, cap.

    ``initial`` is either a count vector V(0) or ``"immigration"`` (start from
    an empty population and wait for the first nonzero immigrant vector).
    ``None`` means ``"immigration"`` in MBPIFPRE mode and ``e_0`` otherwise.
    """

    env_dist: EnvironmentDistribution
    mode: Mode = Mode.MBPIFPRE
    initial: Sequence[int] | str | None = None
    initial_theta: float = 0.0
    generation_cap: int = DEFAULT_GENERATION_CAP

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.generation_cap < 1:
            raise ConfigurationError("generation_cap must be >= 1")
        if self.initial_theta < 0:
            raise ConfigurationError("initial_theta must be >= 0")
        if self.mode is Mode.MBPRE and (self.env_dist.has_immigration() or self.initial_theta):
            raise ConfigurationError("MBPRE mode forbids immigration and final product")
        if self.initial is None:
            default = START_FROM_IMMIGRATION if self.mode is Mode.MBPIFPRE else np.eye(self.m, dtype=int)[0]
            object.__setattr__(self, "initial", default)
        if isinstance(self.initial, str):
            if self.initial != START_FROM_IMMIGRATION:
                raise ConfigurationError(f"unknown initial condition {self.initial!r}")
            if self.mode is not Mode.MBPIFPRE:
                raise ConfigurationError("starting from immigration requires MBPIFPRE mode")
        else:
            v = np.asarray(self.initial)
            if v.shape != (self.env_dist.m,) or np.any(v < 0):
                raise ConfigurationError(f"initial vector must have {self.env_dist.m} nonnegative entries")
            object.__setattr__(self, "initial", tuple(int(x) for x in v))

    @property
    def m(self) -> int:
        return self.env_dist.m


@dataclass(frozen=True)
class LifePeriodRecord:
    upsilon: int
    theta_total: float
    censored: bool
    max_population: int
    trace: tuple | None = field(default=None, repr=False)


@dataclass
class LifePeriodBatch:
    """Column-oriented replicate records."""

    upsilon: np.ndarray
    theta_total: np.ndarray
    censored: np.ndarray
    max_population: np.ndarray
    first_id: int = 0

    def __len__(self):
        return self.upsilon.size

    def record(self, r: int) -> LifePeriodRecord:
        return LifePeriodRecord(int(self.upsilon[r]), float(self.theta_total[r]),
                                bool(self.censored[r]), int(self.max_population[r]))

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0

    def rows(self):
        for r in range(len(self)):
            yield (self.first_id + r, int(self.upsilon[r]), repr(float(self.theta_total[r])),
                   int(bool(self.censored[r])), int(self.max_population[r]))

    @staticmethod
    def concatenate(parts: Sequence["LifePeriodBatch"]) -> "LifePeriodBatch":
        return LifePeriodBatch(*(np.concatenate([getattr(p, f) for p in parts])
                                 for f in ("upsilon", "theta_total", "censored", "max_population")),
                               first_id=parts[0].first_id if parts else 0)


LIFE_PERIOD_COLUMNS = ("replica_id", "upsilon", "theta_total", "censored", "max_population")


def _check_counts(V: np.ndarray):
    if V.size and V.sum(axis=-1).max() > COUNT_LIMIT:
        raise PopulationOverflowError(f"population overflow: more than {COUNT_LIMIT} particles")


def step(state: PopulationState, env: EnvironmentSample, rng: RandomStream,
         mode: Mode = Mode.MBPIFPRE) -> PopulationState:
    """One generation: V' = sum of children + eta, Theta' = Theta + sum phi + psi."""
    mode = Mode(mode)
    V = np.asarray(state.V, dtype=np.int64)[None, :]
    children, phi = env.offspring.sample_batch(V, rng, with_product=mode is not Mode.MBPRE)
    V_new, theta = children[0], state.theta + float(phi[0])
    if mode is Mode.MBPIFPRE:
        eta, psi = env.immigration.sample_batch(1, rng)
        V_new = V_new + eta[0]
        theta += float(psi[0])
    _check_counts(V_new)
    return PopulationState(V_new, theta, state.generation + 1)


def advance(dist: EnvironmentDistribution, V: np.ndarray, rng: RandomStream,
            mode: Mode = Mode.MBPIFPRE):
    """One generation for a batch of replicates, each with a fresh environment.

    Returns ``(V_next, delta_theta)``.
    """
    R = V.shape[0]
    idx = dist.sample_indices(rng, R)
    V_next = np.zeros_like(V)
    dtheta = np.zeros(R)
    with_product = mode is not Mode.MBPRE
    for k, atom in enumerate(dist.atoms):
        sel = np.flatnonzero(idx == k) if len(dist) > 1 else slice(None)
        if len(dist) > 1 and sel.size == 0:
            continue
        children, phi = atom.offspring.sample_batch(V[sel], rng, with_product=with_product)
        if mode is Mode.MBPIFPRE and not atom.immigration.is_zero:
            eta, psi = atom.immigration.sample_batch(children.shape[0], rng)
            children = children + eta
            phi = phi + psi
        V_next[sel] = children
        dtheta[sel] = phi
    _check_counts(V_next)
    return V_next, dtheta


def _first_immigration(dist: EnvironmentDistribution, R: int, rng: RandomStream, max_rounds: int = 1_000_000):
    if all(float(np.sum(a.means.B)) == 0 for a in dist.atoms):
        raise ConfigurationError("immigration is almost surely zero: a life period can never start")
    V = np.zeros((R, dist.m), dtype=np.int64)
    theta = np.zeros(R)
    waiting = np.arange(R)
    for _ in range(max_rounds):
        if waiting.size == 0:
            return V, theta
        idx = dist.sample_indices(rng, waiting.size)
        eta = np.zeros((waiting.size, dist.m), dtype=np.int64)
        psi = np.zeros(waiting.size)
        for k, atom in enumerate(dist.atoms):
            sel = np.flatnonzero(idx == k)
            if sel.size:
                eta[sel], psi[sel] = atom.immigration.sample_batch(sel.size, rng)
        hit = eta.sum(axis=1) > 0
        V[waiting[hit]] = eta[hit]
        theta[waiting[hit]] = psi[hit]
        waiting = waiting[~hit]
    raise ConfigurationError(f"no nonzero immigration after {max_rounds} draws")


def _run(dist, V, theta, cap, mode, rng) -> LifePeriodBatch:
    R = V.shape[0]
    upsilon = np.zeros(R, dtype=np.int64)
    maxpop = V.sum(axis=1)
    live = np.flatnonzero(maxpop > 0)
    gen = 0
    while live.size and gen < cap:
        V_live, dtheta = advance(dist, V[live], rng, mode)
        gen += 1
        V[live] = V_live
        theta[live] += dtheta
        upsilon[live] = gen
        sizes = V_live.sum(axis=1)
        np.maximum.at(maxpop, live, sizes)
        live = live[sizes > 0]
    censored = np.zeros(R, dtype=bool)
    censored[live] = True
    return LifePeriodBatch(upsilon, theta, censored, maxpop)


def simulate_life_periods(config: ProcessConfig, n: int, rng: RandomStream) -> LifePeriodBatch:
    """``n`` independent life periods (vectorized).

    With ``initial="immigration"`` each replicate starts idle and redraws the
    environment until the immigrant vector is nonzero; that draw's psi counts
    towards Theta.  Otherwise replicates start from ``config.initial``.
    Upsilon counts generations until the population is next empty; replicates
    still alive at ``generation_cap`` are marked censored.
    """
    dist = config.env_dist
    if config.initial == START_FROM_IMMIGRATION:
        V, theta = _first_immigration(dist, n, rng)
    else:
        V = np.tile(np.asarray(config.initial, dtype=np.int64), (n, 1))
        theta = np.zeros(n)
    theta += config.initial_theta
    return _run(dist, V, theta, config.generation_cap, config.mode, rng)


def simulate_life_period(config: ProcessConfig, rng: RandomStream, trace: bool = False) -> LifePeriodRecord:
    """One life period, stepped generation by generation.

    Same law as :func:`simulate_life_periods`; kept as a readable reference
    path and for per-generation traces of ``(||V(n)||, theta increment)``.
    """
    dist = config.env_dist
    if config.initial == START_FROM_IMMIGRATION:
        V, theta = _first_immigration(dist, 1, rng)
        state = PopulationState(V[0], float(theta[0]))
    else:
        state = PopulationState(np.asarray(config.initial, dtype=np.int64))
    state = PopulationState(state.V, state.theta + config.initial_theta)
    trace_rows = [(int(state.V.sum()), state.theta)] if trace else None
    max_pop = int(state.V.sum())
    while state.V.any() and state.generation < config.generation_cap:
        before = state.theta
        state = step(state, sample_environment(dist, rng), rng, config.mode)
        if state.theta < before:
            raise AssertionError("accumulated final product decreased")
        max_pop = max(max_pop, int(state.V.sum()))
        if trace:
            trace_rows.append((int(state.V.sum()), state.theta - before))
    return LifePeriodRecord(state.generation, state.theta, bool(state.V.any()), max_pop,
                            tuple(trace_rows) if trace else None)


def simulate_mbpfpre_totals(config: ProcessConfig, z: Sequence[int], n: int, rng: RandomStream):
    """Total final product Phi of ``n`` immigration-free runs started from ``z``.

    Returns ``(phi_total, censored)`` arrays.
    """
    z = np.asarray(z, dtype=np.int64)
    if config.mode is Mode.MBPIFPRE and config.env_dist.has_immigration():
        raise ConfigurationError("MBPFPRE totals need mode MBPFPRE or an immigration-free environment")
    if z.shape != (config.m,) or not z.any() or np.any(z < 0):
        raise ConfigurationError("z must be a nonzero nonnegative count vector")
    V = np.tile(z, (n, 1))
    theta = np.full(n, float(config.initial_theta))
    batch = _run(config.env_dist, V, theta, config.generation_cap, Mode.MBPFPRE, rng)
    return batch.theta_total, batch.censored


def simulate_mbpfpre_total(config: ProcessConfig, z: Sequence[int], rng: RandomStream):
    phi, censored = simulate_mbpfpre_totals(config, z, 1, rng)
    return float(phi[0]), bool(censored[0])


@dataclass
class StationaryProbe:
    samples: np.ndarray  # (n_samples, m) sampled V(n)
    law: dict
    p_zero: float


def empirical_law(samples: np.ndarray) -> dict:
    keys, counts = np.unique(samples, axis=0, return_counts=True)
    n = samples.shape[0]
    return {tuple(int(x) for x in k): c / n for k, c in zip(keys, counts)}


def total_variation(p: dict, q: dict) -> float:
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


def stationary_distribution_probe(config: ProcessConfig, burn_in: int, n_samples: int,
                                  rng: RandomStream, spacing: int = 1) -> StationaryProbe:
    """Empirical law of V(n) along one long run, sampled every ``spacing``
    generations after ``burn_in``.  The run starts from V(0) = 0 (or the
    configured vector) and is never stopped at zero."""
    if config.mode is not Mode.MBPIFPRE:
        raise ConfigurationError("stationary probe needs MBPIFPRE mode")
    if spacing < 1 or n_samples < 1 or burn_in < 0:
        raise ConfigurationError("burn_in >= 0, n_samples >= 1 and spacing >= 1 required")
    dist = config.env_dist
    if config.initial == START_FROM_IMMIGRATION:
        V = np.zeros((1, dist.m), dtype=np.int64)
    else:
        V = np.asarray(config.initial, dtype=np.int64)[None, :]
    for _ in range(burn_in):
        V, _ = advance(dist, V, rng)
    out = np.empty((n_samples, dist.m), dtype=np.int64)
    for s in range(n_samples):
        for _ in range(spacing):
            V, _ = advance(dist, V, rng)
        out[s] = V[0]
    return StationaryProbe(out, empirical_law(out), float(np.mean(~out.any(axis=1))))
