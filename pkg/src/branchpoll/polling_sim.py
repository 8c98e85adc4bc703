"""Direct simulation of cyclic polling systems in a random environment.

The simulator tracks queue contents station by station: every visit serves
the customers its discipline allows, Poisson arrivals accumulate over each
service and switch-over interval, and served customers are routed or leave.
Per-interval arrival counts are drawn in aggregate (a sum of n service
times and the Poisson count over their total length), which has the same
law as drawing them customer by customer.

A standard busy period ends at the first visit completion that leaves the
whole system empty.  A generalized busy period ends at the first cycle
boundary (switch-over into the start station) with an empty system.  Both
are produced by one pass over the same draws, so they are coupled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .polling_map import EXHAUSTIVE, GATED, CycleDistribution, ProductMode, _disciplines, \
    exhaustive_clearing_mean
from .rng import RandomStream, as_stream

DEFAULT_MAX_CYCLES = 100_000
DEFAULT_MAX_SERVICES = 100_000

POLLING_COLUMNS = ("replica_id", "theta_P", "duration_services", "duration_switchover", "n_cycles",
                   "n_services", "censored")


@dataclass(frozen=True, eq=False)
class PollingConfig:
    cycles: CycleDistribution
    disciplines: tuple = GATED
    start_station: int = 0
    product_mode: ProductMode = ProductMode.SERVICE_TIME
    max_cycles: int = DEFAULT_MAX_CYCLES
    max_services: int = DEFAULT_MAX_SERVICES

    def __post_init__(self):
        object.__setattr__(self, "disciplines", _disciplines(self.disciplines, self.cycles.m))
        object.__setattr__(self, "product_mode", ProductMode(self.product_mode))
        if not 0 <= self.start_station < self.cycles.m:
            raise ConfigurationError(f"start_station {self.start_station} outside 0..{self.cycles.m - 1}")
        if self.max_cycles < 1 or self.max_services < 1:
            raise ConfigurationError("max_cycles and max_services must be positive")
        for prm in self.cycles.params:
            for i, d in enumerate(self.disciplines):
                if d == EXHAUSTIVE:
                    exhaustive_clearing_mean(prm, i)

    @property
    def m(self) -> int:
        return self.cycles.m


@dataclass(frozen=True)
class PollingRecord:
    theta_P: float
    duration_services: float
    duration_switchover: float
    n_cycles: int
    n_services: int
    censored: bool


@dataclass
class PollingBatch:
    theta_P: np.ndarray
    duration_services: np.ndarray
    duration_switchover: np.ndarray
    n_cycles: np.ndarray
    n_services: np.ndarray
    censored: np.ndarray
    first_id: int = 0

    def __len__(self):
        return self.theta_P.size

    def record(self, r: int) -> PollingRecord:
        return PollingRecord(float(self.theta_P[r]), float(self.duration_services[r]),
                             float(self.duration_switchover[r]), int(self.n_cycles[r]),
                             int(self.n_services[r]), bool(self.censored[r]))

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0

    def rows(self):
        for r in range(len(self)):
            yield (self.first_id + r, self.theta_P[r], self.duration_services[r], self.duration_switchover[r],
                   int(self.n_cycles[r]), int(self.n_services[r]), int(self.censored[r]))


@dataclass
class _Tally:
    size: int
    services: np.ndarray = field(init=False)
    switch: np.ndarray = field(init=False)
    units: np.ndarray = field(init=False)
    cycles: np.ndarray = field(init=False)
    done: np.ndarray = field(init=False)
    censored: np.ndarray = field(init=False)
    frozen: list = field(init=False)

    def __post_init__(self):
        self.services = np.zeros(self.size)
        self.switch = np.zeros(self.size)
        self.units = np.zeros(self.size, dtype=np.int64)
        self.cycles = np.zeros(self.size, dtype=np.int64)
        self.done = np.zeros(self.size, dtype=bool)
        self.censored = np.zeros(self.size, dtype=bool)

    def batch(self, mode: ProductMode) -> PollingBatch:
        if mode is ProductMode.SERVICE_TIME:
            theta = self.services.copy()
        elif mode is ProductMode.SERVICE_PLUS_SWITCHOVER:
            theta = self.services + self.switch
        else:
            theta = self.units.astype(float)
        return PollingBatch(theta, self.services.copy(), self.switch.copy(), self.cycles.copy(),
                            self.units.copy(), self.censored.copy())


class _Engine:
    def __init__(self, config: PollingConfig, rng: RandomStream):
        self.cfg = config
        self.rng = rng
        cyc = config.cycles
        self.eps = np.stack([p.epsilon for p in cyc.params])
        self.epsI = np.stack([p.epsilon_I for p in cyc.params])
        self.gamma = np.stack([p.gamma for p in cyc.params])

    def _by_atom(self, atom, fn):
        """Call ``fn(k, sel)`` for every atom index present in ``atom``."""
        if len(self.cfg.cycles) == 1:
            fn(0, slice(None))
            return
        for k in np.unique(atom):
            fn(k, np.flatnonzero(atom == k))

    def _service_round(self, Q, s, k, atom):
        """Serve k[r] customers at station s. Returns total service time."""
        rng = self.rng
        R = k.size
        T = np.zeros(R)
        routed = np.zeros((R, self.cfg.m + 1), dtype=np.int64)

        def draw(a, sel):
            T[sel] = self.cfg.cycles.params[a].service[s].sample_sum(rng, k[sel])
            routed[sel] = rng.multinomial(k[sel], self.gamma[a, s])

        self._by_atom(atom, draw)
        arrivals = rng.poisson(T[:, None] * self.eps[atom, s, :]).astype(np.int64)
        Q[:, s] -= k
        Q += arrivals + routed[:, 1:]
        return T

    def visit(self, Q, s, atom):
        """One visit to station s; returns (service time, services)."""
        R = Q.shape[0]
        T = np.zeros(R)
        n = np.zeros(R, dtype=np.int64)
        if self.cfg.disciplines[s] == GATED:
            k = Q[:, s].copy()
            if k.any():
                T = self._service_round(Q, s, k, atom)
            return T, k
        live = np.flatnonzero(Q[:, s])
        while live.size:
            k = Q[live, s].copy()
            sub = Q[live]
            T[live] += self._service_round(sub, s, k, atom[live])
            Q[live] = sub
            n[live] += k
            if n[live].max() > self.cfg.max_services:
                break
            live = live[Q[live, s] > 0]
        assert np.all(Q[n <= self.cfg.max_services, s] == 0), "exhaustive visit left customers behind"
        return T, n

    def switchover(self, Q, s, atom):
        rng = self.rng
        sigma = np.zeros(Q.shape[0])

        def draw(a, sel):
            sigma[sel] = self.cfg.cycles.params[a].switchover[s].sample(rng, np.size(sigma[sel]))

        self._by_atom(atom, draw)
        Q += rng.poisson(sigma[:, None] * self.epsI[atom, s, :]).astype(np.int64)
        return sigma

    def run(self, n: int, want_standard: bool, want_generalized: bool):
        cfg = self.cfg
        m, J = cfg.m, cfg.start_station
        Q = np.zeros((n, m), dtype=np.int64)
        Q[:, J] = 1
        std, gen = _Tally(n), _Tally(n)
        if not want_standard:
            std.done[:] = True
        if not want_generalized:
            gen.done[:] = True
        ids = np.arange(n)
        while ids.size:
            atom = cfg.cycles.sample_indices(self.rng, ids.size)
            q = Q[ids]
            for tally in (std, gen):
                tally.cycles[ids[~tally.done[ids]]] += 1
            for step in range(m):
                s = (J + step) % m
                T, k = self.visit(q, s, atom)
                for tally in (std, gen):
                    open_ = ~tally.done[ids]
                    tally.services[ids[open_]] += T[open_]
                    tally.units[ids[open_]] += k[open_]
                empty = q.sum(axis=1) == 0
                std.done[ids[empty]] = True
                sigma = self.switchover(q, s, atom)
                for tally in (std, gen):
                    open_ = ~tally.done[ids]
                    tally.switch[ids[open_]] += sigma[open_]
            Q[ids] = q
            gen.done[ids[q.sum(axis=1) == 0]] = True
            for tally in (std, gen):
                over = ~tally.done & ((tally.units > cfg.max_services) | (tally.cycles >= cfg.max_cycles))
                tally.censored |= over
                tally.done |= over
            ids = ids[~(std.done[ids] & gen.done[ids])]
        return std, gen


def _run(config, n, rng, standard, generalized):
    rng = as_stream(rng)
    if n == 0:
        t = _Tally(0)
        return t, t
    return _Engine(config, rng).run(n, standard, generalized)


def run_busy_periods(config: PollingConfig, n: int, rng=None) -> PollingBatch:
    std, _ = _run(config, n, rng, True, False)
    return std.batch(config.product_mode)


def run_generalized_busy_periods(config: PollingConfig, n: int, rng=None) -> PollingBatch:
    _, gen = _run(config, n, rng, False, True)
    return gen.batch(config.product_mode)


def run_coupled(config: PollingConfig, n: int, rng=None) -> tuple[PollingBatch, PollingBatch]:
    """Standard and generalized busy periods driven by the same draws."""
    std, gen = _run(config, n, rng, True, True)
    return std.batch(config.product_mode), gen.batch(config.product_mode)


def run_busy_period(config: PollingConfig, rng=None) -> PollingRecord:
    return run_busy_periods(config, 1, rng).record(0)


def run_generalized_busy_period(config: PollingConfig, rng=None) -> PollingRecord:
    return run_generalized_busy_periods(config, 1, rng).record(0)
