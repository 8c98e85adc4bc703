"""Random environments: reproduction, immigration and final-product laws.

An environment draw pairs an offspring law (one row per parent type) with an
immigration law.  Every law samples *aggregates*: given how many parents of
each type are alive in a batch of replicates, it returns the summed children
counts and the summed final product in one call.  Single-parent sampling is
the special case of a unit parent vector.

Types are indexed from 0 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .rng import RandomStream, make_stream

DEFAULT_MEAN_DRAWS = 10_000


# ---------------------------------------------------------------------------
# Nonnegative amounts (final product, service and switch-over times)
# ---------------------------------------------------------------------------


class AmountLaw:
    """Law of a nonnegative real amount."""

    mean: float

    def sample(self, rng: RandomStream, size=None):
        raise NotImplementedError

    def sample_sum(self, rng: RandomStream, counts: np.ndarray) -> np.ndarray:
        """Sum of ``counts[r]`` iid draws, for every entry ``r``."""
        counts = np.asarray(counts, dtype=np.int64)
        draws = self.sample(rng, int(counts.sum()))
        return _sum_by_counts(np.asarray(draws, dtype=float), counts)


def _sum_by_counts(draws: np.ndarray, counts: np.ndarray) -> np.ndarray:
    cs = np.concatenate(([0.0], np.cumsum(draws)))
    ends = np.cumsum(counts)
    return cs[ends] - cs[ends - counts]


@dataclass(frozen=True)
class Deterministic(AmountLaw):
    value: float = 0.0

    def __post_init__(self):
        if not (self.value >= 0 and np.isfinite(self.value)):
            raise ConfigurationError(f"deterministic amount must be finite and >= 0, got {self.value}")

    @property
    def mean(self):
        return float(self.value)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))

    def sample_sum(self, rng, counts):
        return np.asarray(counts, dtype=float) * self.value


@dataclass(frozen=True)
class Exponential(AmountLaw):
    mean: float = 1.0

    def __post_init__(self):
        if not (self.mean > 0 and np.isfinite(self.mean)):
            raise ConfigurationError(f"exponential mean must be finite and > 0, got {self.mean}")

    def sample(self, rng, size=None):
        return rng.exponential(self.mean, size)

    def sample_sum(self, rng, counts):
        # Gamma(k, mean) is the k-fold convolution; shape 0 yields 0.
        return rng.gamma(np.asarray(counts, dtype=float), self.mean)


@dataclass(frozen=True)
class GammaAmount(AmountLaw):
    shape: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ConfigurationError("gamma shape and scale must be > 0")

    @property
    def mean(self):
        return self.shape * self.scale

    def sample(self, rng, size=None):
        return rng.gamma(self.shape, self.scale, size)

    def sample_sum(self, rng, counts):
        return rng.gamma(np.asarray(counts, dtype=float) * self.shape, self.scale)


@dataclass(frozen=True)
class LogNormal(AmountLaw):
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigurationError("lognormal sigma must be >= 0")

    @property
    def mean(self):
        return float(np.exp(self.mu + 0.5 * self.sigma**2))

    def sample(self, rng, size=None):
        return rng.lognormal(self.mu, self.sigma, size)


ZERO = Deterministic(0.0)


def _amount_laws(product, m: int) -> tuple[AmountLaw, ...]:
    if product is None:
        return (ZERO,) * m
    if isinstance(product, AmountLaw):
        return (product,) * m
    if isinstance(product, (int, float)):
        return (Deterministic(float(product)),) * m
    laws = tuple(p if isinstance(p, AmountLaw) else Deterministic(float(p)) for p in product)
    if len(laws) != m:
        raise ConfigurationError(f"expected {m} final-product laws, got {len(laws)}")
    return laws


# ---------------------------------------------------------------------------
# Offspring laws F = (F^(0), ..., F^(m-1))
# ---------------------------------------------------------------------------


class OffspringLaw:
    """Joint law of (children vector, final product) per parent type.

    Subclasses implement :meth:`sample_batch`.  ``mean_matrix`` and
    ``mean_product`` are ``None`` when no closed form is known.
    """

    m: int
    mean_matrix: np.ndarray | None = None
    mean_product: np.ndarray | None = None

    def sample_batch(self, parents: np.ndarray, rng: RandomStream, with_product: bool = True):
        """Aggregate offspring of ``parents`` (shape ``(R, m)``).

        Returns ``(children, product)`` with shapes ``(R, m)`` and ``(R,)``.
        """
        raise NotImplementedError

    def sample(self, parent_type: int, rng: RandomStream):
        """One draw ``(xi, phi)`` from the law of a single type-``parent_type`` parent."""
        if not 0 <= parent_type < self.m:
            raise IndexError(f"parent type {parent_type} outside 0..{self.m - 1}")
        parents = np.zeros((1, self.m), dtype=np.int64)
        parents[0, parent_type] = 1
        children, phi = self.sample_batch(parents, rng)
        return children[0], float(phi[0])


def _check_matrix(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ConfigurationError(f"{name} entries must be finite and >= 0")
    return a


class _ProductMixin:
    product: tuple[AmountLaw, ...]

    def _product(self, parents, rng, with_product):
        total = np.zeros(parents.shape[0])
        if not with_product:
            return total
        for i, law in enumerate(self.product):
            if law is ZERO:
                continue
            col = parents[:, i]
            if col.any():
                total += law.sample_sum(rng, col)
        return total


class PoissonOffspring(_ProductMixin, OffspringLaw):
    """Independent Poisson(a_ij) children of each type; product independent of counts."""

    def __init__(self, mean_matrix, product=None):
        self.mean_matrix = _check_matrix(mean_matrix, "mean_matrix")
        self.m = self.mean_matrix.shape[0]
        self.product = _amount_laws(product, self.m)
        self.mean_product = np.array([p.mean for p in self.product])

    def sample_batch(self, parents, rng, with_product=True):
        parents = np.asarray(parents, dtype=np.int64)
        children = rng.poisson(parents @ self.mean_matrix)
        return children.astype(np.int64), self._product(parents, rng, with_product)

    def __repr__(self):
        return f"PoissonOffspring({self.mean_matrix.tolist()})"


class GeometricOffspring(_ProductMixin, OffspringLaw):
    """Geometric (on {0,1,...}) children counts with means a_ij.

    Heavier-spread alternative to Poisson; sums of iid geometrics are
    negative binomial, which keeps aggregate sampling exact.
    """

    def __init__(self, mean_matrix, product=None):
        self.mean_matrix = _check_matrix(mean_matrix, "mean_matrix")
        self.m = self.mean_matrix.shape[0]
        self.product = _amount_laws(product, self.m)
        self.mean_product = np.array([p.mean for p in self.product])
        self._p = 1.0 / (1.0 + self.mean_matrix)

    def sample_batch(self, parents, rng, with_product=True):
        parents = np.asarray(parents, dtype=np.int64)
        R, m = parents.shape
        children = np.zeros((R, m), dtype=np.int64)
        for i in range(m):
            n = parents[:, i]
            live = n > 0
            if not live.any():
                continue
            for j in range(m):
                if self.mean_matrix[i, j] == 0:
                    continue
                children[live, j] += rng.negative_binomial(n[live], self._p[i, j])
        return children, self._product(parents, rng, with_product)


class DegenerateOffspring(OffspringLaw):
    """Every type-i parent has exactly ``children[i]`` children and product ``product[i]``."""

    def __init__(self, children, product=None):
        k = np.atleast_2d(np.asarray(children))
        if k.shape[0] != k.shape[1] or np.any(k < 0) or not np.all(k == np.round(k)):
            raise ConfigurationError("degenerate children must be a square matrix of nonnegative integers")
        self.children = k.astype(np.int64)
        self.m = k.shape[0]
        prod = np.zeros(self.m) if product is None else np.broadcast_to(np.asarray(product, float), (self.m,))
        if np.any(prod < 0):
            raise ConfigurationError("final product must be >= 0")
        self.product_values = np.array(prod, dtype=float)
        self.mean_matrix = self.children.astype(float)
        self.mean_product = self.product_values.copy()

    def sample_batch(self, parents, rng, with_product=True):
        parents = np.asarray(parents, dtype=np.int64)
        phi = parents @ self.product_values if with_product else np.zeros(parents.shape[0])
        return parents @ self.children, phi


# ---------------------------------------------------------------------------
# Immigration laws G
# ---------------------------------------------------------------------------


class ImmigrationLaw:
    """Joint law of (immigrant vector eta, immigrant final product psi)."""

    m: int
    mean_vector: np.ndarray | None = None
    mean_product: float | None = None

    def sample_batch(self, size: int, rng: RandomStream):
        """``size`` independent draws; returns ``(eta (size, m), psi (size,))``."""
        raise NotImplementedError

    def sample(self, rng: RandomStream):
        eta, psi = self.sample_batch(1, rng)
        return eta[0], float(psi[0])

    @property
    def is_zero(self) -> bool:
        return False


class NoImmigration(ImmigrationLaw):
    """eta = 0 and psi = 0; consumes no randomness."""

    def __init__(self, m: int):
        self.m = int(m)
        self.mean_vector = np.zeros(self.m)
        self.mean_product = 0.0

    def sample_batch(self, size, rng):
        return np.zeros((size, self.m), dtype=np.int64), np.zeros(size)

    @property
    def is_zero(self):
        return True


class FixedImmigration(ImmigrationLaw):
    """A fixed immigrant vector with a random (possibly zero) final product.

    ``FixedImmigration([0, 0], Exponential(0.5))`` has psi > 0 while eta = 0.
    """

    def __init__(self, counts, product=None):
        c = np.atleast_1d(np.asarray(counts))
        if np.any(c < 0) or not np.all(c == np.round(c)):
            raise ConfigurationError("immigrant counts must be nonnegative integers")
        self.counts = c.astype(np.int64)
        self.m = c.size
        self.product = _amount_laws(product, 1)[0]
        self.mean_vector = self.counts.astype(float)
        self.mean_product = self.product.mean

    def sample_batch(self, size, rng):
        eta = np.broadcast_to(self.counts, (size, self.m)).copy()
        psi = np.zeros(size) if self.product is ZERO else np.asarray(self.product.sample(rng, size), float)
        return eta, psi


class PoissonImmigration(ImmigrationLaw):
    def __init__(self, means, product=None):
        b = np.atleast_1d(np.asarray(means, dtype=float))
        if np.any(b < 0) or not np.all(np.isfinite(b)):
            raise ConfigurationError("immigration means must be finite and >= 0")
        self.means = b
        self.m = b.size
        self.product = _amount_laws(product, 1)[0]
        self.mean_vector = b.copy()
        self.mean_product = self.product.mean

    def sample_batch(self, size, rng):
        eta = rng.poisson(self.means, (size, self.m)).astype(np.int64)
        psi = np.zeros(size) if self.product is ZERO else np.asarray(self.product.sample(rng, size), float)
        return eta, psi


class BernoulliImmigration(ImmigrationLaw):
    """eta = ``counts`` with probability ``prob``, else 0; psi drawn independently."""

    def __init__(self, prob: float, counts, product=None):
        if not 0 <= prob <= 1:
            raise ConfigurationError(f"immigration probability must be in [0, 1], got {prob}")
        c = np.atleast_1d(np.asarray(counts))
        if np.any(c < 0) or not np.all(c == np.round(c)):
            raise ConfigurationError("immigrant counts must be nonnegative integers")
        self.prob = float(prob)
        self.counts = c.astype(np.int64)
        self.m = c.size
        self.product = _amount_laws(product, 1)[0]
        self.mean_vector = self.prob * self.counts
        self.mean_product = self.product.mean

    def sample_batch(self, size, rng):
        hit = rng.random(size) < self.prob
        eta = hit[:, None] * self.counts[None, :]
        psi = np.zeros(size) if self.product is ZERO else np.asarray(self.product.sample(rng, size), float)
        return eta.astype(np.int64), psi


# ---------------------------------------------------------------------------
# Environment draws and their distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeanStatistics:
    """(A, B, C, D) of one environment draw; ``estimated`` marks Monte Carlo values."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float
    estimated: bool = False


@dataclass(frozen=True, eq=False)
class EnvironmentSample:
    """One draw H_n = (F_n; G_{n+1}) of the random environment."""

    offspring: OffspringLaw
    immigration: ImmigrationLaw
    name: str = ""
    mean_draws: int = DEFAULT_MEAN_DRAWS

    def __post_init__(self):
        if self.offspring.m != self.immigration.m:
            raise ConfigurationError(
                f"offspring law has {self.offspring.m} types but immigration law has {self.immigration.m}"
            )

    @property
    def m(self) -> int:
        return self.offspring.m

    @cached_property
    def means(self) -> MeanStatistics:
        off, imm = self.offspring, self.immigration
        if off.mean_matrix is not None and off.mean_product is not None and imm.mean_vector is not None \
                and imm.mean_product is not None:
            return MeanStatistics(np.asarray(off.mean_matrix, float), np.asarray(imm.mean_vector, float),
                                  np.asarray(off.mean_product, float), float(imm.mean_product))
        return estimate_means(self, self.mean_draws, make_stream(0, 0))


def estimate_means(env: EnvironmentSample, n_draws: int = DEFAULT_MEAN_DRAWS,
                   rng: RandomStream | None = None) -> MeanStatistics:
    """Monte Carlo (A, B, C, D) from ``n_draws`` draws per parent type."""
    rng = make_stream(0) if rng is None else rng
    m = env.m
    A = np.empty((m, m))
    C = np.empty(m)
    for i in range(m):
        parents = np.zeros((n_draws, m), dtype=np.int64)
        parents[:, i] = 1
        children, phi = env.offspring.sample_batch(parents, rng)
        A[i] = children.mean(axis=0)
        C[i] = phi.mean()
    eta, psi = env.immigration.sample_batch(n_draws, rng)
    return MeanStatistics(A, eta.mean(axis=0), C, float(psi.mean()), estimated=True)


class EnvironmentDistribution:
    """Finite mixture over environment draws (the measure Q).

    ``weights`` default to uniform and are normalized after validation.
    Immutable by convention once built.
    """

    def __init__(self, atoms: Sequence[EnvironmentSample], weights=None):
        atoms = tuple(atoms)
        if not atoms:
            raise ConfigurationError("environment needs at least one atom")
        m = atoms[0].m
        if any(a.m != m for a in atoms):
            raise ConfigurationError("all environment atoms must have the same number of types")
        w = np.ones(len(atoms)) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (len(atoms),) or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ConfigurationError("environment weights must be positive, one per atom")
        self.atoms = atoms
        self.weights = w / w.sum()
        self._cdf = np.cumsum(self.weights)

    @classmethod
    def single(cls, offspring: OffspringLaw, immigration: ImmigrationLaw | None = None):
        imm = NoImmigration(offspring.m) if immigration is None else immigration
        return cls([EnvironmentSample(offspring, imm)])

    @property
    def m(self) -> int:
        return self.atoms[0].m

    def __len__(self):
        return len(self.atoms)

    def sample_indices(self, rng: RandomStream, size: int) -> np.ndarray:
        if len(self.atoms) == 1:
            return np.zeros(size, dtype=np.int64)
        idx = np.searchsorted(self._cdf, rng.random(size), side="right")
        return np.minimum(idx, len(self.atoms) - 1)

    @cached_property
    def mean_matrices(self) -> np.ndarray:
        """Stacked A of every atom, shape ``(k, m, m)``."""
        return np.stack([a.means.A for a in self.atoms])

    @cached_property
    def product_means(self) -> np.ndarray:
        """Stacked C of every atom, shape ``(k, m)``."""
        return np.stack([a.means.C for a in self.atoms])

    @property
    def closed_form(self) -> bool:
        """True when E||A||^x has the closed form sum_k w_k a_k^x (scalar atoms)."""
        return self.m == 1 and not any(a.means.estimated for a in self.atoms)

    def has_immigration(self) -> bool:
        return not all(a.immigration.is_zero for a in self.atoms)

    def without_immigration(self) -> "EnvironmentDistribution":
        atoms = [EnvironmentSample(a.offspring, NoImmigration(a.m), a.name) for a in self.atoms]
        return EnvironmentDistribution(atoms, self.weights)


def sample_environment(dist: EnvironmentDistribution, rng: RandomStream) -> EnvironmentSample:
    return dist.atoms[int(dist.sample_indices(rng, 1)[0])]


def sample_offspring(env: EnvironmentSample, parent_type: int, rng: RandomStream):
    return env.offspring.sample(parent_type, rng)


def sample_immigration(env: EnvironmentSample, rng: RandomStream):
    return env.immigration.sample(rng)
