"""Tail-index and distribution-comparison statistics for simulated totals."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigurationError

MIN_TAIL_SAMPLES = 100
UNRELIABLE_CENSORED_FRACTION = 0.01
FLATNESS_TOLERANCE = 0.15


@dataclass
class SampleSet:
    """Uncensored nonnegative samples plus the number of censored ones dropped."""

    values: np.ndarray
    n_censored: int = 0
    source: str = ""
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ConfigurationError("samples must be finite and nonnegative")

    @classmethod
    def from_records(cls, values, censored=None, source="", seed=None) -> "SampleSet":
        values = np.asarray(values, dtype=float)
        if censored is None:
            return cls(values, 0, source, seed)
        censored = np.asarray(censored, dtype=bool)
        return cls(values[~censored], int(censored.sum()), source, seed)

    def __len__(self):
        return self.values.size

    @property
    def censored_fraction(self) -> float:
        total = len(self) + self.n_censored
        return self.n_censored / total if total else 0.0

    @property
    def unreliable(self) -> bool:
        return self.censored_fraction > UNRELIABLE_CENSORED_FRACTION


def read_csv_samples(path, column: str, censored_column: str | None = "censored") -> SampleSet:
    """Load one column of a record CSV; comment lines starting with '#' are skipped."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ConfigurationError(f"{path}: no column {column!r}")
        rows = list(reader)
    values = np.array([float(r[column]) for r in rows])
    cens = None
    if censored_column and censored_column in (reader.fieldnames or ()):
        cens = np.array([r[censored_column].strip().lower() in ("1", "true") for r in rows])
    return SampleSet.from_records(values, cens, source=str(path))


def _as_samples(samples) -> SampleSet:
    return samples if isinstance(samples, SampleSet) else SampleSet(samples)


@dataclass
class TailFit:
    hill_index: float
    ci: tuple[float, float]
    k_used: int
    n: int
    hill_plot: np.ndarray = field(repr=False)
    ccdf_points: np.ndarray = field(repr=False)
    n_censored: int = 0
    unreliable: bool = False

    @property
    def flat(self) -> bool:
        return hill_plot_flat(self.hill_plot, self.k_used)


def _hill_curve(desc: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Hill index for every k in ``ks`` from descending samples."""
    logs = np.log(desc[: ks.max() + 1])
    csum = np.cumsum(logs)
    return 1.0 / (csum[ks - 1] / ks - logs[ks])


def hill_estimator(samples, k: int | str = "auto", n_grid: int = 60) -> TailFit:
    """Hill estimate from the top k order statistics; auto k = ceil(sqrt(n))."""
    s = _as_samples(samples)
    n = len(s)
    if n < MIN_TAIL_SAMPLES:
        raise ConfigurationError(f"too few samples for a tail fit: {n} < {MIN_TAIL_SAMPLES}")
    k = math.ceil(math.sqrt(n)) if k == "auto" else int(k)
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    desc = np.sort(s.values)[::-1]
    if desc[k] <= 0:
        raise ConfigurationError("nonpositive samples in tail window")
    if desc[0] == desc[k]:
        raise ConfigurationError("degenerate tail window")
    index = float(_hill_curve(desc, np.array([k]))[0])
    half = 1.96 / math.sqrt(k)
    grid = np.unique(np.geomspace(10, n - 1, n_grid).astype(int))
    grid = grid[(grid < n) & (desc[np.minimum(grid, n - 1)] > 0)]
    with np.errstate(divide="ignore"):
        plot = np.column_stack([grid, _hill_curve(desc, grid)]) if grid.size else np.empty((0, 2))
    plot = plot[np.isfinite(plot[:, 1])]
    return TailFit(index, (index * (1 - half), index * (1 + half)), k, n, plot,
                   empirical_ccdf(s), s.n_censored, s.unreliable)


def hill_plot_flat(plot: np.ndarray, k: int, tol: float = FLATNESS_TOLERANCE) -> bool:
    """Whether the Hill plot stays within ``tol`` relative deviation over a decade around k."""
    lo, hi = k / math.sqrt(10), k * math.sqrt(10)
    sel = (plot[:, 0] >= lo) & (plot[:, 0] <= hi)
    if sel.sum() < 2:
        return False
    vals = plot[sel, 1]
    ref = np.median(vals)
    return bool(np.max(np.abs(vals - ref)) / ref <= tol)


@dataclass(frozen=True)
class MomentProbe:
    x: float
    estimate: float
    prefix_means: tuple[float, float, float]
    stable: bool


def moment_probe(samples, x_grid, rel_change: float = 0.1) -> list[MomentProbe]:
    """E[X^x] on nested prefixes n/4, n/2, n; stable when successive changes stay below ``rel_change``."""
    s = _as_samples(samples)
    if len(s) == 0:
        raise ConfigurationError("moment_probe needs at least one sample")
    v = s.values
    n = v.size
    cuts = (max(n // 4, 1), max(n // 2, 1), n)
    out = []
    for x in x_grid:
        x = float(x)
        if x == 0:
            out.append(MomentProbe(0.0, 1.0, (1.0, 1.0, 1.0), True))
            continue
        csum = np.cumsum(v ** x)
        means = tuple(float(csum[c - 1] / c) for c in cuts)
        changes = [abs(b - a) / a if a > 0 else (0.0 if b == a else math.inf) for a, b in zip(means, means[1:])]
        out.append(MomentProbe(x, means[-1], means, max(changes) < rel_change))
    return out


def empirical_ccdf(samples, grid=None) -> np.ndarray:
    """Rows (y, P(X > y)); default grid is the sorted distinct sample values."""
    s = _as_samples(samples)
    v = np.sort(s.values)
    if grid is None:
        grid = np.unique(v)
    grid = np.asarray(grid, dtype=float)
    if v.size == 0:
        return np.column_stack([grid, np.zeros_like(grid)])
    above = v.size - np.searchsorted(v, grid, side="right")
    return np.column_stack([grid, above / v.size])


def ccdf_slope(samples, q_lo: float = 0.9, q_hi: float = 0.999) -> float:
    """Least-squares slope of log P(X > y) against log y between two quantiles."""
    s = _as_samples(samples)
    lo, hi = np.quantile(s.values, [q_lo, q_hi])
    pts = empirical_ccdf(s, np.geomspace(lo, hi, 40))
    pts = pts[pts[:, 1] > 0]
    return float(np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 1)[0])


def ks_distance(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    a, b = _as_samples(a), _as_samples(b)
    if min(len(a), len(b)) < MIN_TAIL_SAMPLES:
        raise ConfigurationError(f"KS comparison needs >= {MIN_TAIL_SAMPLES} uncensored samples per side")
    res = stats.ks_2samp(a.values, b.values, method="asymp")
    return float(res.statistic), float(res.pvalue)


def log_ccdf_linearity(samples, t_lo: float, t_hi: float) -> tuple[float, float]:
    """(slope, R^2) of a linear fit of log P(X > t) over integer t in [t_lo, t_hi]."""
    s = _as_samples(samples)
    t = np.arange(math.ceil(t_lo), math.floor(t_hi) + 1, dtype=float)
    p = empirical_ccdf(s, t)[:, 1]
    if np.any(p <= 0):
        raise ConfigurationError("empirical tail reaches zero inside the fit window")
    res = stats.linregress(t, np.log(p))
    return float(res.slope), float(res.rvalue ** 2)
