"""Functionals of products of iid random mean matrices.

All norms are the sum norm ``||A|| = sum |a_ij|``.  For nonnegative matrices
``||A_0 ... A_{n-1}|| = 1' A_0 ... A_{n-1} 1``, so products are propagated
as a renormalized row vector and the log of the norm is accumulated.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from .env_model import EnvironmentDistribution
from .rng import RandomStream, make_stream

Z95 = 1.959963984540054


def sum_norm(A) -> float:
    return float(np.abs(np.asarray(A, float)).sum())


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus (the Perron root for nonnegative ``A``)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("spectral radius needs finite entries")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def log_product_norm(matrices, renormalize: bool = True) -> float:
    """log ||A_0 A_1 ... A_{n-1}|| for a sequence of nonnegative matrices."""
    mats = [np.atleast_2d(np.asarray(a, float)) for a in matrices]
    if not renormalize:
        P = np.eye(mats[0].shape[0])
        for a in mats:
            P = P @ a
        return math.log(sum_norm(P)) if sum_norm(P) > 0 else -math.inf
    v = np.ones(mats[0].shape[0])
    acc = 0.0
    for a in mats:
        v = v @ a
        s = v.sum()
        if s == 0:
            return -math.inf
        acc += math.log(s)
        v /= s
    return acc + math.log(v.sum())


def _log_norm_paths(mats: np.ndarray, idx_stream, R: int, horizons) -> dict:
    """Accumulate log ||Pi_{0,t}|| for R replicates; return values at ``horizons``.

    ``idx_stream(t)`` yields the atom indices used at step t (shape (R,)).
    """
    k, m, _ = mats.shape
    v = np.ones((R, m))
    acc = np.zeros(R)
    out = {}
    horizons = sorted(set(horizons))
    for t in range(1, horizons[-1] + 1):
        idx = idx_stream(t)
        v = np.einsum("ri,rij->rj", v, mats[idx]) if m > 1 else v * mats[idx, 0]
        s = v.sum(axis=1)
        dead = s <= 0
        with np.errstate(divide="ignore"):
            acc += np.log(s)
        s[dead] = 1.0
        v = v / s[:, None]
        v[dead] = 1.0  # value irrelevant: acc is already -inf
        if t in horizons:
            out[t] = acc.copy()
    return out


# ---------------------------------------------------------------------------
# Lyapunov exponent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovEstimate:
    alpha: float
    ci: tuple[float, float]
    n: int
    replicates: int
    n_zero: int = 0
    alpha_two_horizon: float = float("nan")
    exact: bool = False


def _closed_form_alpha(dist: EnvironmentDistribution) -> float:
    a = dist.mean_matrices[:, 0, 0]
    if np.any(a == 0):
        return -math.inf
    return float(np.dot(dist.weights, np.log(a)))


def lyapunov_exponent(dist: EnvironmentDistribution, n: int = 1000, replicates: int = 1000,
                      rng: RandomStream | None = None, closed_form: bool = True) -> LyapunovEstimate:
    """Top Lyapunov exponent, the mean of (1/n) log ||A_0...A_{n-1}|| over replicates.

    Scalar mixtures use the exact E log a unless ``closed_form=False``.  A
    replicate whose product hits the zero matrix contributes -inf and is
    counted in ``n_zero``.  ``alpha_two_horizon`` is the midpoint-difference
    estimate (L_n - L_{n/2}) / (n/2), free of the O(1/n) norm-constant bias.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if closed_form and dist.closed_form:
        a = _closed_form_alpha(dist)
        return LyapunovEstimate(a, (a, a), n, 0, 0, a, exact=True)
    rng = make_stream(0) if rng is None else rng
    half = max(n // 2, 1)
    paths = _log_norm_paths(dist.mean_matrices, lambda t: dist.sample_indices(rng, replicates),
                            replicates, (half, n))
    L = paths[n]
    n_zero = int(np.sum(~np.isfinite(L)))
    if n_zero:
        return LyapunovEstimate(-math.inf, (-math.inf, -math.inf), n, replicates, n_zero, -math.inf)
    per = L / n
    alpha = float(per.mean())
    se = float(per.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else 0.0
    two = float(np.mean((L - paths[half]) / (n - half))) if n > half else alpha
    return LyapunovEstimate(alpha, (alpha - Z95 * se, alpha + Z95 * se), n, replicates, 0, two)


# ---------------------------------------------------------------------------
# Moment function s(x)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SEstimate:
    x: float
    s_hat: float
    ci: tuple[float, float]
    s_n: float = float("nan")
    s_2n: float = float("nan")
    method: str = "closed"
    unreliable: bool = False


def _closed_form_s(dist: EnvironmentDistribution, x: float) -> float:
    a = dist.mean_matrices[:, 0, 0]
    with np.errstate(divide="ignore"):
        return float(np.dot(dist.weights, np.where(a > 0, a, 0.0) ** x)) if x > 0 else 1.0


def _log_mean_exp(z: np.ndarray):
    """log of mean(exp z) and the standard error of that log (delta method)."""
    z = z[np.isfinite(z)] if np.any(np.isfinite(z)) else z
    R_all = z.size
    lme = logsumexp(z) - math.log(R_all)
    w = np.exp(z - z.max())
    rel = w.std(ddof=1) / w.mean() / math.sqrt(R_all) if R_all > 1 and w.mean() > 0 else math.inf
    return float(lme), float(rel)


def s_of_x(dist: EnvironmentDistribution, x: float, n: int = 50, replicates: int = 100_000,
           rng: RandomStream | None = None, method: str = "auto",
           unreliable_width: float = 0.05) -> SEstimate:
    """Estimate s(x) = lim (E ||Pi_{0,n}||^x)^(1/n).

    ``method``:
      * ``"closed"`` (scalar atoms): exact ``sum_k w_k a_k^x``;
      * ``"plain"``: crude Monte Carlo at horizons n and 2n;
      * ``"tilted"``: atoms drawn with probability proportional to
        ``w_k ||A_k||^x`` and reweighted, which leaves only the
        ratio ``||Pi|| / prod ||A_k||`` to be averaged;
      * ``"auto"``: closed form when available, else tilted.

    Monte Carlo returns the two-horizon extrapolation
    ``exp((log E_2n - log E_n) / n)`` as ``s_hat`` with both raw values.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    if method == "auto":
        method = "closed" if dist.closed_form else "tilted"
    if x == 0:
        return SEstimate(0.0, 1.0, (1.0, 1.0), 1.0, 1.0, method)
    if method == "closed":
        if not dist.closed_form:
            raise ValueError("closed form needs scalar atoms with analytic means")
        s = _closed_form_s(dist, x)
        return SEstimate(x, s, (s, s), s, s, "closed")
    rng = make_stream(0) if rng is None else rng
    mats = dist.mean_matrices
    if method == "plain":
        paths = _log_norm_paths(mats, lambda t: dist.sample_indices(rng, replicates), replicates, (n, 2 * n))
        offset_n = offset_2n = 0.0
        zn, z2n = x * paths[n], x * paths[2 * n]
    elif method == "tilted":
        norms = mats.reshape(len(mats), -1).sum(axis=1)
        with np.errstate(divide="ignore"):
            logw = np.log(dist.weights) + x * np.where(norms > 0, np.log(np.where(norms > 0, norms, 1)), -np.inf)
        log_M = float(logsumexp(logw))
        cdf = np.cumsum(np.exp(logw - log_M))
        lognorm = np.log(np.where(norms > 0, norms, 1.0))
        sumlog = np.zeros(replicates)
        marks = {}

        def draw(t):
            idx = np.minimum(np.searchsorted(cdf, rng.random(replicates), side="right"), len(cdf) - 1)
            sumlog[:] += lognorm[idx]
            if t in (n, 2 * n):
                marks[t] = sumlog.copy()
            return idx

        paths = _log_norm_paths(mats, draw, replicates, (n, 2 * n))
        zn = x * (paths[n] - marks[n])
        z2n = x * (paths[2 * n] - marks[2 * n])
        offset_n, offset_2n = n * log_M, 2 * n * log_M
    else:
        raise ValueError(f"unknown method {method!r}")
    le_n, se_n = _log_mean_exp(zn)
    le_2n, se_2n = _log_mean_exp(z2n)
    le_n += offset_n
    le_2n += offset_2n
    log_s = (le_2n - le_n) / n
    se = math.hypot(se_n, se_2n) / n
    s_hat = math.exp(log_s)
    ci = (math.exp(log_s - Z95 * se), math.exp(log_s + Z95 * se))
    unreliable = not math.isfinite(se) or (ci[1] - ci[0]) / s_hat > unreliable_width
    return SEstimate(x, s_hat, ci, math.exp(le_n / n), math.exp(le_2n / (2 * n)), method, unreliable)


def s_of_x_transfer(dist: EnvironmentDistribution, x: float, grid: int = 801) -> float:
    """s(x) for two-type finite mixtures as the spectral radius of the
    discretized transfer operator ``Tf(v) = E[||vA||^x f(vA/||vA||)]`` on the
    simplex of row vectors.  Deterministic; used as an oracle for Monte Carlo.
    """
    if dist.m != 2:
        raise ValueError("transfer-operator oracle implemented for m = 2 only")
    if x == 0:
        return 1.0
    t = np.linspace(0.0, 1.0, grid)
    V = np.stack([t, 1.0 - t], axis=1)
    K = np.zeros((grid, grid))
    for w, A in zip(dist.weights, dist.mean_matrices):
        VA = V @ A
        norm = VA.sum(axis=1)
        ok = norm > 0
        tp = np.where(ok, VA[:, 0] / np.where(ok, norm, 1.0), 0.0)
        pos = tp * (grid - 1)
        j = np.clip(np.floor(pos).astype(int), 0, grid - 2)
        frac = pos - j
        weight = w * np.where(ok, np.where(ok, norm, 1.0) ** x, 0.0)
        rows = np.arange(grid)
        np.add.at(K, (rows, j), weight * (1 - frac))
        np.add.at(K, (rows, j + 1), weight * frac)
    return float(np.max(np.abs(np.linalg.eigvals(K))))


# ---------------------------------------------------------------------------
# Tail index kappa
# ---------------------------------------------------------------------------


@dataclass
class KappaEstimate:
    kappa: float
    ci: tuple[float, float]
    status: str  # "ok", "infinite", "zero", "indeterminate"
    s_curve: list = field(default_factory=list)
    method: str = ""

    @property
    def infinite(self) -> bool:
        return self.status == "infinite"


def kappa(dist: EnvironmentDistribution, x_max: float = 10.0, tol: float = 1e-3,
          n: int = 50, replicates: int = 100_000, rng: RandomStream | None = None,
          method: str = "auto", alpha: float | None = None) -> KappaEstimate:
    """kappa = inf{x > 0 : s(x) > 1}, by doubling then bisection on s(x) - 1.

    Returns 0 without search when the Lyapunov exponent is positive.  All
    Monte Carlo evaluations reuse one random stream (common random numbers),
    so the estimated s curve is smooth in x.  The closed-form path is
    bisected to 1e-12 regardless of ``tol``.
    """
    if method == "auto":
        method = "closed" if dist.closed_form else "tilted"
    if alpha is None:
        sub = make_stream(0, 1) if rng is None else rng
        alpha = lyapunov_exponent(dist, n=max(2 * n, 200), replicates=min(replicates, 10_000), rng=sub).alpha
    if alpha > 0:
        return KappaEstimate(0.0, (0.0, 0.0), "zero", [], method)
    base = int((make_stream(0, 2) if rng is None else rng).integers(2**62))
    curve = []

    def s_at(xv):
        est = s_of_x(dist, xv, n=n, replicates=replicates, rng=make_stream(base, 0), method=method)
        curve.append(est)
        return est

    if method == "closed":
        tol = min(tol, 1e-12)
    x_lo, x_hi = 0.0, 0.25
    est = s_at(x_hi)
    while est.s_hat <= 1.0:
        x_lo = x_hi
        if x_hi >= x_max:
            half_width = est.s_hat - est.ci[0]
            status = "infinite" if est.s_hat < 1.0 - max(half_width, 0.0) else "indeterminate"
            return KappaEstimate(math.inf, (math.inf, math.inf), status, curve, method)
        x_hi = min(2 * x_hi, x_max)
        est = s_at(x_hi)
    while x_hi - x_lo > tol:
        mid = 0.5 * (x_lo + x_hi)
        if s_at(mid).s_hat > 1.0:
            x_hi = mid
        else:
            x_lo = mid
    k_hat = 0.5 * (x_lo + x_hi)
    at = s_at(k_hat)
    if method == "closed":
        ci = (x_lo, x_hi)
    else:
        h = max(10 * tol, 1e-3)
        slope = (math.log(s_at(k_hat + h).s_hat) - math.log(s_at(max(k_hat - h, 1e-9)).s_hat)) / (
            k_hat + h - max(k_hat - h, 1e-9))
        half = (math.log(at.ci[1]) - math.log(at.ci[0])) / 2
        if slope <= 0:
            return KappaEstimate(k_hat, (0.0, math.inf), "indeterminate", curve, method)
        d = half / slope + tol / 2
        ci = (k_hat - d, k_hat + d)
    curve.sort(key=lambda e: e.x)
    return KappaEstimate(k_hat, ci, "ok", curve, method)


def kappa_transfer(dist: EnvironmentDistribution, x_max: float = 10.0, tol: float = 1e-6,
                   grid: int = 801) -> float:
    """kappa from the transfer-operator s(x) (m = 2), by bisection."""
    x_lo, x_hi = 0.0, 0.25
    while s_of_x_transfer(dist, x_hi, grid) <= 1.0:
        x_lo, x_hi = x_hi, 2 * x_hi
        if x_lo >= x_max:
            return math.inf
    while x_hi - x_lo > tol:
        mid = 0.5 * (x_lo + x_hi)
        if s_of_x_transfer(dist, mid, grid) > 1.0:
            x_hi = mid
        else:
            x_lo = mid
    return 0.5 * (x_lo + x_hi)


# ---------------------------------------------------------------------------
# Discounted final-product series Xi = sum_k Pi_{0,k} C_k
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class XiEstimate:
    xi: np.ndarray
    K: int
    residual_bound: float
    converged: bool


def xi_series_batch(dist: EnvironmentDistribution, size: int, tol: float = 1e-10,
                    k_max: int = 100_000, rng: RandomStream | None = None):
    """``size`` independent realizations of Xi, truncated per replicate at the
    first K with ||Pi_{0,K}|| * sup ||C|| < tol (or K = k_max).

    Returns ``(xi (size, m), K (size,), residual (size,), converged (size,))``.
    """
    rng = make_stream(0) if rng is None else rng
    mats, C = dist.mean_matrices, dist.product_means
    m = dist.m
    c_sup = float(np.abs(C).sum(axis=1).max())
    xi = np.zeros((size, m))
    P = np.broadcast_to(np.eye(m), (size, m, m)).copy()
    K = np.zeros(size, dtype=np.int64)
    resid = np.full(size, c_sup)
    live = np.arange(size) if c_sup > 0 else np.arange(0)
    k = 0
    while live.size and k < k_max:
        idx = dist.sample_indices(rng, live.size)
        Pl = P[live]
        xi[live] += np.einsum("rij,rj->ri", Pl, C[idx])
        Pl = Pl @ mats[idx]
        P[live] = Pl
        k += 1
        K[live] = k
        r = np.abs(Pl).sum(axis=(1, 2)) * c_sup
        resid[live] = r
        live = live[r >= tol]
    if c_sup == 0:
        resid[:] = 0.0
    converged = resid < tol
    return xi, K, resid, converged


def xi_series(dist: EnvironmentDistribution, tol: float = 1e-10, k_max: int = 100_000,
              rng: RandomStream | None = None) -> XiEstimate:
    xi, K, r, ok = xi_series_batch(dist, 1, tol, k_max, rng)
    return XiEstimate(xi[0], int(K[0]), float(r[0]), bool(ok[0]))


# ---------------------------------------------------------------------------
# Kesten-condition report
# ---------------------------------------------------------------------------


@dataclass
class KestenReport:
    moment_q: float
    moment_stable: bool
    zero_row_atoms: list
    no_zero_rows: bool
    log_spectral_values: list
    group_density_heuristic: str
    min_row_moment: float
    min_row_threshold: float
    min_row_pass: bool
    log_moment: float
    log_moment_stable: bool

    @property
    def all_checked_pass(self) -> bool:
        return self.moment_stable and self.no_zero_rows and self.min_row_pass and self.log_moment_stable

    def lines(self):
        yield f"1 moment E||A||^{self.moment_q:g}: {'stable' if self.moment_stable else 'UNSTABLE'}"
        yield f"2 no zero rows: {'pass' if self.no_zero_rows else 'FAIL atoms ' + str(self.zero_row_atoms)}"
        yield f"3 group density: not machine-checkable; heuristic: {self.group_density_heuristic}"
        yield (f"4 E[min row sum^k0] = {self.min_row_moment:.6g} vs m^(k0/2) = {self.min_row_threshold:.6g}: "
               f"{'pass' if self.min_row_pass else 'FAIL'}")
        yield f"4 E||A||^k0 log+||A|| = {self.log_moment:.6g}: {'stable' if self.log_moment_stable else 'UNSTABLE'}"


def _prefix_stable(values: np.ndarray, rel: float = 0.1) -> bool:
    n = values.size
    means = [values[: max(n // d, 1)].mean() for d in (4, 2, 1)]
    ref = max(abs(means[-1]), 1e-300)
    return all(abs(a - b) / ref < rel for a, b in zip(means, means[1:]))


def _lattice_like(values, max_den: int = 12, tol: float = 1e-9) -> bool:
    vals = [v for v in values if abs(v) > 1e-12]
    if len(vals) < 2:
        return True
    base = min(vals, key=abs)
    for v in vals:
        r = v / base
        if abs(float(Fraction(r).limit_denominator(max_den)) - r) > tol:
            return False
    return True


def kesten_check(dist: EnvironmentDistribution, kappa0: float, n_samples: int = 100_000,
                 rng: RandomStream | None = None, q: float | None = None,
                 word_length: int = 3) -> KestenReport:
    """Report on the sufficient conditions for a Kesten-type power tail.

    Expectations are exact mixture averages; "stable" flags come from
    nested-prefix stability of the empirical moments over ``n_samples`` draws.
    """
    if kappa0 <= 0:
        raise ValueError("kappa0 must be > 0")
    rng = make_stream(0) if rng is None else rng
    q = kappa0 if q is None else q
    mats, w, m = dist.mean_matrices, dist.weights, dist.m
    norms = mats.reshape(len(mats), -1).sum(axis=1)
    idx = dist.sample_indices(rng, n_samples)
    moment_stable = _prefix_stable(norms[idx] ** q)

    zero_rows = [k for k, A in enumerate(mats) if np.any(A.sum(axis=1) == 0)]

    logs = set()
    for L in range(1, word_length + 1):
        for word in itertools.product(range(len(mats)), repeat=L):
            P = np.linalg.multi_dot([mats[k] for k in word]) if L > 1 else mats[word[0]]
            if np.all(P > 0):
                logs.add(round(math.log(spectral_radius(P)), 12))
    logs = sorted(logs)
    if not logs:
        heuristic = "no strictly positive products among short words"
    elif _lattice_like(logs):
        heuristic = f"{len(logs)} distinct log-spectral values, all rationally related (lattice-like)"
    else:
        heuristic = f"{len(logs)} distinct log-spectral values, not all rationally related (density plausible)"

    min_rows = mats.sum(axis=2).min(axis=1)
    min_row_moment = float(np.dot(w, min_rows**kappa0))
    threshold = m ** (kappa0 / 2)
    with np.errstate(divide="ignore"):
        logplus = np.log(np.maximum(norms, 1.0))
    lm_values = norms**kappa0 * logplus
    log_moment = float(np.dot(w, lm_values))
    sampled = lm_values[idx]
    log_stable = True if not sampled.any() else _prefix_stable(sampled)
    return KestenReport(q, moment_stable, zero_rows, not zero_rows, logs, heuristic,
                        min_row_moment, threshold, min_row_moment >= threshold * (1 - 1e-9), log_moment, log_stable)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass
class AnalysisReport:
    alpha: float
    alpha_ci: tuple[float, float]
    s_curve: list
    kappa: float
    kappa_ci: tuple[float, float]
    kappa_status: str
    classification: str
    method: dict
    norm: str = "sum norm ||A|| = sum |a_ij|"

    def s_rows(self):
        for e in self.s_curve:
            yield (repr(float(e.x)), repr(float(e.s_hat)), repr(float(e.ci[0])), repr(float(e.ci[1])))


def classify(dist: EnvironmentDistribution, n: int = 1000, replicates: int = 2000,
             rng: RandomStream | None = None, kappa_n: int = 50, kappa_replicates: int = 100_000,
             x_grid=(0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0), method: str = "auto",
             tol: float = 1e-3, x_max: float = 10.0) -> AnalysisReport:
    """Lyapunov exponent, s curve and kappa with a sub/supercritical label.

    The label is "subcritical" (resp. "supercritical") only when the whole
    interval spanned by the CI and the two-horizon estimate lies below
    (resp. above) zero.
    """
    rng = make_stream(0) if rng is None else rng
    ly = lyapunov_exponent(dist, n=n, replicates=replicates, rng=rng)
    lo = min(ly.ci[0], ly.alpha_two_horizon)
    hi = max(ly.ci[1], ly.alpha_two_horizon)
    if hi < 0:
        label = "subcritical"
    elif lo > 0:
        label = "supercritical"
    else:
        label = "indeterminate"
    if label == "supercritical":
        kap = KappaEstimate(0.0, (0.0, 0.0), "zero", [], method)
    elif label == "indeterminate":
        kap = KappaEstimate(math.nan, (math.nan, math.nan), "indeterminate", [], method)
    else:
        kap = kappa(dist, x_max=x_max, tol=tol, n=kappa_n, replicates=kappa_replicates, rng=rng,
                    method=method, alpha=ly.alpha)
    seed = int(rng.integers(2**62))
    curve = [s_of_x(dist, float(x), n=kappa_n, replicates=kappa_replicates, rng=make_stream(seed, 0),
                    method=method) for x in x_grid]
    meta = {"lyapunov_n": n, "lyapunov_replicates": replicates, "s_n": kappa_n,
            "s_replicates": kappa_replicates, "s_method": kap.method or method}
    return AnalysisReport(ly.alpha, ly.ci, curve, kap.kappa, kap.ci, kap.status, label, meta)
