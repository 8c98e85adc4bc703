"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary block at
the end of the pytest output lists every criterion.
"""

import math
import time

import numpy as np
import pytest

from branchpoll.branching_core import Mode, ProcessConfig, simulate_life_periods, simulate_mbpfpre_totals
from branchpoll.env_model import EnvironmentDistribution, EnvironmentSample, NoImmigration, PoissonOffspring
from branchpoll.matrix_analysis import kappa, kappa_transfer, lyapunov_exponent
from branchpoll.polling_map import (CycleLaw, ProductMode, associated_environment, compose_product,
                                    compose_recursive, final_product_mean, sample_branching_immigration,
                                    sample_branching_offspring)
from branchpoll.polling_sim import run_busy_periods, run_generalized_busy_periods
from branchpoll.reference_models import (SCALAR_TOY_ALPHA, SCALAR_TOY_KAPPA, scalar_toy, supercritical_polling,
                                         two_station_cycles, two_station_polling)
from branchpoll.rng import make_stream
from branchpoll.tail_stats import SampleSet, hill_estimator, ks_distance, log_ccdf_linearity, moment_probe

HILL_TOLERANCE = 0.15


@pytest.fixture(scope="module")
def scalar_life_periods():
    start = time.perf_counter()
    batch = simulate_life_periods(ProcessConfig(scalar_toy(), Mode.MBPIFPRE), 1_000_000, make_stream(2024, 4))
    return batch, time.perf_counter() - start


@pytest.fixture(scope="module")
def two_station_kappa():
    env = associated_environment(two_station_cycles())
    mc = kappa(env, n=50, replicates=100_000, rng=make_stream(2024, 7), method="tilted")
    return mc, kappa_transfer(env)


def test_criterion_01_scalar_kappa(report):
    dist = scalar_toy()
    start = time.perf_counter()
    closed = kappa(dist, method="closed")
    mc = kappa(dist, n=50, replicates=100_000, rng=make_stream(2024, 1), method="tilted")
    elapsed = time.perf_counter() - start
    ok = (abs(closed.kappa - SCALAR_TOY_KAPPA) <= 1e-4 and abs(mc.kappa - SCALAR_TOY_KAPPA) <= 0.03
          and elapsed < 60)
    assert report(1, ok, f"closed={closed.kappa:.6f} mc={mc.kappa:.5f} target={SCALAR_TOY_KAPPA:.5f} "
                         f"({elapsed:.1f}s)")


def test_criterion_02_lyapunov(report):
    c = 1.5
    diag = EnvironmentDistribution.single(PoissonOffspring(c * np.eye(2)), NoImmigration(2))
    a_diag = lyapunov_exponent(diag, n=1000, replicates=10, rng=make_stream(2024, 2)).alpha
    a_toy = lyapunov_exponent(scalar_toy(), n=100, replicates=100_000, rng=make_stream(2024, 2),
                              closed_form=False).alpha
    ok = abs(a_diag - math.log(c)) <= 1e-3 and abs(a_toy - SCALAR_TOY_ALPHA) <= 0.002
    assert report(2, ok, f"alpha(cI)-log c={a_diag - math.log(c):.2e} toy={a_toy:.5f} "
                         f"target={SCALAR_TOY_ALPHA:.5f}")


def test_criterion_03_mean_identities(report):
    rng = np.random.default_rng(3)
    worst_a = worst_c = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 6))
        H = rng.uniform(0, 1.5, (m, m)) * (rng.random((m, m)) < 0.8)
        c = rng.uniform(0, 3, m)
        rec, prod = compose_recursive(H), compose_product(H)
        worst_a = max(worst_a, float(np.max(np.abs(rec - prod) / np.maximum(1, np.abs(prod)))))
        C = final_product_mean(H, c)
        inv = np.linalg.solve(np.eye(m) - np.triu(H, 1), c)
        worst_c = max(worst_c, float(np.max(np.abs(C - inv) / np.maximum(1, np.abs(inv)))))
    ok = worst_a <= 1e-12 and worst_c <= 1e-12
    assert report(3, ok, f"max rel diff A={worst_a:.1e} C={worst_c:.1e} over 1000 instances")


def test_criterion_04_life_period_tail(report, scalar_life_periods):
    batch, elapsed = scalar_life_periods
    fit = hill_estimator(SampleSet.from_records(batch.theta_total, batch.censored))
    rel = abs(fit.hill_index - SCALAR_TOY_KAPPA) / SCALAR_TOY_KAPPA
    ok = rel <= HILL_TOLERANCE and fit.flat and elapsed < 600
    assert report(4, ok, f"hill={fit.hill_index:.4f} (k={fit.k_used}) kappa={SCALAR_TOY_KAPPA:.4f} "
                         f"rel err={rel:.3f} flat={fit.flat} censored={batch.censored.sum()} ({elapsed:.1f}s)")


def test_criterion_05_immigration_free_tail(report):
    cfg = ProcessConfig(scalar_toy(immigration=False), Mode.MBPFPRE, initial=[1])
    start = time.perf_counter()
    phi, censored = simulate_mbpfpre_totals(cfg, [1], 1_000_000, make_stream(2024, 5))
    elapsed = time.perf_counter() - start
    fit = hill_estimator(SampleSet.from_records(phi, censored))
    rel = abs(fit.hill_index - SCALAR_TOY_KAPPA) / SCALAR_TOY_KAPPA
    ok = rel <= HILL_TOLERANCE and elapsed < 600
    assert report(5, ok, f"hill={fit.hill_index:.4f} kappa={SCALAR_TOY_KAPPA:.4f} rel err={rel:.3f} "
                         f"({elapsed:.1f}s)")


def test_criterion_06_generalized_busy_period_equivalence(report):
    polling = two_station_polling(mode=ProductMode.SERVICE_PLUS_SWITCHOVER)
    env = associated_environment(polling.cycles, polling.disciplines, polling.product_mode)
    branching = ProcessConfig(env, Mode.MBPIFPRE, initial=[1, 0], generation_cap=polling.max_cycles)
    start = time.perf_counter()
    passes = 0
    pooled_a, pooled_b = [], []
    for rep in range(100):
        a = run_generalized_busy_periods(polling, 10_000, make_stream(6000 + rep, 1))
        b = simulate_life_periods(branching, 10_000, make_stream(6000 + rep, 2))
        sa = SampleSet.from_records(a.theta_P, a.censored)
        sb = SampleSet.from_records(b.theta_total, b.censored)
        passes += ks_distance(sa, sb)[1] > 0.01
        pooled_a.append(sa.values)
        pooled_b.append(sb.values)
    elapsed = time.perf_counter() - start
    xa, xb = np.concatenate(pooled_a), np.concatenate(pooled_b)
    z = (xa.mean() - xb.mean()) / math.sqrt(xa.var() / xa.size + xb.var() / xb.size)
    ok = passes >= 95 and abs(z) < 5 and elapsed < 600
    assert report(6, ok, f"KS p>0.01 in {passes}/100; mean polling={xa.mean():.4f} branching={xb.mean():.4f} "
                         f"z={z:.2f} ({elapsed:.1f}s)")


def test_criterion_07_busy_period_tail(report, two_station_kappa):
    mc, oracle = two_station_kappa
    start = time.perf_counter()
    batch = run_busy_periods(two_station_polling(), 1_000_000, make_stream(2024, 7))
    elapsed = time.perf_counter() - start
    fit = hill_estimator(SampleSet.from_records(batch.theta_P, batch.censored))
    rel = abs(fit.hill_index - mc.kappa) / mc.kappa
    ok = rel <= HILL_TOLERANCE and abs(mc.kappa - oracle) / oracle < 0.01 and elapsed < 600
    assert report(7, ok, f"hill={fit.hill_index:.4f} kappa mc={mc.kappa:.4f} transfer={oracle:.4f} "
                         f"rel err={rel:.3f} censored={batch.censored.sum()} ({elapsed:.1f}s)")


def test_criterion_08_moment_dichotomy(report, scalar_life_periods):
    batch, _ = scalar_life_periods
    samples = SampleSet.from_records(batch.theta_total, batch.censored)
    low, high = moment_probe(samples, [0.5 * SCALAR_TOY_KAPPA, 1.5 * SCALAR_TOY_KAPPA])
    ok = low.stable and not high.stable
    assert report(8, ok, f"x={low.x:.3f} stable={low.stable} prefixes={np.round(low.prefix_means, 4).tolist()}; "
                         f"x={high.x:.3f} stable={high.stable} prefixes={np.round(high.prefix_means, 1).tolist()}")


def test_criterion_09_exponential_life_periods(report, scalar_life_periods):
    batch, _ = scalar_life_periods
    slope, r2 = log_ccdf_linearity(SampleSet(batch.upsilon[~batch.censored]), 5, 30)
    ok = r2 >= 0.98 and slope < 0
    assert report(9, ok, f"log P(Y>t) on [5,30]: slope={slope:.4f} R^2={r2:.4f}")


def test_criterion_10_supercritical_divergence(report):
    polling = supercritical_polling()
    alpha = lyapunov_exponent(associated_environment(polling.cycles), n=200, replicates=200,
                              rng=make_stream(2024, 10)).alpha
    batch = run_busy_periods(polling, 1000, make_stream(2024, 10))
    frac = batch.censored_fraction
    ok = alpha > 0 and frac > 0.5
    assert report(10, ok, f"alpha={alpha:.3f} censored fraction={frac:.3f} at cap {polling.max_services}")


def _z_scores(draws, target):
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    diff = np.abs(mean - target)
    return np.where(se > 0, diff / np.where(se > 0, se, 1), np.where(diff > 1e-12, np.inf, 0.0))


@pytest.mark.parametrize("discipline", ["gated", "exhaustive"])
def test_criterion_11_sampler_mean_consistency(report, discipline):
    n = 1_000_000
    worst = 0.0
    rng = make_stream(2024, 11 if discipline == "gated" else 12)
    for params in two_station_cycles().params:
        law = CycleLaw(params, discipline, ProductMode.SERVICE_PLUS_SWITCHOVER)
        ms = law.means
        for i in range(law.m):
            children, phi = sample_branching_offspring(law, i, rng, n)
            worst = max(worst, _z_scores(children, ms.A[i]).max(), _z_scores(phi[:, None], ms.C[i:i + 1]).max())
        eta, psi = sample_branching_immigration(law, rng, n)
        worst = max(worst, _z_scores(eta, ms.B).max(), _z_scores(psi[:, None], np.array([ms.D])).max())
    ok = worst < 5
    assert report(11, ok, f"{discipline}: max |z| over A, B, C, D = {worst:.2f} at {n} draws")
