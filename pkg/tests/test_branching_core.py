import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchpoll.branching_core import (LifePeriodBatch, Mode, PopulationState, ProcessConfig, advance,
                                       simulate_life_period, simulate_life_periods, simulate_mbpfpre_total,
                                       simulate_mbpfpre_totals, stationary_distribution_probe, step,
                                       total_variation, empirical_law)
from branchpoll.env_model import (BernoulliImmigration, DegenerateOffspring, Deterministic, EnvironmentDistribution,
                                  EnvironmentSample, Exponential, FixedImmigration, NoImmigration,
                                  PoissonImmigration, PoissonOffspring)
from branchpoll.errors import ConfigurationError, PopulationOverflowError
from branchpoll.reference_models import scalar_toy
from branchpoll.rng import make_stream
from branchpoll.tail_stats import ks_distance


def env_of(offspring, immigration=None):
    return EnvironmentSample(offspring, immigration or NoImmigration(offspring.m))


def test_empty_population_is_absorbing():
    env = env_of(PoissonOffspring(np.eye(2)))
    state = step(PopulationState(np.array([0, 0]), 1.5, 0), env, make_stream(0))
    assert state.V.tolist() == [0, 0] and state.theta == 1.5 and state.generation == 1


def test_degenerate_step_exact():
    env = env_of(DegenerateOffspring([[0, 1], [0, 0]], [1.0, 0.0]), FixedImmigration([0, 0], Deterministic(0.5)))
    state = step(PopulationState(np.array([2, 0]), 1.0, 0), env, make_stream(0))
    assert state.V.tolist() == [0, 2]
    assert state.theta == pytest.approx(1.0 + 2.5)


def test_overflow_is_explicit():
    env = env_of(DegenerateOffspring([[10**6]]))
    with pytest.raises(PopulationOverflowError):
        step(PopulationState(np.array([10**10]), 0.0, 0), env, make_stream(0))


@pytest.mark.parametrize("parents", [[1, 1], [3, 0]])
def test_conditional_mean_identity(parents):
    A = np.array([[0.4, 0.3], [0.2, 0.6]])
    B = np.array([0.5, 0.2])
    C = np.array([1.0, 2.0])
    env = env_of(PoissonOffspring(A, product=[Exponential(1.0), Exponential(2.0)]),
                 PoissonImmigration(B, Exponential(0.3)))
    dist = EnvironmentDistribution([env])
    V = np.tile(parents, (1_000_000, 1))
    nxt, dtheta = advance(dist, V, make_stream(1))
    for draws, target in ((nxt, np.array(parents) @ A + B), (dtheta[:, None], [np.dot(parents, C) + 0.3])):
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - target) <= 5 * se)


def test_total_population_mean():
    A = np.array([[0.4, 0.3], [0.2, 0.6]])
    env = env_of(PoissonOffspring(A), PoissonImmigration([0.5, 0.2]))
    V = np.tile([1, 1], (1_000_000, 1))
    nxt, _ = advance(EnvironmentDistribution([env]), V, make_stream(2))
    total = nxt.sum(axis=1)
    target = (np.array([1, 1]) @ A).sum() + 0.7
    assert abs(total.mean() - target) <= 5 * total.std() / np.sqrt(total.size)


def test_mode_reduction_same_trajectory():
    dist = scalar_toy(immigration=False)
    a = simulate_life_periods(ProcessConfig(dist, Mode.MBPIFPRE, initial=[3]), 2000, make_stream(5))
    b = simulate_life_periods(ProcessConfig(dist, Mode.MBPFPRE, initial=[3]), 2000, make_stream(5))
    for name in ("upsilon", "theta_total", "censored", "max_population"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_mbpre_forbids_immigration():
    with pytest.raises(ConfigurationError):
        ProcessConfig(scalar_toy(), Mode.MBPRE)
    with pytest.raises(ConfigurationError):
        ProcessConfig(scalar_toy(immigration=False), Mode.MBPFPRE, initial="immigration")


def test_life_period_childless_bernoulli_immigrants():
    # offspring 0, one immigrant with probability 1/2: each generation after the
    # start ends the life period w.p. 1/2, so Upsilon is geometric and Theta = Upsilon
    env = env_of(PoissonOffspring([[0.0]], product=1.0), BernoulliImmigration(0.5, [1]))
    batch = simulate_life_periods(ProcessConfig(EnvironmentDistribution([env])), 200_000, make_stream(6))
    assert not batch.censored.any()
    assert np.array_equal(batch.theta_total, batch.upsilon.astype(float))
    assert abs(batch.upsilon.mean() - 2.0) < 5 * batch.upsilon.std() / np.sqrt(batch.upsilon.size)


def test_permanent_immigration_is_censored():
    # with an immigrant arriving every generation the population never empties
    env = env_of(PoissonOffspring([[0.0]], product=1.0), FixedImmigration([1]))
    cfg = ProcessConfig(EnvironmentDistribution([env]), generation_cap=50)
    rec = simulate_life_period(cfg, make_stream(0))
    assert rec.censored and rec.upsilon == 50


def test_life_period_requires_immigration():
    env = env_of(PoissonOffspring([[0.5]]))
    with pytest.raises(ConfigurationError):
        simulate_life_periods(ProcessConfig(EnvironmentDistribution([env])), 10, make_stream(0))


def test_scalar_and_batch_paths_agree():
    cfg = ProcessConfig(scalar_toy())
    rng = make_stream(7)
    single = [simulate_life_period(cfg, rng) for _ in range(3000)]
    batch = simulate_life_periods(cfg, 3000, make_stream(8))
    _, p_theta = ks_distance(np.array([r.theta_total for r in single]), batch.theta_total)
    _, p_ups = ks_distance(np.array([r.upsilon for r in single], float), batch.upsilon.astype(float))
    assert p_theta > 1e-3 and p_ups > 1e-3


def test_trace_is_monotone():
    rec = simulate_life_period(ProcessConfig(scalar_toy()), make_stream(9), trace=True)
    # one entry for the starting state plus one per generation
    assert rec.trace is not None and len(rec.trace) == rec.upsilon + 1
    increments = np.array([d for _, d in rec.trace])
    assert np.all(increments >= 0)
    assert increments.sum() == pytest.approx(rec.theta_total)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_theta_nondecreasing_and_records_consistent(seed):
    batch = simulate_life_periods(ProcessConfig(scalar_toy(), generation_cap=200), 50, make_stream(seed))
    assert np.all(batch.theta_total >= 0)
    done = ~batch.censored
    assert np.all(batch.upsilon[done] >= 1)
    assert np.all(batch.upsilon[batch.censored] == 200)
    assert np.all(batch.max_population >= 1)


def test_record_rows_and_concatenate():
    a = simulate_life_periods(ProcessConfig(scalar_toy()), 5, make_stream(1))
    b = simulate_life_periods(ProcessConfig(scalar_toy()), 3, make_stream(2))
    both = LifePeriodBatch.concatenate([a, b])
    rows = list(both.rows())
    assert len(rows) == 8 and rows[0][0] == 0 and rows[-1][0] == 7
    assert both.record(5).upsilon == b.record(0).upsilon


def test_mbpfpre_childless():
    env = env_of(PoissonOffspring(np.zeros((2, 2)), product=1.0))
    cfg = ProcessConfig(EnvironmentDistribution([env]), Mode.MBPFPRE, initial=[3, 0])
    assert simulate_mbpfpre_total(cfg, [3, 0], make_stream(0)) == (3.0, False)


def test_mbpfpre_immortal_line_censored():
    env = env_of(DegenerateOffspring([[1]], 1.0))
    cfg = ProcessConfig(EnvironmentDistribution([env]), Mode.MBPFPRE, initial=[1], generation_cap=100)
    phi, censored = simulate_mbpfpre_total(cfg, [1], make_stream(0))
    assert censored and phi == 100.0


def test_mbpfpre_rejects_zero_start():
    cfg = ProcessConfig(scalar_toy(immigration=False), Mode.MBPFPRE, initial=[1])
    with pytest.raises(ConfigurationError):
        simulate_mbpfpre_totals(cfg, [0], 10, make_stream(0))


def test_stationary_point_mass():
    env = env_of(PoissonOffspring([[0.0]]), FixedImmigration([1]))
    probe = stationary_distribution_probe(ProcessConfig(EnvironmentDistribution([env])), 10, 1000, make_stream(0))
    assert probe.law == {(1,): 1.0} and probe.p_zero == 0.0


def test_stationary_mass_at_zero():
    probe = stationary_distribution_probe(ProcessConfig(scalar_toy()), 1000, 20_000, make_stream(1))
    assert probe.p_zero > 0


def test_stationary_split_halves():
    env = env_of(PoissonOffspring([[0.5, 0.1], [0.2, 0.4]]), PoissonImmigration([0.6, 0.3]))
    cfg = ProcessConfig(EnvironmentDistribution([env]))
    probe = stationary_distribution_probe(cfg, 1000, 200_000, make_stream(2), spacing=2)
    half = probe.samples.shape[0] // 2
    tv = total_variation(empirical_law(probe.samples[:half]), empirical_law(probe.samples[half:]))
    assert tv < 0.02
