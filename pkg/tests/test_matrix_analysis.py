import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchpoll.env_model import (DegenerateOffspring, EnvironmentDistribution, EnvironmentSample, NoImmigration,
                                  PoissonOffspring)
from branchpoll.matrix_analysis import (classify, kappa, kappa_transfer, kesten_check, log_product_norm,
                                        lyapunov_exponent, s_of_x, s_of_x_transfer, spectral_radius, sum_norm,
                                        xi_series, xi_series_batch)
from branchpoll.reference_models import SCALAR_TOY_ALPHA, SCALAR_TOY_KAPPA, scalar_toy
from branchpoll.rng import make_stream
from branchpoll.tail_stats import hill_estimator


def deterministic(A, product=None):
    return EnvironmentDistribution.single(PoissonOffspring(np.atleast_2d(A), product=product))


def mixture(mats, weights):
    atoms = [EnvironmentSample(PoissonOffspring(np.atleast_2d(A)), NoImmigration(np.atleast_2d(A).shape[0]))
             for A in mats]
    return EnvironmentDistribution(atoms, weights)


def two_type_mixture():
    return mixture([[[0.3, 0.2], [0.1, 0.4]], [[1.4, 0.5], [0.6, 0.9]]], [0.7, 0.3])


@pytest.mark.parametrize("A,expected", [(np.eye(2), 1.0), (np.diag([2.0, 3.0]), 3.0),
                                        (np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0),
                                        (np.array([[0.5, 0.5], [0.2, 0.8]]), 1.0)])
def test_spectral_radius(A, expected):
    assert spectral_radius(A) == pytest.approx(expected, abs=1e-9)


@given(st.lists(st.floats(0, 5), min_size=9, max_size=9))
@settings(max_examples=50, deadline=None)
def test_spectral_radius_matches_eigvals(entries):
    A = np.array(entries).reshape(3, 3)
    assert spectral_radius(A) == pytest.approx(max(abs(np.linalg.eigvals(A))), rel=1e-6, abs=1e-8)


def test_sum_norm():
    assert sum_norm(np.array([[1.0, -2.0], [0.5, 0.0]])) == 3.5


def test_alpha_scaled_identity():
    c = 1.3
    est = lyapunov_exponent(deterministic(c * np.eye(2)), n=100, replicates=5, rng=make_stream(0))
    assert abs(est.alpha - math.log(c)) <= math.log(2) / 100 + 1e-12


def test_alpha_scalar_toy_closed_form():
    est = lyapunov_exponent(scalar_toy(), rng=make_stream(0))
    assert est.exact and est.alpha == pytest.approx(SCALAR_TOY_ALPHA, abs=1e-12)


def test_alpha_permutation_environment():
    est = lyapunov_exponent(deterministic([[0.0, 1.0], [1.0, 0.0]]), n=500, replicates=5, rng=make_stream(0))
    assert abs(est.alpha) <= math.log(2) / 500 + 1e-12


def test_alpha_zero_product_reported():
    dist = mixture([[[0.0]], [[2.0]]], [0.5, 0.5])
    est = lyapunov_exponent(dist, n=20, replicates=1000, rng=make_stream(1), closed_form=False)
    assert est.n_zero > 0 and est.alpha == -math.inf


def test_renormalized_product_agrees():
    rng = np.random.default_rng(5)
    for _ in range(20):
        mats = rng.uniform(0, 2, (12, 3, 3))
        direct = math.log(sum_norm(np.linalg.multi_dot(list(mats))))
        assert log_product_norm(mats, renormalize=True) == pytest.approx(direct, abs=1e-8)
        assert log_product_norm(mats, renormalize=False) == pytest.approx(direct, abs=1e-8)


def test_s_at_zero_is_one():
    for method in ("plain", "tilted"):
        assert s_of_x(two_type_mixture(), 0.0, n=10, replicates=100, rng=make_stream(0), method=method).s_hat == 1.0
    assert s_of_x(scalar_toy(), 0.0).s_hat == 1.0


def test_s_scalar_closed_form():
    est = s_of_x(scalar_toy(), 1.0)
    assert est.method == "closed" and est.s_hat == pytest.approx(1.1, abs=1e-15)


def test_s_scaled_identity():
    c, x = 0.8, 0.5
    est = s_of_x(deterministic(c * np.eye(2)), x, n=int(100 * x * math.log(2)) + 1, replicates=10,
                 rng=make_stream(0), method="plain")
    assert abs(est.s_hat / c**x - 1) < 0.01


def test_s_log_convex_closed_form():
    dist = scalar_toy()
    xs = np.linspace(0, 3, 13)
    logs = np.log([s_of_x(dist, x).s_hat for x in xs])
    assert np.all(logs[1:-1] <= 0.5 * (logs[:-2] + logs[2:]) + 1e-12)


def test_s_monte_carlo_log_convex_within_ci():
    dist = two_type_mixture()
    ests = [s_of_x(dist, x, n=30, replicates=20_000, rng=make_stream(3, 0)) for x in (0.5, 1.0, 1.5)]
    mid = math.log(ests[1].ci[0])
    assert mid <= 0.5 * (math.log(ests[0].ci[1]) + math.log(ests[2].ci[1]))


def test_tilted_and_transfer_agree():
    dist = two_type_mixture()
    for x in (0.5, 1.0, 2.0):
        mc = s_of_x(dist, x, n=50, replicates=50_000, rng=make_stream(4, 0), method="tilted")
        assert mc.s_hat == pytest.approx(s_of_x_transfer(dist, x), rel=0.01)


def test_alpha_is_slope_of_log_s_at_zero():
    dist = two_type_mixture()
    ly = lyapunov_exponent(dist, n=200, replicates=2000, rng=make_stream(5))
    h = 1e-3
    slope = math.log(s_of_x_transfer(dist, h, grid=2001)) / h
    assert abs(slope - ly.alpha) < 3 * (ly.ci[1] - ly.ci[0]) / 2 + 0.01


def test_kappa_scalar_toy():
    est = kappa(scalar_toy())
    assert est.status == "ok" and est.kappa == pytest.approx(SCALAR_TOY_KAPPA, abs=1e-4)


def test_kappa_infinite_when_contracting():
    est = kappa(deterministic(0.7 * np.eye(2)), n=20, replicates=100, rng=make_stream(0))
    assert est.infinite and est.kappa == math.inf


def test_kappa_zero_when_supercritical():
    est = kappa(deterministic(2 * np.eye(2)), rng=make_stream(0), alpha=math.log(2))
    assert est.status == "zero" and est.kappa == 0.0


@pytest.mark.parametrize("factor", [1.05, 1.2, 1.5])
def test_kappa_decreases_when_atoms_scaled(factor):
    base = kappa(scalar_toy()).kappa
    scaled = mixture([[[0.5 * factor]], [[2.0 * factor]]], [0.6, 0.4])
    assert kappa(scaled).kappa < base


def test_kappa_monte_carlo_matches_transfer():
    dist = two_type_mixture()
    mc = kappa(dist, n=50, replicates=50_000, rng=make_stream(6), method="tilted")
    assert mc.kappa == pytest.approx(kappa_transfer(dist), rel=0.02)


def test_xi_zero_product():
    est = xi_series(deterministic([[0.5]], product=0.0), rng=make_stream(0))
    assert np.all(est.xi == 0) and est.converged


def test_xi_geometric_series():
    est = xi_series(deterministic([[0.5]], product=1.0), tol=1e-12, rng=make_stream(0))
    assert est.xi[0] == pytest.approx(2.0, abs=1e-10) and est.residual_bound < 1e-12


def test_xi_tail_index_scalar_toy():
    atoms = [EnvironmentSample(PoissonOffspring([[a]], product=1.0), NoImmigration(1)) for a in (0.5, 2.0)]
    dist = EnvironmentDistribution(atoms, [0.6, 0.4])
    xi, _, _, converged = xi_series_batch(dist, 1_000_000, rng=make_stream(7))
    assert converged.all()
    fit = hill_estimator(xi.sum(axis=1))
    assert abs(fit.hill_index - SCALAR_TOY_KAPPA) / SCALAR_TOY_KAPPA <= 0.15


def test_kesten_positive_matrix():
    rep = kesten_check(deterministic([[1.0, 0.5], [0.5, 1.0]]), 1.0, n_samples=1000, rng=make_stream(0))
    assert rep.no_zero_rows


def test_kesten_zero_row_reported():
    dist = mixture([[[1.0, 0.5], [0.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]]], [0.5, 0.5])
    rep = kesten_check(dist, 1.0, n_samples=1000, rng=make_stream(0))
    assert not rep.no_zero_rows and rep.zero_row_atoms == [0]
    assert any("FAIL" in line for line in rep.lines())


def test_kesten_scalar_min_row_condition():
    rep = kesten_check(scalar_toy(), 1.0, n_samples=10_000, rng=make_stream(0))
    assert rep.min_row_moment == pytest.approx(1.1) and rep.min_row_threshold == 1.0 and rep.min_row_pass


def test_classify_scalar_toy():
    rep = classify(scalar_toy(), rng=make_stream(0))
    assert rep.classification == "subcritical" and rep.kappa == pytest.approx(SCALAR_TOY_KAPPA, abs=1e-3)
    assert rep.s_curve[0].x == 0 and rep.s_curve[0].s_hat == 1.0


def test_classify_deterministic():
    sup = classify(deterministic(2 * np.eye(2)), n=200, replicates=20, rng=make_stream(0), kappa_replicates=100)
    assert sup.classification == "supercritical" and sup.kappa == 0.0
    ind = classify(deterministic(np.eye(2)), n=200, replicates=20, rng=make_stream(0), kappa_replicates=100)
    assert ind.classification == "indeterminate"


def test_classification_consistent_with_ci():
    rep = classify(two_type_mixture(), n=200, replicates=500, rng=make_stream(1), kappa_replicates=5000)
    if rep.classification == "subcritical":
        assert rep.alpha_ci[1] < 0
    elif rep.classification == "supercritical":
        assert rep.alpha_ci[0] > 0


def test_degenerate_environment_runs():
    dist = EnvironmentDistribution.single(DegenerateOffspring([[0, 1], [1, 0]]))
    assert lyapunov_exponent(dist, n=50, replicates=3, rng=make_stream(0)).alpha == pytest.approx(0, abs=0.02)
