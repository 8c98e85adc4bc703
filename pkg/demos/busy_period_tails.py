"""Busy periods of a polling system in a random environment.

Arrival rates quadruple in one cycle out of five.  The busy period inherits a
power-law tail whose index matches the tail index of the associated branching
environment.
"""
from branchpoll.matrix_analysis import kappa, kappa_transfer
from branchpoll.polling_map import associated_environment
from branchpoll.polling_sim import run_coupled
from branchpoll.reference_models import two_station_cycles, two_station_polling
from branchpoll.rng import make_stream
from branchpoll.tail_stats import SampleSet, hill_estimator

env = associated_environment(two_station_cycles())
print("kappa (tilted MC):", round(kappa(env, n=50, replicates=50_000, rng=make_stream(1), method="tilted").kappa, 4))
print("kappa (transfer) :", round(kappa_transfer(env), 4))

std, gen = run_coupled(two_station_polling(), 200_000, make_stream(2))
for name, b in (("standard", std), ("generalized", gen)):
    fit = hill_estimator(SampleSet.from_records(b.theta_P, b.censored))
    print(f"{name:11s} busy period: mean {b.theta_P.mean():.3f}, Hill {fit.hill_index:.3f}, censored {b.censored.sum()}")
