"""The generalized busy period and the branching life period have one law.

Simulate both sides independently and compare them with a two-sample KS test.
"""
from branchpoll.branching_core import Mode, ProcessConfig, simulate_life_periods
from branchpoll.polling_map import ProductMode, associated_environment
from branchpoll.polling_sim import run_generalized_busy_periods
from branchpoll.reference_models import two_station_polling
from branchpoll.rng import make_stream
from branchpoll.tail_stats import ks_distance

polling = two_station_polling(mode=ProductMode.SERVICE_PLUS_SWITCHOVER)
env = associated_environment(polling.cycles, polling.disciplines, polling.product_mode)
branching = ProcessConfig(env, Mode.MBPIFPRE, initial=[1, 0])

a = run_generalized_busy_periods(polling, 50_000, make_stream(10))
b = simulate_life_periods(branching, 50_000, make_stream(11))
print("mean duration  polling %.4f  branching %.4f" % (a.theta_P.mean(), b.theta_total.mean()))
print("KS on durations: D=%.4f p=%.3f" % ks_distance(a.theta_P, b.theta_total))
print("KS on cycles vs generations: D=%.4f p=%.3f" % ks_distance(a.n_cycles.astype(float), b.upsilon.astype(float)))
