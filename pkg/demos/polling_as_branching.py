"""A polling system seen one cycle at a time is a branching process.

Customers at a station at the start of a cycle are the individuals; their
offspring are the customers present at the start of the next cycle.  The
mean matrices follow from the per-station laws, and the samplers agree.
"""
import numpy as np

from branchpoll.polling_map import (CycleLaw, ProductMode, sample_branching_immigration, sample_branching_offspring,
                                    station_mean_law)
from branchpoll.reference_models import two_station_cycles
from branchpoll.rng import make_stream

calm = two_station_cycles().params[0]
for discipline in ("gated", "exhaustive"):
    law = CycleLaw(calm, discipline, ProductMode.SERVICE_PLUS_SWITCHOVER)
    ms = law.means
    H = station_mean_law(calm, discipline, ProductMode.SERVICE_PLUS_SWITCHOVER).H
    print(f"\n{discipline}: per-station H\n{H}\nper-cycle A\n{ms.A}\nC = {ms.C}  B = {ms.B}  D = {ms.D:.4f}")
    rng = make_stream(3)
    children, phi = sample_branching_offspring(law, 0, rng, 200_000)
    eta, psi = sample_branching_immigration(law, rng, 200_000)
    print("sampled A[0] =", children.mean(axis=0).round(4), " C[0] =", phi.mean().round(4))
    print("sampled B    =", eta.mean(axis=0).round(4), " D    =", psi.mean().round(4))
