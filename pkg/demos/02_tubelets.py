"""A single space-time tubelet: exact Poisson sums against the rate function.

Inside one block and one window the plus and minus flips are Poisson.  The
probability that their difference lands in a small window is summed exactly
and compared with exp(-n dt f); the move-away map shows how paths touching
+-1 are pushed into the safe set at a bounded cost.
"""
import numpy as np

from kacldp import CoarseGeometry, DiscretizedPath, LatticeGeometry, default_kernel, move_away
from kacldp.tubelet import PoissonRatePair, deterministic_rates, rate_function, tube_event_prob_exact

J = default_kernel()
d, delta = 0.1, 0.03
f = rate_function(d, 0.25, 0.25)
print(f"f(d={d}) = {f:.6f}")
for n in (50, 200, 800, 3200):
    lp = tube_event_prob_exact(PoissonRatePair(0.25, 0.25, n, 1.0), d, delta, log=True)
    print(f"n = {n:5d}: (1/n) ln P = {lp / n:+.6f}, gap to -f = {abs(lp / n + f):.2e}")

co = CoarseGeometry(LatticeGeometry.line(0.05, 20), 1.0)
D = 0.1
for label, vals in (("enter", [0.6, 1.0]), ("leave", [1.0, 0.6]), ("stay", [1.0, 1.0])):
    a = DiscretizedPath(np.array(vals)[:, None], 0.5, D, co)
    mv = move_away(a, D, 2.0, J)
    lp = [tube_event_prob_exact(deterministic_rates(p, 0, 1, J, 2.0), p.slopes[0, 0], D / 2, log=True)
          for p in (a, mv.path)]
    print(f"{label}: {vals} -> {mv.path.values[:, 0].round(3).tolist()}, "
          f"log ratio {lp[0] - lp[1]:+.3f} <= M = {mv.exponents[0, 0]:.3f}")
