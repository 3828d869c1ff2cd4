"""Recover the hard double-obstacle constraint from its Yosida approximations.

With the obstacle graph the regularised solutions may leave [-1, 1]; the
overshoot is proportional to the Yosida parameter eps and vanishes in the
limit. Neighbouring runs get closer as eps shrinks. The linear graph shows
the clean first-order dependence on eps. Run with ``python demos/obstacle_limit.py``.
"""

import math

from chdbc import MonotoneGraph, PotentialPair, SlabGrid, catalog
from chdbc.experiments import epsilon_sweep, fourier_mode
from chdbc.stepper import RunConfig

eps = [1e-1, 1e-2, 1e-3, 1e-4]

grid = SlabGrid(32, 32, 2 * math.pi, 2 * math.pi)
obs = epsilon_sweep(RunConfig(grid, catalog()["obstacle"], fourier_mode(grid, 0.9), dt=1e-2, t_end=1.0), eps)
print("double obstacle")
for e, v, d in zip(obs.params, obs.obstacle_violation, obs.d_pairwise):
    print(f"  eps={e:<7g} max(|u|-1, 0)={v:.3e}  |u_eps - u_next|_C(H)={d:.3e}")

sq = SlabGrid(32, 32)
lin = PotentialPair(MonotoneGraph.linear(1.0), MonotoneGraph.linear(1.0))
res = epsilon_sweep(RunConfig(sq, lin, fourier_mode(sq, 0.5), dt=1e-2, t_end=0.5), eps)
print(f"linear graph: slope of the pairwise differences in eps = {res.rate_fit:.3f}")
