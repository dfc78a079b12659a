"""Realise the average 0.2 of g = sin(y) from the atoms y = +-pi/2."""

import math

import numpy as np

from avgctl.average import build_schedule, realize_average
from avgctl.hull import ConvexCombination, VPolytope
from avgctl.model import Box, FastSystem, SlowDynamics

slow = SlowDynamics(("sin(y1)",), k=1, m=1, M_g=1.0, L_z=0.0, L_y=1.0,
                    u_box=Box([-1.0], [1.0]), y_box=Box([-math.pi / 2], [math.pi / 2]))
fast = FastSystem(1.0, [[0.0]], [[1.0]], [0.0])
U = np.zeros((2, 1))
Y = np.array([[math.pi / 2], [-math.pi / 2]])
P = VPolytope(np.zeros(1), U, Y, slow.batch(U, Y, np.zeros((2, 1))), {})
c = ConvexCombination(np.array([0, 1]), np.array([0.6, 0.4]))

for delta in (0.04, 0.01, 0.001):
    sched = build_schedule(c, P, [0.0], 1.0, delta, fast)
    res = realize_average(sched, fast, slow, [0.0], min(1e-3, delta / 10))
    moves = sched.move_measure().sum()
    print(f"delta={delta:<6} average={res.achieved_average[0]:.6f} error={res.error:.2e} "
          f"bound={res.bound:.2e} move time={moves:.4f} segments={len(sched.entries)}")
