"""Steer a double integrator from rest at 0 to rest at 1 and check the endpoint."""

import numpy as np

from avgctl.linops import gramian
from avgctl.steer import steer_and_check, steering_gain

A = np.array([[0.0, 1.0], [0.0, 0.0]])
B = np.array([[0.0], [1.0]])

for tau in (2.0, 0.5, 0.1):
    seg = steering_gain(A, B, [0.0, 0.0], [1.0, 0.0], tau)
    miss = steer_and_check(A, B, seg, tau / 5000)
    peak = max(abs(seg.control(s)[0]) for s in np.linspace(0.0, tau, 101))
    print(f"tau={tau:<4} cond(W)={gramian(A, B, tau).cond_estimate:9.3g} peak |u|={peak:9.4g} miss={miss:.2e}")
# shorter windows cost more control: peak |u| grows like tau^-2
