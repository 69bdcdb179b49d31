"""Relaxation of one diagonal and the schedule built from it.

Run with ``python demos/03_single_diagonal_and_schedule.py``.
"""
import numpy as np

from kcm import experiments
from kcm.lattice import Model

model = Model.build(2, 3, 0.3)

# %% Levels below i start at equilibrium, level i starts at all ones.
for i in (2, 3, 4, 5):
    rep = experiments.diagonal_decay_study(model, i, np.linspace(0, 20, 41))
    f = rep.fits
    print(f"i={i}: TV(0)={rep.points[0]['tv']:.4f} TV(20)={rep.points[-1]['tv']:.2e} "
          f"fitted rate={f['decay_rate']:.4f} c0={f['c0']:.5f} dominated={f['dominated_by_2_i^d']}")

# %% Chaining the diagonals: t_i = t_{i-1} + ln(i^3/eps)/c.
# The total grows like n log n.
print("\nschedule with eps=0.25, c=1")
for n in (2, 8, 64, 512, 4096):
    s = experiments.mixing_schedule(n, 0.25, 1.0)
    print(f"  n={n:5d}: t_(2n-1)={s.final_time:10.2f}  / (n ln n)={s.final_time / (n * np.log(n)):.3f}"
          f"  integral bound={s.integral_bound:10.2f}  error budget={s.budgets[-1]:.4f}")
