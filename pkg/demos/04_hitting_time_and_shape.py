"""Monte Carlo: the far-corner hitting time and the region of flipped sites.

Run with ``python demos/04_hitting_time_and_shape.py`` (about a minute on one core).
"""
import numpy as np

from kcm import experiments
from kcm.dynamics import RandomnessStream, influence_region
from kcm.lattice import Model

# %% tau*: first time the corner (n, n) holds a 0, starting from all ones.
# Information has to travel diagonally through the box, so E[tau*] grows
# linearly in n.
rep = experiments.tau_star_scaling(lambda n: Model.build(2, n, 0.3), [4, 8, 16, 32], 300, seed=1)
for pt in rep.points:
    print(f"n={pt['n']:3d}  E[tau*]={pt['mean_tau']:8.2f} +- {pt['sem']:.2f}   "
          f"P(tau* >= n/2)={pt['p_tau_ge_half_n']:.3f}")
print(f"linear fit: slope={rep.fits['slope']:.2f} R^2={rep.fits['r2']:.4f}")

# %% R_t: sites that have changed value at least once by time t.
model = Model.build(2, 40, 0.3)
inf = influence_region(model, RandomnessStream(3), 40.0, snapshots=(10.0, 20.0, 40.0))
for t, mask in inf.snapshots.items():
    print(f"\nR_{t:g} ({mask.sum()} sites), x1 downwards, x2 to the right:")
    for row in mask[:24:2, :40:1]:
        print("  " + "".join("#" if v else "." for v in row))

# %% Several replicas, scaled by 1/t.
shape = experiments.shape_study(Model.build(2, 64, 0.3), [16.0, 32.0], 10, seed=2, resamples=200)
for pt in shape.points:
    print(f"\nHausdorff(R_{pt['t_a']:g}/{pt['t_a']:g}, R_{pt['t_b']:g}/{pt['t_b']:g}) = "
          f"{pt['mean_hausdorff']:.3f}  95% CI [{pt['ci_low']:.3f}, {pt['ci_high']:.3f}]")
