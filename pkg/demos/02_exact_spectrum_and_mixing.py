"""Exact analysis of small boxes: spectral gap, mixing time, killed semigroup.

Run with ``python demos/02_exact_spectrum_and_mixing.py`` (about half a minute).
"""
import math

from kcm import exact
from kcm.lattice import Model

# %% Spectral gap of -L for growing boxes.
print("spectral gap, p = 0.3")
for d, n in [(1, 1), (2, 2), (2, 3), (3, 2), (2, 4)]:
    for family in ("northeast", "maximal"):
        m = Model.build(d, n, 0.3, family)
        res = exact.spectral_gap(exact.build_generator(m))
        print(f"  d={d} n={n} {family:9s} gap={res.gap:.6f}  ({res.method}, residual {res.residual:.1e})")

# %% Mixing times.  The single site relaxes at rate 1 from the worse state,
# so T_mix = ln(0.7 / 0.25) = ln 2.8.
one = Model.build(1, 1, 0.3)
print("\nsingle site T_mix =", round(exact.mixing_time_exact(one).time, 5), " ln 2.8 =", round(math.log(2.8), 5))
for n in (2, 3):
    m = Model.build(2, n, 0.3)
    tv = exact.mixing_time_exact(m)
    chi = exact.mixing_time_exact(m, mode="chi2")
    print(f"d=2 n={n}: T_mix={tv.time:.4f}  T_2={chi.time:.4f}")

# %% Killing the process when the far corner is unconstrained.
# beta is the top of the spectrum of L - c_y; the analytic rate c0 is a
# much smaller but uniform lower bound on -beta.
for n in (2, 3):
    m = Model.build(2, n, 0.3)
    fk = exact.feynman_kac_beta(m, (n, n))
    print(f"\nn={n}: beta={fk.beta:.6f}  -c0={-fk.c0:.6f}  delta={fk.delta:.6f}")
    for t, val, bound in fk.checks:
        print(f"  t={t:4.1f}  E_pi[exp(-|G|)]={val:.6f} <= exp(t beta)={bound:.6f}")

# %% Log-Sobolev test function: the indicator of all ones.
print("\nlog-Sobolev upper bound times n^2 (maximal family):")
for n in (2, 3, 4):
    val = exact.lsi_upper_bound(Model.build(2, n, 0.3, "maximal"))
    print(f"  n={n}: {val * n * n:.6f}")
