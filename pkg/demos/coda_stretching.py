"""
Measuring velocity changes in a coda
====================================

A small relative velocity change dv/v stretches the late part of a
scattered wave. The stretching technique searches for the stretch factor
that best realigns a perturbed coda with its reference.
"""
import numpy as np

from codaadapt.signal_processing import cross_correlation, stretch_dvv, two_point_stats

# a synthetic coda: a few damped modes with random phases
rng = np.random.default_rng(0)
t = np.arange(2000)
ref = np.zeros(t.size)
for _ in range(8):
    f = rng.uniform(0.01, 0.04)
    ref += rng.normal() * np.exp(-t / rng.uniform(600, 1500)) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))

# stretch the time axis by 1%: the medium got 1% slower
alpha0 = 0.01
perturbed = np.interp(t / (1 + alpha0), t, ref)
print("correlation before realignment:", round(cross_correlation(ref, perturbed, (200, 1800)), 4))

res = stretch_dvv(ref, perturbed, window=(200, 1800))
print(f"recovered dv/v = {res.dvv_percent:+.3f} %  (grid spacing {100 * res.alpha_grid_spacing:.3f} %)")
print("correlation at best stretch:", round(res.cc_at_best, 4))

# the sign of the stretch follows the sign of the velocity change
for a in (-0.02, -0.005, 0.005, 0.02):
    r = stretch_dvv(ref, np.interp(t / (1 + a), t, ref), window=(200, 1800))
    print(f"true {100 * a:+.2f} %   measured {r.dvv_percent:+.2f} %")

# two-point statistics are the features fed to the network: lag-averaged
# products of the reference and perturbed waveforms
tp = two_point_stats(ref / np.abs(ref).max(), perturbed / np.abs(perturbed).max(), max_lag=31)
print("two-point vector length:", tp.values.size, "value at lag 0:", round(tp.at(0), 4))
