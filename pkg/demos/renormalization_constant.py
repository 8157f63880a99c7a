#!/usr/bin/env python3
# The renormalization constant grows linearly in the cutoff, and
# subtracting it centers the square exactly.

from parawave.moments import mc_wick_spatial_mean
from parawave.objects import sigma_renorm

# sigma(N, t)/N should flatten out as N grows (the t*N/2 asymptotics,
# off by the usual lattice-sum corrections at small N).
print("    N   sigma(N,1)/N   change")
prev = None
for N in (8, 16, 32, 64, 128):
    ratio = sigma_renorm(N, 1.0) / N
    note = "" if prev is None else f"{abs(ratio - prev) / prev:8.2%}"
    print(f"  {N:3d}   {ratio:.8f}   {note}")
    prev = ratio

# The renormalized square has spatial mean zero in expectation.  The
# estimator subtracts sigma from the raw mean square of the modes, so
# the residual is pure sampling noise.
mean, stderr = mc_wick_spatial_mean(16, 1.0, 2000, seed=2)
print(f"\nwick square spatial mean: {mean:+.4e} +/- {stderr:.4e}"
      f"  ({abs(mean) / stderr:.2f} stderr from zero)")
assert abs(mean) < 5 * stderr
