#!/usr/bin/env python3
# Solve the renormalized equation two ways on a small lattice and watch
# the paths agree as the step shrinks.

from parawave.noise import NoiseSeed
from parawave.objects import TimeGrid, build_stochastic_inputs
from parawave.solver import SolverConfig, reconstruct_solution, solve_direct, solve_system
from parawave.spectral import FieldPair, FrequencyLattice, SpectralField, sobolev_norm

import numpy as np

N, M, T = 4, 8, 0.25
seed = NoiseSeed(11)


def zero_pair(lat):
    z = SpectralField(lat, lat.zeros(), real=True)
    return FieldPair(z, z)


# Path one: the paracontrolled system.  Sample the enhanced data once,
# run the fixed point, and assemble u = conv - integral + X + Y.
# Path two: step the equation for u directly from the same noise.
print("   h      picard its   final increment   relative gap at T")
for steps in (8, 16, 32):
    h = T / steps
    cfg = SolverConfig(T=T, h=h, N=N, M=M)
    lat = FrequencyLattice(M)
    grid = TimeGrid(h, steps)
    inputs = build_stochastic_inputs(seed, lat, N, grid,
                                     zero_pair(lat), zero_pair(lat))
    sol = solve_system(inputs, cfg)
    u_sys = reconstruct_solution(inputs.conv, inputs.wick_integral,
                                 sol.X, sol.Y)
    u_dir = solve_direct(seed, cfg)

    diff = u_sys.values[-1] - u_dir.values[-1]
    gap = sobolev_norm(diff, 0.0) / sobolev_norm(u_dir.values[-1], 0.0)
    print(f"  1/{steps:<4d}  {sol.iterations:6d}       "
          f"{sol.final_increment:.3e}         {gap:.3e}")

# The gap is pure time-discretization error: both paths share the exact
# Brownian increments, so it vanishes as h -> 0 even sample by sample.
