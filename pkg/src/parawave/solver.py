"""Solvers for the renormalized quadratic wave dynamics.

Two independent computation paths produce the same field:

* ``solve_system`` runs a Picard fixed-point iteration for the
  paracontrolled pair (X, Y), consuming the precomputed stochastic inputs;
  ``reconstruct_solution`` then assembles u = conv - wick_integral + X + Y.
* ``solve_direct`` steps the renormalized equation for u itself, drawing
  the identical noise increments from the shared counter-based streams.

The direct path integrates its forcing with the plain trapezoid rule while
the system path uses the filtered (kernel-exact) rule, so the gap between
the two paths is an honest O(h^2) discretization diagnostic rather than an
identity by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import paraproduct_split, resonant_product, windowed_lo_product
from .noise import NoiseSeed, _draw_mode_integrals, mode_set, step_cholesky
from .objects import (
    StochasticInputs,
    TimeGrid,
    TrajectoryField,
    _rotation_cubes,
    _window_lower,
    _window_upper,
    duhamel_integrate,
    free_evolution,
    sigma_renorm,
)
from .spectral import FieldPair, FrequencyLattice, SpectralField, dealiased_product, sobolev_norm

__all__ = [
    "SolverConfig",
    "SolutionNorms",
    "SystemSolution",
    "PicardDivergenceError",
    "free_propagator",
    "picard_map",
    "solve_system",
    "solve_direct",
    "reconstruct_solution",
]

# the propagator is shared with the stochastic-objects layer
free_propagator = free_evolution


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and iteration parameters of one solve.

    The regularity exponents (s1, s2) weigh the stopping norm and the
    reported diagnostics; they must satisfy 1/4 < s1 < 1/2 < s2 <= s1 + 1/4.
    """

    T: float
    h: float
    N: int
    M: int
    picard_tol: float = 1e-8
    picard_max: int = 50
    theta: float = 0.1
    c0: float = 0.0
    s1: float = 0.3
    s2: float = 0.55

    def __post_init__(self):
        if not 0 < self.h <= self.T:
            raise ValueError("need 0 < h <= T")
        steps = round(self.T / self.h)
        if steps < 1 or abs(steps * self.h - self.T) > 1e-9 * self.T:
            raise ValueError(f"step h={self.h} does not divide T={self.T}")
        if self.N > self.M:
            raise ValueError("noise cutoff N must not exceed the lattice cube M")
        if self.picard_tol <= 0 or self.picard_max < 1:
            raise ValueError("iteration controls must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("window slope theta must lie in (0, 1)")
        if not (0.25 < self.s1 < 0.5 < self.s2 <= self.s1 + 0.25):
            raise ValueError(
                "regularity pair outside the admissible window "
                "1/4 < s1 < 1/2 < s2 <= s1 + 1/4"
            )

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.h, round(self.T / self.h))


@dataclass(frozen=True)
class SolutionNorms:
    """Sup-in-time energy diagnostics of the converged pair."""

    x_value: float
    x_deriv: float
    y_value: float
    y_deriv: float
    s1: float
    s2: float


@dataclass
class SystemSolution:
    X: TrajectoryField
    Y: TrajectoryField
    iterations: int
    final_increment: float
    increments: tuple[float, ...]
    norms: SolutionNorms


class PicardDivergenceError(RuntimeError):
    """Fixed-point iteration failed to contract; carries the increment
    history so the caller can decide how far to shorten the horizon."""

    def __init__(self, increments: tuple[float, ...]):
        super().__init__(
            f"no contraction after {len(increments)} iterations "
            f"(last increment {increments[-1]:.3e}); retry on a shorter horizon"
        )
        self.increments = increments


def _free_trajectory(data: FieldPair, grid: TimeGrid) -> TrajectoryField:
    values, derivs = [], []
    for t in grid.times:
        pair = free_evolution(data, float(t))
        values.append(pair.u)
        derivs.append(pair.v)
    return TrajectoryField(grid, values, derivs)


def picard_map(
    X: TrajectoryField, Y: TrajectoryField, inputs: StochasticInputs, cfg: SolverConfig
) -> tuple[TrajectoryField, TrajectoryField]:
    """One application of the paracontrolled fixed-point map.

    With v = X + Y - wick_integral and conv the stochastic convolution:
    the new X is the free evolution of the rough data minus 2 I[v lo conv];
    the new Y is the free evolution of the smooth data minus
    I[v^2 + 2 (v hi conv) + 2 res(Y, conv) - 2 wick_resonant + 2 free_resonant
      - 4 res(I_upper[v], conv) - 4 res(I_lower[v], conv)],
    where the near-diagonal part of X * conv has been replaced by its
    paracontrolled expansion through the windowed integral operators.
    """
    grid = inputs.grid
    conv = inputs.conv
    up_bounds = _window_upper(cfg.theta, cfg.c0)
    lo_bounds = _window_lower(cfg.theta, cfg.c0)

    v_vals = [
        X.values[i] + Y.values[i] - inputs.wick_integral.values[i] for i in range(len(conv))
    ]
    lo_f, hi_f, up_f, low_f, sq_f, res_y = [], [], [], [], [], []
    for i in range(len(conv)):
        p = conv.values[i]
        lo, _, hi = paraproduct_split(v_vals[i], p)
        lo_f.append(lo)
        hi_f.append(hi)
        up_f.append(windowed_lo_product(v_vals[i], p, up_bounds))
        low_f.append(windowed_lo_product(v_vals[i], p, lo_bounds))
        sq_f.append(dealiased_product(v_vals[i], v_vals[i]))
        res_y.append(resonant_product(Y.values[i], p))

    up_int = duhamel_integrate(TrajectoryField(grid, up_f))
    low_int = duhamel_integrate(TrajectoryField(grid, low_f))

    forcing_y = []
    for i in range(len(conv)):
        p = conv.values[i]
        f = (
            sq_f[i]
            + 2.0 * hi_f[i]
            + 2.0 * res_y[i]
            - 2.0 * inputs.wick_resonant.values[i]
            + 2.0 * inputs.free_resonant.values[i]
            - 4.0 * resonant_product(up_int.values[i], p)
            - 4.0 * resonant_product(low_int.values[i], p)
        )
        forcing_y.append(f)

    x_int = duhamel_integrate(TrajectoryField(grid, lo_f))
    y_int = duhamel_integrate(TrajectoryField(grid, forcing_y))

    sx = _free_trajectory(inputs.rough_data, grid)
    sy = _free_trajectory(inputs.smooth_data, grid)
    new_x = TrajectoryField(
        grid,
        [sx.values[i] - 2.0 * x_int.values[i] for i in range(len(conv))],
        [sx.derivs[i] - 2.0 * x_int.derivs[i] for i in range(len(conv))],
    )
    new_y = TrajectoryField(
        grid,
        [sy.values[i] - y_int.values[i] for i in range(len(conv))],
        [sy.derivs[i] - y_int.derivs[i] for i in range(len(conv))],
    )
    return new_x, new_y


def _pair_increment(
    ax: TrajectoryField, ay: TrajectoryField, bx: TrajectoryField, by: TrajectoryField,
    s1: float, s2: float,
) -> float:
    worst = 0.0
    for i in range(len(ax)):
        dx = sobolev_norm(ax.values[i] - bx.values[i], s1)
        dy = sobolev_norm(ay.values[i] - by.values[i], s2)
        # nan (inf - inf on a blown-up iterate) must count as divergence,
        # not drop out of the max
        if not np.isfinite(dx + dy):
            return float("inf")
        worst = max(worst, dx + dy)
    return worst


def _pair_scale(X: TrajectoryField, Y: TrajectoryField, s1: float, s2: float) -> float:
    return max(
        max(sobolev_norm(f, s1) for f in X.values)
        + max(sobolev_norm(f, s2) for f in Y.values),
        1e-30,
    )


def solve_system(inputs: StochasticInputs, cfg: SolverConfig) -> SystemSolution:
    """Picard iteration for the paracontrolled pair on [0, T].

    Starts from the free evolutions of the two data pairs and iterates
    ``picard_map`` until the relative sup-node increment in H^{s1} x H^{s2}
    falls below picard_tol.  Raises PicardDivergenceError when picard_max
    iterations do not reach the tolerance; the caller is expected to halve
    T and retry (local-in-time existence).
    """
    grid = inputs.grid
    if grid != cfg.grid:
        raise ValueError("stochastic inputs were sampled on a different grid")
    if inputs.lattice.M != cfg.M:
        raise ValueError("stochastic inputs live on a different lattice")
    if inputs.cutoff != cfg.N:
        raise ValueError("stochastic inputs carry a different noise cutoff")

    X = _free_trajectory(inputs.rough_data, grid)
    Y = _free_trajectory(inputs.smooth_data, grid)
    history: list[float] = []
    for it in range(1, cfg.picard_max + 1):
        new_x, new_y = picard_map(X, Y, inputs, cfg)
        inc = _pair_increment(new_x, new_y, X, Y, cfg.s1, cfg.s2)
        if not np.isfinite(inc):
            history.append(float("inf"))
            raise PicardDivergenceError(tuple(history))
        rel = inc / _pair_scale(new_x, new_y, cfg.s1, cfg.s2)
        history.append(rel)
        X, Y = new_x, new_y
        if rel < cfg.picard_tol:
            norms = SolutionNorms(
                x_value=max(sobolev_norm(f, cfg.s1) for f in X.values),
                x_deriv=max(sobolev_norm(f, cfg.s1 - 1.0) for f in X.derivs),
                y_value=max(sobolev_norm(f, cfg.s2) for f in Y.values),
                y_deriv=max(sobolev_norm(f, cfg.s2 - 1.0) for f in Y.derivs),
                s1=cfg.s1,
                s2=cfg.s2,
            )
            return SystemSolution(
                X=X,
                Y=Y,
                iterations=it,
                final_increment=rel,
                increments=tuple(history),
                norms=norms,
            )
    raise PicardDivergenceError(tuple(history))


def reconstruct_solution(
    conv: TrajectoryField,
    wick_integral: TrajectoryField,
    X: TrajectoryField,
    Y: TrajectoryField,
) -> TrajectoryField:
    """Assemble the solution field conv - wick_integral + X + Y node-wise."""
    grid = conv.grid
    for other in (wick_integral, X, Y):
        if other.grid != grid:
            raise ValueError("decomposition pieces live on different grids")
    values = [
        conv.values[i] - wick_integral.values[i] + X.values[i] + Y.values[i]
        for i in range(len(conv))
    ]
    derivs = None
    if all(t.has_deriv for t in (conv, wick_integral, X, Y)):
        derivs = [
            conv.derivs[i] - wick_integral.derivs[i] + X.derivs[i] + Y.derivs[i]
            for i in range(len(conv))
        ]
    return TrajectoryField(grid, values, derivs)


def solve_direct(
    seed: NoiseSeed | None,
    cfg: SolverConfig,
    data: FieldPair | None = None,
    include_sigma: bool = True,
) -> TrajectoryField:
    """Step the renormalized equation for u itself.

    Exact mode rotation per step, plain trapezoid quadrature of the
    nonlinear forcing -u^2 + sigma(t), and the exact Brownian step
    integrals added to the modes below the cutoff.  ``seed=None`` turns
    the noise off; the streams otherwise coincide with the ones behind
    the sampled convolution, so both paths see the same randomness.
    """
    lat = FrequencyLattice(cfg.M)
    grid = cfg.grid
    if data is None:
        u = lat.zeros(np.complex128)
        v = lat.zeros(np.complex128)
        real = True
    else:
        if data.lattice.M != cfg.M:
            raise ValueError("initial data lives on a different lattice")
        # re-home the data on the product-padded lattice used for stepping
        u = data.u.coeffs.astype(np.complex128).copy()
        v = data.v.coeffs.astype(np.complex128).copy()
        real = data.u.real and data.v.real
    h = grid.h
    rc, rs, rd = _rotation_cubes(lat, h)
    x = h * lat.bracket
    qu = (h / 2.0) * np.sin(x) / lat.bracket
    qv0 = (h / 2.0) * np.cos(x)
    qv1 = h / 2.0

    ms = mode_set(cfg.N) if seed is not None else None
    if ms is not None:
        l11, l21, l22 = step_cholesky(ms.omega, h)
        flat = ms.flat_cube_indices(lat)

    sig = sigma_renorm(cfg.N, grid.times) if include_sigma else np.zeros(grid.steps + 1)
    center = (lat.M, lat.M, lat.M)

    def forcing(coeffs: np.ndarray, k: int) -> np.ndarray:
        f = -dealiased_product(
            SpectralField(lat, coeffs, real=real, _trusted=True),
            SpectralField(lat, coeffs, real=real, _trusted=True),
        ).coeffs
        f[center] += sig[k]
        return f

    values = [SpectralField(lat, u.copy(), real=real, _trusted=True)]
    derivs = [SpectralField(lat, v.copy(), real=real, _trusted=True)]
    f_prev = forcing(u, 0)
    for k in range(grid.steps):
        u_next = rc * u + rs * v + qu * f_prev
        v_next = rd * u + rc * v + qv0 * f_prev
        if ms is not None:
            i1, i2 = _draw_mode_integrals(seed, ms, k, h, l11, l21, l22)
            u_next.reshape(-1)[flat] += i1
            v_next.reshape(-1)[flat] += i2
        f_next = forcing(u_next, k + 1)
        v_next += qv1 * f_next
        u, v, f_prev = u_next, v_next, f_next
        values.append(SpectralField(lat, u.copy(), real=real, _trusted=True))
        derivs.append(SpectralField(lat, v.copy(), real=real, _trusted=True))
    return TrajectoryField(grid, values, derivs)
