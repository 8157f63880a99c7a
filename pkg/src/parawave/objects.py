"""Stochastic building blocks of the renormalized wave dynamics.

The driving object is the stochastic convolution: the mild solution of the
linear Klein-Gordon equation forced by space-time white noise, sampled
exactly in distribution on a uniform time grid.  From it the module builds
the renormalized (Wick) square, its wave-operator integral, the resonant
products with the convolution itself and with free evolutions of initial
data, and the frequency-windowed integral operators used by the
paracontrolled solver.

Frequency windows are indexed against the dyadic blocks of ``blocks``:
for a window slope ``theta`` and offset ``c0``, block pairs (j, k) with
``theta*k + c0 <= j < k - 2`` form the upper window (handled directly by
quadrature) and ``j < min(theta*k + c0, k - 2)`` the lower window (whose
resonant product with the convolution is the delicate object).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .blocks import resonant_product, restriction_split_index, windowed_lo_product
from .noise import NoiseSeed, _draw_mode_integrals, mode_set, step_cholesky
from .spectral import (
    FieldPair,
    FrequencyLattice,
    SpectralField,
    dealiased_product,
)

__all__ = [
    "TimeGrid",
    "TrajectoryField",
    "sigma_renorm",
    "sample_stochastic_convolution",
    "wick_square",
    "duhamel_integrate",
    "integrated_wick_square",
    "resonant_with_convolution",
    "free_evolution",
    "free_wave_resonant",
    "windowed_duhamel_upper",
    "windowed_duhamel_lower",
    "windowed_duhamel_resonant",
    "StochasticInputs",
    "build_stochastic_inputs",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0, h, 2h, ..., steps*h."""

    h: float
    steps: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("grid step h must be positive")
        if self.steps < 0:
            raise ValueError("step count must be nonnegative")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.h

    @property
    def final_time(self) -> float:
        return self.steps * self.h

    def node_of(self, t: float) -> int:
        """Index of the grid node at time t; t must sit on the grid."""
        k = int(round(t / self.h))
        if k < 0 or k > self.steps or abs(t - k * self.h) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a node of the grid (h={self.h}, steps={self.steps})")
        return k


class TrajectoryField:
    """One spectral field per node of a uniform time grid.

    ``derivs`` optionally carries the time derivative alongside.
    """

    def __init__(
        self,
        grid: TimeGrid,
        values: list[SpectralField],
        derivs: list[SpectralField] | None = None,
    ):
        if len(values) != grid.steps + 1:
            raise ValueError("one field per grid node required")
        lat = values[0].lattice
        for f in values:
            if f.lattice is not lat and not f.lattice.compatible(lat):
                raise ValueError("trajectory fields must share one lattice")
        if derivs is not None and len(derivs) != len(values):
            raise ValueError("derivative track must match the grid length")
        self.grid = grid
        self.values = values
        self.derivs = derivs

    @property
    def lattice(self) -> FrequencyLattice:
        return self.values[0].lattice

    @property
    def has_deriv(self) -> bool:
        return self.derivs is not None

    def value_at(self, t: float) -> SpectralField:
        return self.values[self.grid.node_of(t)]

    def deriv_at(self, t: float) -> SpectralField:
        if self.derivs is None:
            raise ValueError("trajectory carries no time-derivative component")
        return self.derivs[self.grid.node_of(t)]

    def __len__(self) -> int:
        return len(self.values)


def _shell_weights(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct brackets <n> over the ball |n| <= N with multiplicities."""
    return np.unique(mode_set(N).omega, return_counts=True)


def sigma_renorm(N: int, t) -> float | np.ndarray:
    """Renormalization constant: sum over |n| <= N of the mode variance.

    Each mode contributes t/(2<n>^2) - sin(2t<n>)/(4<n>^3); the sum is
    grouped by distinct bracket values, so the cost is the number of
    distinct |n|^2, not the ball volume.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("time must be nonnegative")
    w, cnt = _shell_weights(N)
    tt = t_arr[..., None]
    total = np.sum(cnt * (tt / (2.0 * w**2) - np.sin(2.0 * tt * w) / (4.0 * w**3)), axis=-1)
    return float(total) if np.isscalar(t) or t_arr.ndim == 0 else total


def _zero_field(lattice: FrequencyLattice) -> SpectralField:
    return SpectralField(lattice, lattice.zeros(np.complex128), real=True, _trusted=True)


def sample_stochastic_convolution(
    seed: NoiseSeed, lattice: FrequencyLattice, N: int, grid: TimeGrid
) -> TrajectoryField:
    """Exact-in-distribution draw of the stochastic convolution on a grid.

    Per mode the update over one step is the free rotation of the current
    (value, velocity) state plus the two Brownian kernel integrals, so the
    marginal law at every node is exact regardless of h.
    """
    if N > lattice.M:
        raise ValueError(f"cutoff N={N} exceeds the lattice cube M={lattice.M}")
    ms = mode_set(N)
    h = grid.h
    l11, l21, l22 = step_cholesky(ms.omega, h)
    x = ms.omega * h
    rot_c = np.cos(x)
    rot_s = np.sin(x) / ms.omega
    rot_d = -ms.omega * np.sin(x)
    a = np.zeros(len(ms), dtype=np.complex128)
    b = np.zeros(len(ms), dtype=np.complex128)
    values = [_zero_field(lattice)]
    derivs = [_zero_field(lattice)]
    for k in range(grid.steps):
        i1, i2 = _draw_mode_integrals(seed, ms, k, h, l11, l21, l22)
        a, b = rot_c * a + rot_s * b + i1, rot_d * a + rot_c * b + i2
        values.append(ms.scatter(a, lattice, real=True))
        derivs.append(ms.scatter(b, lattice, real=True))
    return TrajectoryField(grid, values, derivs)


def wick_square(field: SpectralField, N: int, t: float) -> SpectralField:
    """Renormalized square: dealiased field^2 with the running variance
    removed from the zero mode."""
    lat = field.lattice
    if N > lat.M:
        raise ValueError(f"cutoff N={N} exceeds the lattice cube M={lat.M}")
    outside = ~lat.ball_mask(N)
    if np.any(field.coeffs[outside] != 0):
        raise ValueError("field carries energy beyond the stated cutoff")
    sq = dealiased_product(field, field)
    c = sq.coeffs.copy()
    c[lat.M, lat.M, lat.M] -= sigma_renorm(N, t)
    return SpectralField(lat, c, real=field.real, _trusted=True)


def _filtered_quadrature_values(omega: np.ndarray, h: float):
    """Per-mode weights of the exact Duhamel step for linear-in-time forcing.

    Returns (qu0, qu1, qv0, qv1): the value increment is qu0*f(t) +
    qu1*f(t+h), the velocity increment qv0*f(t) + qv1*f(t+h).  All four
    cancel at small x = h*omega and switch to series there.
    """
    w = np.asarray(omega, dtype=np.float64)
    x = h * w
    small = x < 0.1
    x2 = x * x
    sinx = np.sin(x)
    cosx = np.cos(x)
    # sin x - x cos x = (x^3/3)(1 - x^2/10 (1 - x^2/28 (1 - x^2/54)))
    s_a = (x2 * x / 3.0) * (1.0 - x2 / 10.0 * (1.0 - x2 / 28.0 * (1.0 - x2 / 54.0)))
    # x - sin x = (x^3/6)(1 - x^2/20 (1 - x^2/42 (1 - x^2/72)))
    s_b = (x2 * x / 6.0) * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0)))
    # cos x + x sin x - 1 = (x^2/2)(1 - x^2/4 (1 - x^2/18 (1 - x^2/40)))
    s_c = (x2 / 2.0) * (1.0 - x2 / 4.0 * (1.0 - x2 / 18.0 * (1.0 - x2 / 40.0)))
    # 1 - cos x = (x^2/2)(1 - x^2/12 (1 - x^2/30 (1 - x^2/56)))
    s_d = (x2 / 2.0) * (1.0 - x2 / 12.0 * (1.0 - x2 / 30.0 * (1.0 - x2 / 56.0)))
    a = np.where(small, s_a, sinx - x * cosx)
    b = np.where(small, s_b, x - sinx)
    c = np.where(small, s_c, cosx + x * sinx - 1.0)
    d = np.where(small, s_d, 1.0 - cosx)
    hw3 = h * w**3
    hw2 = h * w**2
    return a / hw3, b / hw3, c / hw2, d / hw2


def _filtered_quadrature_cubes(lattice: FrequencyLattice, h: float):
    return _filtered_quadrature_values(lattice.bracket, h)


def _rotation_values(omega: np.ndarray, dt: float):
    x = dt * omega
    return np.cos(x), np.sin(x) / omega, -omega * np.sin(x)


def _rotation_cubes(lattice: FrequencyLattice, dt: float):
    return _rotation_values(lattice.bracket, dt)


def free_evolution(data: FieldPair, t: float) -> FieldPair:
    """Free Klein-Gordon propagation of (value, velocity) data by time t."""
    rc, rs, rd = _rotation_cubes(data.lattice, t)
    u, v = data.u, data.v
    new_u = rc * u.coeffs + rs * v.coeffs
    new_v = rd * u.coeffs + rc * v.coeffs
    real = u.real and v.real
    lat = data.lattice
    return FieldPair(
        SpectralField(lat, new_u, real=real, _trusted=True),
        SpectralField(lat, new_v, real=real, _trusted=True),
    )


def duhamel_integrate(forcing: TrajectoryField) -> TrajectoryField:
    """Wave-operator integral of a forcing trajectory, with derivative.

    The homogeneous part of each step is rotated exactly; the forcing is
    integrated as its piecewise-linear interpolant, so smooth forcings
    converge at O(h^2).
    """
    lat = forcing.lattice
    grid = forcing.grid
    rc, rs, rd = _rotation_cubes(lat, grid.h)
    qu0, qu1, qv0, qv1 = _filtered_quadrature_cubes(lat, grid.h)
    real = all(f.real for f in forcing.values)
    y = lat.zeros(np.complex128)
    yd = lat.zeros(np.complex128)
    values = [_zero_field(lat)]
    derivs = [_zero_field(lat)]
    for k in range(grid.steps):
        f0 = forcing.values[k].coeffs
        f1 = forcing.values[k + 1].coeffs
        y, yd = (
            rc * y + rs * yd + qu0 * f0 + qu1 * f1,
            rd * y + rc * yd + qv0 * f0 + qv1 * f1,
        )
        values.append(SpectralField(lat, y.copy(), real=real, _trusted=True))
        derivs.append(SpectralField(lat, yd.copy(), real=real, _trusted=True))
    return TrajectoryField(grid, values, derivs)


def integrated_wick_square(conv: TrajectoryField, N: int) -> TrajectoryField:
    """Wave-operator integral of the renormalized square of the convolution."""
    times = conv.grid.times
    forcing = TrajectoryField(
        conv.grid, [wick_square(conv.values[i], N, float(times[i])) for i in range(len(conv))]
    )
    return duhamel_integrate(forcing)


def resonant_with_convolution(w: SpectralField, conv_value: SpectralField) -> SpectralField:
    """Resonant (near-diagonal) part of the product with the convolution."""
    if not w.lattice.compatible(conv_value.lattice):
        raise ValueError("lattice mismatch between field and convolution")
    return resonant_product(w, conv_value)


def free_wave_resonant(data: FieldPair, conv: TrajectoryField) -> TrajectoryField:
    """Node-wise resonant product of the free evolution of ``data`` with
    the convolution."""
    if not data.lattice.compatible(conv.lattice):
        raise ValueError("initial data and convolution live on different lattices")
    times = conv.grid.times
    vals = []
    for i in range(len(conv)):
        evolved = free_evolution(data, float(times[i])).u
        vals.append(resonant_product(evolved, conv.values[i]))
    return TrajectoryField(conv.grid, vals)


def _window_upper(theta: float, c0: float) -> Callable[[int], tuple[int, int]]:
    def bounds(k: int) -> tuple[int, int]:
        return restriction_split_index(k, theta, c0), k - 2

    return bounds


def _window_lower(theta: float, c0: float) -> Callable[[int], tuple[int, int]]:
    def bounds(k: int) -> tuple[int, int]:
        return 0, min(restriction_split_index(k, theta, c0), k - 2)

    return bounds


def _windowed_duhamel(
    w: TrajectoryField,
    conv: TrajectoryField,
    bounds: Callable[[int], tuple[int, int]],
    t: float,
) -> SpectralField:
    """Duhamel value at t of the block-windowed product of w with the
    convolution, both sampled on the same grid."""
    if w.grid != conv.grid:
        raise ValueError("trajectories must share one time grid")
    lat = w.lattice
    if not lat.compatible(conv.lattice):
        raise ValueError("trajectories must share one lattice")
    k_end = w.grid.node_of(t)
    h = w.grid.h
    rc, rs, rd = _rotation_cubes(lat, h)
    qu0, qu1, qv0, qv1 = _filtered_quadrature_cubes(lat, h)
    y = lat.zeros(np.complex128)
    yd = lat.zeros(np.complex128)
    real = all(f.real for f in w.values) and all(f.real for f in conv.values)
    f_prev = windowed_lo_product(w.values[0], conv.values[0], bounds).coeffs if k_end else None
    for k in range(k_end):
        f_next = windowed_lo_product(w.values[k + 1], conv.values[k + 1], bounds).coeffs
        y, yd = (
            rc * y + rs * yd + qu0 * f_prev + qu1 * f_next,
            rd * y + rc * yd + qv0 * f_prev + qv1 * f_next,
        )
        f_prev = f_next
    return SpectralField(lat, y, real=real, _trusted=True)


def windowed_duhamel_upper(
    w: TrajectoryField, conv: TrajectoryField, theta: float, c0: float, t: float
) -> SpectralField:
    """Duhamel integral of the paraproduct restricted to block pairs with
    theta*k + c0 <= j < k - 2 (the window handled by direct quadrature)."""
    if not 0 < theta < 1:
        raise ValueError("window slope theta must lie in (0, 1)")
    return _windowed_duhamel(w, conv, _window_upper(theta, c0), t)


def windowed_duhamel_lower(
    w: TrajectoryField, conv: TrajectoryField, theta: float, c0: float, t: float
) -> SpectralField:
    """Duhamel integral of the paraproduct restricted to block pairs with
    j < min(theta*k + c0, k - 2) (the complement of the upper window
    inside the low-high regime)."""
    if not 0 < theta < 1:
        raise ValueError("window slope theta must lie in (0, 1)")
    return _windowed_duhamel(w, conv, _window_lower(theta, c0), t)


def windowed_duhamel_resonant(
    w: TrajectoryField, conv: TrajectoryField, theta: float, c0: float, t: float
) -> SpectralField:
    """Resonant product of the lower-window Duhamel integral with the
    convolution at time t.

    The caller must supply w with its time-derivative component: the
    estimates this operator relies on need C^1-in-time inputs, and
    requiring the derivative keeps that contract visible.
    """
    if not w.has_deriv:
        raise ValueError("trajectory must carry a time-derivative component")
    inner = windowed_duhamel_lower(w, conv, theta, c0, t)
    return resonant_product(inner, conv.value_at(t))


@dataclass
class StochasticInputs:
    """Everything stochastic the fixed-point solver consumes.

    rough_data/smooth_data are the two initial-data pairs; conv is the
    stochastic convolution with derivative; wick_integral the integrated
    Wick square with derivative; wick_resonant its node-wise resonant
    product with the convolution; free_resonant the resonant product of
    the rough free evolution with the convolution.
    """

    rough_data: FieldPair
    smooth_data: FieldPair
    conv: TrajectoryField
    wick_integral: TrajectoryField
    wick_resonant: TrajectoryField
    free_resonant: TrajectoryField
    cutoff: int
    theta: float
    c0: float

    @property
    def lattice(self) -> FrequencyLattice:
        return self.conv.lattice

    @property
    def grid(self) -> TimeGrid:
        return self.conv.grid


def build_stochastic_inputs(
    seed: NoiseSeed,
    lattice: FrequencyLattice,
    N: int,
    grid: TimeGrid,
    rough_data: FieldPair,
    smooth_data: FieldPair,
    theta: float = 0.1,
    c0: float = 0.0,
) -> StochasticInputs:
    """Sample the convolution and assemble every derived object."""
    conv = sample_stochastic_convolution(seed, lattice, N, grid)
    wick_int = integrated_wick_square(conv, N)
    wick_res = TrajectoryField(
        grid,
        [resonant_product(wick_int.values[i], conv.values[i]) for i in range(len(conv))],
    )
    free_res = free_wave_resonant(rough_data, conv)
    return StochasticInputs(
        rough_data=rough_data,
        smooth_data=smooth_data,
        conv=conv,
        wick_integral=wick_int,
        wick_resonant=wick_res,
        free_resonant=free_res,
        cutoff=N,
        theta=theta,
        c0=c0,
    )
