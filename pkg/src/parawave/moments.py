"""Shell spectra, Wick covariances, Monte-Carlo ensembles, and decay fits.

Spatial homogeneity makes every second moment a function of the mode
radius alone, so estimators here average |X^(n, t)|^2 over the modes of
unit-width radial shells before averaging over independent samples.
Closed-form covariances (mode and Wick-square level) provide the exact
references the ensembles are validated against, and `fit_decay` turns a
shell profile into a power-law exponent with the implied Sobolev index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.fft

from .blocks import block_count, raw_symbols, resonant_product, restriction_split_index
from .noise import NoiseSeed, mode_set, step_cholesky, _draw_mode_integrals, \
    _draw_mode_integrals_batch
from .objects import TimeGrid, TrajectoryField, sigma_renorm, wick_square, \
    _filtered_quadrature_values, _rotation_values
from .spectral import FrequencyLattice, SpectralField, japanese_bracket


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------

class ShellStat(NamedTuple):
    """One radial shell [lo, hi): mode count, ensemble mean, standard error."""

    lo: float
    hi: float
    modes: int
    mean: float
    stderr: float


@dataclass(frozen=True)
class SpectrumProfile:
    """Per-shell means of |X^(n, t)|^2 for one observable at one time."""

    observable: str
    time: float
    shells: tuple[ShellStat, ...]
    samples: int

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("profile needs at least one sample")
        prev_hi = -np.inf
        for s in self.shells:
            if not s.lo < s.hi:
                raise ValueError(f"empty shell band [{s.lo}, {s.hi})")
            if s.lo < prev_hi:
                raise ValueError("shells must be disjoint and ordered")
            if s.modes <= 0:
                raise ValueError("shell mode count must be positive")
            if s.stderr < 0:
                raise ValueError("standard error must be nonnegative")
            prev_hi = s.hi

    def shell(self, radius: float) -> ShellStat:
        """The shell containing the given radius."""
        for s in self.shells:
            if s.lo <= radius < s.hi:
                return s
        raise KeyError(f"no shell contains radius {radius}")


@dataclass(frozen=True)
class DecayFit:
    """Power-law fit of a shell profile: mean ~ <n>^slope over the band."""

    slope: float
    slope_err: float
    intercept: float
    r_squared: float
    s0: float
    band: tuple[float, float]
    shells: int

    def __post_init__(self):
        if self.shells < 4:
            raise ValueError("fit needs at least 4 shells")
        if not self.band[0] < self.band[1]:
            raise ValueError("fit band must be a nonempty interval")
        implied = (-self.slope - 3.0) / 2.0
        if abs(self.s0 - implied) > 1e-9 * (1.0 + abs(self.slope)):
            raise ValueError("s0 inconsistent with the slope")


# ---------------------------------------------------------------------------
# closed-form covariances
# ---------------------------------------------------------------------------

def _mode_cov(omega, t1: float, t2: float):
    """Two-time covariance of one convolution mode, brackets given, t2 <= t1."""
    w = np.asarray(omega, dtype=np.float64)
    dt = t1 - t2
    return (np.cos(dt * w) * t2 / (2.0 * w**2)
            + np.sin(dt * w) / (4.0 * w**3)
            - np.sin((t1 + t2) * w) / (4.0 * w**3))


def psi_covariance(n, t1: float, t2: float) -> float:
    """E[Psi^(n, t1) conj Psi^(n, t2)] for the stochastic convolution.

    Requires 0 <= t2 <= t1; order the arguments at the call site.
    """
    if not 0.0 <= t2 <= t1:
        raise ValueError("times must satisfy 0 <= t2 <= t1")
    return float(_mode_cov(japanese_bracket(n), t1, t2))


def wick_square_covariance(n, t1: float, t2: float, N: int) -> float:
    """E[w^(n, t1) conj w^(n, t2)] for the renormalized square at cutoff N.

    The quartic Gaussian moment leaves exactly the two cross pairings for
    every split n = n1 + n2 inside the ball, each contributing the product
    of the two mode covariances; the remaining mean-square pairing cancels
    against the subtracted running variance.  The factor 2 is uniform in
    n, the origin and the diagonal split n1 = n2 included (validated
    against a 1e5-sample ensemble at N = 2).  Zero for |n| > 2N.
    """
    if not 0.0 <= t2 <= t1:
        raise ValueError("times must satisfy 0 <= t2 <= t1")
    if N < 1:
        raise ValueError("cutoff N must be positive")
    nv = np.asarray(n, dtype=np.int64).reshape(3)
    if int(nv @ nv) > 4 * N * N:
        return 0.0
    m = mode_set(N).modes
    other = nv[None, :] - m
    keep = np.einsum("ij,ij->i", other, other) <= N * N
    w1 = japanese_bracket(m[keep])
    w2 = japanese_bracket(other[keep])
    return 2.0 * float(np.sum(_mode_cov(w1, t1, t2) * _mode_cov(w2, t1, t2)))


# ---------------------------------------------------------------------------
# shell bookkeeping
# ---------------------------------------------------------------------------

def _shell_ids(nsq: np.ndarray, limit: int) -> np.ndarray:
    """Unit-shell index of each squared radius; -1 beyond the limit.

    Integer-exact: shell r holds r^2 <= |n|^2 < (r+1)^2.
    """
    edges = np.arange(1, limit + 1, dtype=np.int64) ** 2
    ids = np.searchsorted(edges, nsq, side="right")
    return np.where(nsq < limit * limit, ids, -1)


class _ShellIndex:
    """Reduction plan from per-mode values to per-shell means.

    Keeps a mode ordering grouped by shell so rows reduce with one
    `add.reduceat`; empty shells are dropped up front.
    """

    def __init__(self, modes: np.ndarray, limit: int):
        nsq = np.einsum("ij,ij->i", modes, modes)
        ids = _shell_ids(nsq, limit)
        inside = ids >= 0
        order = np.argsort(ids[inside], kind="stable")
        self.take = np.flatnonzero(inside)[order]
        counts = np.bincount(ids[inside], minlength=limit)
        self.radii = np.flatnonzero(counts)
        self.counts = counts[self.radii]
        self.starts = np.concatenate(([0], np.cumsum(self.counts)[:-1]))

    def reduce_rows(self, values: np.ndarray) -> np.ndarray:
        """(samples, modes) |coeff|^2 values -> (samples, shells) means."""
        grouped = values[:, self.take]
        return np.add.reduceat(grouped, self.starts, axis=1) / self.counts

    def stats(self, rows: np.ndarray) -> list[ShellStat]:
        """Shell stats from per-sample shell means, samples in fixed order."""
        mean = np.mean(rows, axis=0)
        S = rows.shape[0]
        if S > 1:
            dev = rows - mean
            # equals the jackknife error of the mean for this linear statistic
            se = np.sqrt(np.einsum("ij,ij->j", dev, dev) / (S * (S - 1)))
        else:
            se = np.zeros_like(mean)
        return [ShellStat(float(r), float(r + 1), int(c), float(m), float(e))
                for r, c, m, e in zip(self.radii, self.counts, mean, se)]


def _cube_modes(half: int) -> np.ndarray:
    """Integer modes of the cube [-half, half]^3, lexicographic."""
    n = np.arange(-half, half + 1, dtype=np.int64)
    g = np.stack(np.meshgrid(n, n, n, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


# ---------------------------------------------------------------------------
# streaming FFT geometry shared by the restricted samplers
# ---------------------------------------------------------------------------

class _HalfGrid:
    """Scatter ball coefficients into an rfft half-spectrum and gather a band.

    The grid G is chosen by the caller so no aliased image of a degree-2N
    product lands inside the gathered band; scatter indices cover the
    n3 >= 0 half (the n3 = 0 plane in full, so the half-spectrum stays
    Hermitian-consistent) and reuse a persistent buffer across steps.
    """

    def __init__(self, ball_modes: np.ndarray, band_modes: np.ndarray, G: int):
        self.G = G
        half_cols = G // 2 + 1
        src = np.flatnonzero(ball_modes[:, 2] >= 0)
        m = ball_modes[src]
        self.src = src
        self.dst = (np.mod(m[:, 0], G) * G + np.mod(m[:, 1], G)) * half_cols + m[:, 2]
        self.buf = np.zeros((G, G, half_cols), dtype=np.complex128)
        b = band_modes
        sign = np.where(b[:, 2] < 0, -1, 1)[:, None]
        bm = b * sign
        self.band_idx = (np.mod(bm[:, 0], G) * G + np.mod(bm[:, 1], G)) * half_cols + bm[:, 2]
        self.band_conj = b[:, 2] < 0
        self.origin = int(np.flatnonzero(np.all(b == 0, axis=1))[0]) \
            if np.any(np.all(b == 0, axis=1)) else -1

    def squared_band(self, coeffs: np.ndarray) -> np.ndarray:
        """Band coefficients of the squared field with given ball coefficients."""
        G = self.G
        self.buf.reshape(-1)[self.dst] = coeffs[self.src]
        grid = scipy.fft.irfftn(self.buf, s=(G, G, G)) * float(G) ** 3
        grid *= grid
        half = scipy.fft.rfftn(grid)
        vals = half.reshape(-1)[self.band_idx] * (1.0 / float(G) ** 3)
        np.conj(vals, where=self.band_conj, out=vals)
        return vals


def _restricted_grid_size(band_top: int, N: int) -> int:
    # nearest aliased image of a degree-2N product sits G - 2N away; keep it
    # strictly beyond the gathered band
    return scipy.fft.next_fast_len(band_top + 2 * N + 1, real=True)


def _band_modes(half: int, limit: int) -> tuple[_ShellIndex, np.ndarray]:
    """Shell reduction plan plus its modes in reduction order."""
    modes = _cube_modes(half)
    index = _ShellIndex(modes, limit)
    modes = modes[index.take]
    index.take = np.arange(len(modes))
    return index, modes


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

class _ConstantPlan:
    """Deterministic reference field c(n) = <n>^-2 on the ball; zero spread."""

    def __init__(self, N: int, M: int, t: float, limit: int, steps: int):
        modes = mode_set(N).modes
        self.index = _ShellIndex(modes, limit)
        power = japanese_bracket(modes).astype(np.float64) ** -4.0
        self.row = self.index.reduce_rows(power[None, :])[0]

    def rows(self, seed: NoiseSeed, start: int, count: int) -> np.ndarray:
        return np.tile(self.row, (count, 1))


class _ConvolutionPlan:
    """Marginal-exact mode-space draw of the convolution at one time."""

    def __init__(self, N: int, M: int, t: float, limit: int, steps: int):
        self.ms = mode_set(N)
        self.t = t
        self.index = _ShellIndex(self.ms.modes, limit)
        self.chol = step_cholesky(self.ms.omega, t) if t > 0 else None

    def rows(self, seed: NoiseSeed, start: int, count: int) -> np.ndarray:
        if self.chol is None:
            return np.zeros((count, self.index.counts.size))
        out = np.empty((count, self.index.counts.size))
        # one exact step of size t from rest; batch size capped by memory
        chunk = max(1, 2_000_000 // len(self.ms))
        l11, l21, l22 = self.chol
        done = 0
        while done < count:
            m = min(chunk, count - done)
            i1, _ = _draw_mode_integrals_batch(
                seed.with_sample(start + done), self.ms, 0, self.t, l11, l21, l22, m)
            out[done:done + m] = self.index.reduce_rows(i1.real**2 + i1.imag**2)
            done += m
        return out


class _WickSquarePlan:
    """Renormalized square at one time, gathered on a restricted band."""

    def __init__(self, N: int, M: int, t: float, limit: int, steps: int):
        self.ms = mode_set(N)
        self.N, self.t = N, t
        self.index, band = _band_modes(min(limit - 1, 2 * N), limit)
        self.grid = _HalfGrid(self.ms.modes, band,
                              _restricted_grid_size(int(np.max(np.abs(band))), N))
        self.sigma = sigma_renorm(N, t)
        self.chol = step_cholesky(self.ms.omega, t) if t > 0 else None

    def rows(self, seed: NoiseSeed, start: int, count: int) -> np.ndarray:
        out = np.empty((count, self.index.counts.size))
        for i in range(count):
            if self.chol is None:
                vals = np.zeros(len(self.grid.band_idx), dtype=np.complex128)
            else:
                l11, l21, l22 = self.chol
                a, _ = _draw_mode_integrals(
                    seed.with_sample(start + i), self.ms, 0, self.t, l11, l21, l22)
                vals = self.grid.squared_band(a)
            if self.grid.origin >= 0:
                vals[self.grid.origin] -= self.sigma
            out[i] = self.index.reduce_rows((vals.real**2 + vals.imag**2)[None, :])[0]
        return out


class _IntegratedWickPlan:
    """Duhamel integral of the renormalized square, streamed on a band.

    Replicates the trajectory pipeline step for step: exact mode-space
    stepping of the convolution, renormalized square through the padded
    grid, and the filtered-trapezoid recursion on the band modes only.
    """

    def __init__(self, N: int, M: int, t: float, limit: int, steps: int):
        self.ms = mode_set(N)
        self.N = N
        self.tgrid = TimeGrid(t / steps, steps)
        self.index, band = _band_modes(min(limit - 1, 2 * N), limit)
        self.grid = _HalfGrid(self.ms.modes, band,
                              _restricted_grid_size(int(np.max(np.abs(band))), N))
        h = self.tgrid.h
        self.chol = step_cholesky(self.ms.omega, h)
        self.rot = _rotation_values(self.ms.omega, h)
        wb = japanese_bracket(band)
        self.band_rot = _rotation_values(wb, h)
        self.band_quad = _filtered_quadrature_values(wb, h)
        self.sigmas = sigma_renorm(N, self.tgrid.times)

    def rows(self, seed: NoiseSeed, start: int, count: int) -> np.ndarray:
        out = np.empty((count, self.index.counts.size))
        nb = len(self.grid.band_idx)
        l11, l21, l22 = self.chol
        rc, rs, rd = self.rot
        brc, brs, brd = self.band_rot
        qu0, qu1, qv0, qv1 = self.band_quad
        for i in range(count):
            s = seed.with_sample(start + i)
            a = np.zeros(len(self.ms), dtype=np.complex128)
            b = np.zeros_like(a)
            y = np.zeros(nb, dtype=np.complex128)
            yd = np.zeros_like(y)
            f0 = np.zeros_like(y)
            for k in range(self.tgrid.steps):
                i1, i2 = _draw_mode_integrals(s, self.ms, k, self.tgrid.h, l11, l21, l22)
                a, b = rc * a + rs * b + i1, rd * a + rc * b + i2
                f1 = self.grid.squared_band(a)
                if self.grid.origin >= 0:
                    f1[self.grid.origin] -= self.sigmas[k + 1]
                y, yd = (brc * y + brs * yd + qu0 * f0 + qu1 * f1,
                         brd * y + brc * yd + qv0 * f0 + qv1 * f1)
                f0 = f1
            out[i] = self.index.reduce_rows((y.real**2 + y.imag**2)[None, :])[0]
        return out


class _WickResonantPlan:
    """Resonant product of the integrated square with the convolution.

    High-high frequency pairs feed low output modes, so this runs on the
    full product-padded lattice and only gathers the band at the end.
    """

    def __init__(self, N: int, M: int, t: float, limit: int, steps: int):
        self.ms = mode_set(N)
        self.N = N
        self.lat = FrequencyLattice(M)
        self.tgrid = TimeGrid(t / steps, steps)
        self.index, band = _band_modes(min(limit - 1, M), limit)
        sz = self.lat.size
        self.band_flat = ((band[:, 0] + M) * sz + band[:, 1] + M) * sz + band[:, 2] + M
        h = self.tgrid.h
        self.chol = step_cholesky(self.ms.omega, h)
        self.rot = _rotation_values(self.ms.omega, h)
        self.cube_rot = _rotation_values(self.lat.bracket, h)
        self.cube_quad = _filtered_quadrature_values(self.lat.bracket, h)

    def rows(self, seed: NoiseSeed, start: int, count: int) -> np.ndarray:
        out = np.empty((count, self.index.counts.size))
        l11, l21, l22 = self.chol
        rc, rs, rd = self.rot
        crc, crs, crd = self.cube_rot
        qu0, qu1, qv0, qv1 = self.cube_quad
        times = self.tgrid.times
        for i in range(count):
            s = seed.with_sample(start + i)
            a = np.zeros(len(self.ms), dtype=np.complex128)
            b = np.zeros_like(a)
            y = self.lat.zeros(np.complex128)
            yd = self.lat.zeros(np.complex128)
            f0 = self.lat.zeros(np.complex128)
            conv = None
            for k in range(self.tgrid.steps):
                i1, i2 = _draw_mode_integrals(s, self.ms, k, self.tgrid.h, l11, l21, l22)
                a, b = rc * a + rs * b + i1, rd * a + rc * b + i2
                conv = self.ms.scatter(a, self.lat, real=True)
                f1 = wick_square(conv, self.N, float(times[k + 1])).coeffs
                y, yd = (crc * y + crs * yd + qu0 * f0 + qu1 * f1,
                         crd * y + crc * yd + qv0 * f0 + qv1 * f1)
                f0 = f1
            smoothed = SpectralField(self.lat, y, real=True, _trusted=True)
            res = resonant_product(smoothed, conv)
            vals = res.coeffs.reshape(-1)[self.band_flat]
            out[i] = self.index.reduce_rows((vals.real**2 + vals.imag**2)[None, :])[0]
        return out


_PLANS = {
    "constant": _ConstantPlan,
    "convolution": _ConvolutionPlan,
    "wick-square": _WickSquarePlan,
    "integrated-wick": _IntegratedWickPlan,
    "wick-resonant": _WickResonantPlan,
}

# observables sampled exactly at one time; `steps` only shapes the others
_SINGLE_TIME = {"constant", "convolution", "wick-square"}


def _default_limit(sampler: str, N: int, M: int) -> int:
    if sampler in ("constant", "convolution"):
        return N
    return min(2 * N, M)


def _as_seed(seed) -> NoiseSeed:
    return seed if isinstance(seed, NoiseSeed) else NoiseSeed(int(seed))


def _mc_rows(sampler: str, N: int, M: int, t: float, steps: int, limit: int,
             master: int, start: int, count: int) -> np.ndarray:
    plan = _PLANS[sampler](N, M, t, limit, steps)
    return plan.rows(NoiseSeed(master), start, count)


def mc_spectrum(sampler: str, N: int, M: int, t: float, samples: int, *,
                seed: int | NoiseSeed = 0, steps: int = 16,
                shell_limit: int | None = None,
                threads: int | None = None) -> SpectrumProfile:
    """Monte-Carlo shell spectrum of one stochastic observable.

    Args:
        sampler: observable id; one of "constant", "convolution",
            "wick-square", "integrated-wick", "wick-resonant".
        N: noise cutoff (modes live in the ball |n| <= N).
        M: ambient cube half-width, N <= M.
        t: evaluation time.
        samples: independent draws, at least 100.
        seed: master seed; sample i runs on stream seed.with_sample(i),
            so the result is independent of threading and batch layout.
        steps: time-grid steps for the Duhamel-integrated observables;
            the single-time observables sample their marginal exactly.
        shell_limit: report shells [r, r+1) for r < shell_limit
            (default: every shell complete for the observable's support).
        threads: worker processes for the ensemble (default sequential).

    Returns:
        SpectrumProfile with jackknife standard errors.
    """
    if sampler not in _PLANS:
        raise ValueError(f"unknown sampler id {sampler!r}; known: {sorted(_PLANS)}")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if not 1 <= N <= M:
        raise ValueError("cutoffs must satisfy 1 <= N <= M")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if steps < 1:
        raise ValueError("need at least one time step")
    limit = _default_limit(sampler, N, M) if shell_limit is None else int(shell_limit)
    if not 1 <= limit <= M + 1:
        raise ValueError("shell limit must lie within the ambient cube")
    base = _as_seed(seed)

    plan = _PLANS[sampler](N, M, t, limit, steps)
    if threads is not None and threads > 1 and samples >= 2 * threads:
        from concurrent.futures import ProcessPoolExecutor
        bounds = np.linspace(0, samples, threads + 1, dtype=int)
        args = [(sampler, N, M, t, steps, limit, base.master, int(lo), int(hi - lo))
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = np.concatenate(list(pool.map(_mc_rows_star, args)), axis=0)
    else:
        rows = plan.rows(base, 0, samples)
    return SpectrumProfile(sampler, t, tuple(plan.index.stats(rows)), samples)


def _mc_rows_star(args) -> np.ndarray:
    return _mc_rows(*args)


def increment_spectrum(sampler: str, t: float, h: float, N: int, samples: int, *,
                       seed: int | NoiseSeed = 0,
                       shell_limit: int | None = None) -> SpectrumProfile:
    """Shell means of |Psi^(n, t+h) - Psi^(n, t)|^2 for the convolution.

    Draws the pair (Psi(t), Psi(t+h)) exactly through two mode-space
    steps sharing the master seed, so profiles at different h are
    coupled through the same underlying noise.  h = 0 returns the
    identically zero profile.
    """
    if sampler != "convolution":
        raise ValueError(f"unknown sampler id {sampler!r}; increments cover 'convolution'")
    if t < 0 or h < 0:
        raise ValueError("window must satisfy t >= 0, h >= 0")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if N < 1:
        raise ValueError("cutoff N must be positive")
    ms = mode_set(N)
    limit = N if shell_limit is None else int(shell_limit)
    index = _ShellIndex(ms.modes, limit)
    base = _as_seed(seed)
    rows = np.empty((samples, index.counts.size))
    if h == 0:
        rows[:] = 0.0
    else:
        l1 = step_cholesky(ms.omega, t) if t > 0 else None
        l2 = step_cholesky(ms.omega, h)
        rc, rs, _ = _rotation_values(ms.omega, h)
        chunk = max(1, 1_000_000 // len(ms))
        done = 0
        while done < samples:
            m = min(chunk, samples - done)
            s = base.with_sample(done)
            if l1 is None:
                a = np.zeros((m, len(ms)), dtype=np.complex128)
                b = np.zeros_like(a)
            else:
                a, b = _draw_mode_integrals_batch(s, ms, 0, t, *l1, m)
            j1, _ = _draw_mode_integrals_batch(s, ms, 1, h, *l2, m)
            diff = rc * a + rs * b + j1 - a
            rows[done:done + m] = index.reduce_rows(diff.real**2 + diff.imag**2)
            done += m
    return SpectrumProfile("convolution", t, tuple(index.stats(rows)), samples)


# ---------------------------------------------------------------------------
# exact second moments of the integrated square (no sampling)
# ---------------------------------------------------------------------------

def filtered_node_weights(omega, t_nodes: np.ndarray) -> np.ndarray:
    """Node weights of the filtered-trapezoid Duhamel rule, per frequency.

    Returns shape (len(t_nodes), len(omega)); the rule integrates the
    oscillatory kernel exactly against the piecewise-linear interpolant
    of the forcing, matching the streaming recursion node for node.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=np.float64))
    t_nodes = np.asarray(t_nodes, dtype=np.float64)
    K = len(t_nodes) - 1
    h = float(t_nodes[1] - t_nodes[0]) if K else 0.0
    T = float(t_nodes[-1])
    out = np.zeros((K + 1, w.size))
    if K == 0:
        return out
    qu0, qu1, qv0, qv1 = _filtered_quadrature_values(w, h)
    for k in range(K):
        dt = T - float(t_nodes[k + 1])
        c = np.cos(w * dt)
        s = np.sin(w * dt) / w
        out[k] += c * qu0 + s * qv0
        out[k + 1] += c * qu1 + s * qv1
    return out


def integrated_wick_expected_spectrum(N: int, t: float, steps: int,
                                      shell_limit: int) -> SpectrumProfile:
    """Exact E|w20^(n, t)|^2 of the discretized integrated square.

    Expands the double Duhamel integral through the quadrature node
    weights and the two-time Wick covariance; each covariance slice is
    one self-convolution of the per-mode covariance field, evaluated on
    the same restricted grid the streaming sampler uses.  Deterministic;
    the profile carries zero standard errors.
    """
    if not 1 <= shell_limit <= 2 * N:
        raise ValueError("shell limit must lie within the doubled ball")
    tgrid = TimeGrid(t / steps, steps)
    ms = mode_set(N)
    band = _cube_modes(shell_limit - 1)
    index = _ShellIndex(band, shell_limit)
    band = band[index.take]
    index.take = np.arange(len(band))
    grid = _HalfGrid(ms.modes, band, _restricted_grid_size(
        int(np.max(np.abs(band))), N))
    weights = filtered_node_weights(japanese_bracket(band), tgrid.times)
    total = np.zeros(len(band))
    times = tgrid.times
    for k in range(steps + 1):
        for j in range(k + 1):
            if times[j] == 0.0 or times[k] == 0.0:
                continue
            sig = _mode_cov(ms.omega, float(times[k]), float(times[j]))
            cov = 2.0 * grid.squared_band(sig.astype(np.complex128)).real
            mult = 1.0 if j == k else 2.0
            total += mult * weights[j] * weights[k] * cov
    rows = index.reduce_rows(total[None, :])
    stats = index.stats(rows)
    return SpectrumProfile("integrated-wick-expected", t, tuple(stats), 1)


def psi_expected_spectrum(N: int, t: float,
                          shell_limit: int | None = None) -> SpectrumProfile:
    """Exact shell means of E|Psi^(n, t)|^2 over the noise ball."""
    if N < 1:
        raise ValueError("cutoff N must be positive")
    if t < 0:
        raise ValueError("time must be nonnegative")
    limit = N if shell_limit is None else int(shell_limit)
    if not 1 <= limit <= N + 1:
        raise ValueError("shell limit must lie within the ball")
    ms = mode_set(N)
    index = _ShellIndex(ms.modes, limit)
    var = np.asarray(_mode_cov(ms.omega, t, t), dtype=np.float64)
    rows = index.reduce_rows(var[None, :])
    return SpectrumProfile("convolution-expected", t,
                           tuple(index.stats(rows)), 1)


def wick_expected_spectrum(N: int, t: float, shell_limit: int) -> SpectrumProfile:
    """Exact shell means of E|w^(n, t)|^2 for the renormalized square.

    One pairing sum over the ball per reported mode; meant for the few
    lowest shells where the ensembles are checked, not for full spectra.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not 1 <= shell_limit <= 2 * N:
        raise ValueError("shell limit must lie within the doubled ball")
    index, band = _band_modes(shell_limit - 1, shell_limit)
    vals = np.array([wick_square_covariance(m, t, t, N) for m in band])
    rows = index.reduce_rows(vals[None, :])
    return SpectrumProfile("wick-square-expected", t,
                           tuple(index.stats(rows)), 1)


def mc_wick_spatial_mean(N: int, t: float, samples: int, *,
                         seed: int | NoiseSeed = 0) -> tuple[float, float]:
    """Ensemble mean and standard error of the spatial average of the
    renormalized square at time t.

    The spatial average is the signed zero mode sum |Psi^(m, t)|^2 over
    the ball minus the running variance, computed per sample from exact
    single-step marginals; its expectation vanishes identically.
    """
    if N < 1:
        raise ValueError("cutoff N must be positive")
    if t < 0:
        raise ValueError("time must be nonnegative")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    vals = np.zeros(samples)
    if t > 0:
        ms = mode_set(N)
        base = _as_seed(seed)
        center = float(sigma_renorm(N, t))
        l = step_cholesky(ms.omega, t)
        chunk = max(1, 1_000_000 // len(ms))
        done = 0
        while done < samples:
            m = min(chunk, samples - done)
            a, _ = _draw_mode_integrals_batch(base.with_sample(done), ms, 0,
                                              t, *l, m)
            vals[done:done + m] = np.einsum(
                "ij,ij->i", a.real, a.real) + np.einsum(
                "ij,ij->i", a.imag, a.imag) - center
            done += m
    mean = float(np.mean(vals))
    err = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return mean, err


# ---------------------------------------------------------------------------
# decay fitting
# ---------------------------------------------------------------------------

def fit_decay(profile: SpectrumProfile, band: tuple[float, float]) -> DecayFit:
    """Weighted log-log fit of shell means against shell-center brackets.

    Uses the shells lying entirely inside the band.  Weights are the
    inverse variances of log(mean) from the delta method; a profile with
    all-zero errors (deterministic observables) falls back to an ordinary
    fit with residual-based errors.  The implied regularity follows the
    three-dimensional dictionary s0 = (-slope - 3) / 2.
    """
    lo, hi = float(band[0]), float(band[1])
    used = [s for s in profile.shells if s.lo >= lo - 1e-12 and s.hi <= hi + 1e-12]
    if len(used) < 4:
        raise ValueError(f"need at least 4 shells inside [{lo}, {hi}], found {len(used)}")
    means = np.array([s.mean for s in used])
    errs = np.array([s.stderr for s in used])
    if np.any(means <= 0):
        raise ValueError("shell means must be positive for a log-log fit")
    centers = np.array([(s.lo + s.hi) / 2.0 for s in used])
    x = np.log(np.sqrt(1.0 + centers**2))
    y = np.log(means)
    n = len(used)
    if np.all(errs == 0.0):
        w = np.ones(n)
        known_var = False
    elif np.any(errs == 0.0):
        raise ValueError("mixed zero and nonzero standard errors in the fit band")
    else:
        w = (means / errs) ** 2
        known_var = True

    sw = np.sum(w)
    xb = np.sum(w * x) / sw
    yb = np.sum(w * y) / sw
    sxx = np.sum(w * (x - xb) ** 2)
    slope = float(np.sum(w * (x - xb) * (y - yb)) / sxx)
    intercept = float(yb - slope * xb)
    resid = y - (intercept + slope * x)
    chi2 = float(np.sum(w * resid**2))
    tss = float(np.sum(w * (y - yb) ** 2))
    r2 = 1.0 if tss == 0.0 else 1.0 - chi2 / tss
    dof = n - 2
    if known_var:
        # inflate by sqrt(chi2/dof) when the scatter exceeds the reported errors
        var = (1.0 / sxx) * max(1.0, chi2 / dof)
    else:
        var = (chi2 / dof) / sxx if dof > 0 else 0.0
    return DecayFit(slope, float(np.sqrt(var)), intercept, float(r2),
                    (-slope - 3.0) / 2.0, (lo, hi), n)


# ---------------------------------------------------------------------------
# discrete convolution sums
# ---------------------------------------------------------------------------

def convolution_sum(alpha: float, beta: float, n, cutoff: int,
                    resonant: bool = False) -> float:
    """Sum of <n1>^-alpha <n2>^-beta over splits n = n1 + n2 in the ball.

    Both factors range over |n_i| <= cutoff; the resonant flag keeps only
    the comparable-frequency pairs |n1| <= 2|n2| and |n2| <= 2|n1|.
    Requires cutoff >= 2|n| so the comparable band is fully represented.
    """
    nv = np.asarray(n, dtype=np.int64).reshape(3)
    nsq = int(nv @ nv)
    if 4 * nsq > cutoff * cutoff:
        raise ValueError("cutoff must be at least 2|n|")
    m = mode_set(cutoff).modes
    other = nv[None, :] - m
    nsq1 = np.einsum("ij,ij->i", m, m)
    nsq2 = np.einsum("ij,ij->i", other, other)
    keep = nsq2 <= cutoff * cutoff
    if resonant:
        keep &= (nsq1 <= 4 * nsq2) & (nsq2 <= 4 * nsq1)
    w1 = japanese_bracket(m[keep])
    w2 = japanese_bracket(other[keep])
    return float(np.sum(w1 ** -alpha * w2 ** -beta))


# ---------------------------------------------------------------------------
# operator block norm diagnostic
# ---------------------------------------------------------------------------

class _OpGeometry:
    """Mode lists, symbols, and FFT layout for one (lattice M, shell) pair.

    The kernel couples a low-pass input column n1, a block-k factor n2
    read at the earlier time, and a resonant partner n3 read at the later
    time; the n-sum is a 3d convolution evaluated on a grid large enough
    that no aliased image reaches any reachable output mode.  Modes
    beyond the inscribed ball of the cube are ignored: the trajectory is
    assumed drawn at the ball cutoff N = M.
    """

    def __init__(self, M: int, k: int, theta: float, c0: float, s2: float):
        jmax = block_count(M) - 1
        self.jmax = jmax
        univ = _cube_modes(M)
        rad = np.sqrt(np.einsum("ij,ij->i", univ, univ).astype(np.float64))
        ball = rad <= M
        univ, rad = univ[ball], rad[ball]
        sym = raw_symbols(rad, jmax)
        sym /= sym.sum(axis=0)
        size = 2 * M + 1
        cube_flat = ((univ[:, 0] + M) * size + (univ[:, 1] + M)) * size + (univ[:, 2] + M)

        # input columns: hermitian-canonical half of the low-pass support
        nlow = min(restriction_split_index(k, theta, c0), jmax + 1)
        top = int(np.ceil(1.6 * 2.0 ** max(0, nlow - 1))) if nlow > 0 else 0
        small = _cube_modes(top)
        small_sym = raw_symbols(
            np.sqrt(np.einsum("ij,ij->i", small, small).astype(np.float64)), jmax)
        small_sym /= small_sym.sum(axis=0)
        q = small_sym[:nlow].sum(axis=0) if nlow > 0 else np.zeros(len(small))
        keep = q > 0
        small, q = small[keep], q[keep]
        first_axis = np.argmax(small != 0, axis=1)
        lead = small[np.arange(len(small)), first_axis]
        canon = (lead > 0) | np.all(small == 0, axis=1)
        self.n1 = small[canon]
        self.q = q[canon]
        self.mult = np.where(np.all(self.n1 == 0, axis=1), 1.0, 2.0)

        k_modes = sym[k] > 0
        self.n2 = univ[k_modes]
        self.phi_k = sym[k][k_modes]
        self.n2_bracket = np.sqrt(1.0 + rad[k_modes] ** 2)
        self.n2_flat = cube_flat[k_modes]

        chi = np.zeros_like(sym)
        for l in range(jmax + 1):
            chi[l] = sym[max(0, l - 2):min(jmax, l + 2) + 1].sum(axis=0)
        chi_n2 = chi[:, k_modes]

        # first pass, grid-free: per-column shifted radii and block symbols
        a_list, self.a_bracket, self.a_phi, self.r_weight = [], [], [], []
        for v in self.n1:
            a = v[None, :] + self.n2
            ra = np.sqrt(np.einsum("ij,ij->i", a, a).astype(np.float64))
            self.a_bracket.append(np.sqrt(1.0 + ra**2))
            phis = raw_symbols(ra, jmax)
            phis /= phis.sum(axis=0)
            self.a_phi.append({l: phis[l] for l in range(jmax + 1) if phis[l].any()})
            # counterterm weight: block factor times the near-diagonal pair
            # weight of the mirrored partner
            self.r_weight.append(self.phi_k * np.einsum("lj,lj->j", phis, chi_n2))
            a_list.append(a)
        self.active = sorted({l for tab in self.a_phi for l in tab})

        # resonant partner modes per block; grid size rules out wraparound
        self.n3_flat = {l: cube_flat[chi[l] > 0] for l in self.active}
        self.chi_vals = {l: chi[l][chi[l] > 0] for l in self.active}
        r3_top = max((float(np.max(rad[chi[l] > 0])) for l in self.active), default=0.0)
        a_top = max((float(np.max(np.sqrt(np.einsum("ij,ij->i", a, a))))
                     for a in a_list), default=0.0)
        G = scipy.fft.next_fast_len(2 * int(np.ceil(a_top + r3_top)) + 1)
        self.G = G
        self.n3_pos = {l: np.ravel_multi_index(
            (np.mod(univ[chi[l] > 0, 0], G), np.mod(univ[chi[l] > 0, 1], G),
             np.mod(univ[chi[l] > 0, 2], G)), (G, G, G)) for l in self.active}
        self.a_dst = [np.ravel_multi_index(
            (np.mod(a[:, 0], G), np.mod(a[:, 1], G), np.mod(a[:, 2], G)), (G, G, G))
            for a in a_list]
        self.n1_out = (np.ravel_multi_index(
            (np.mod(self.n1[:, 0], G), np.mod(self.n1[:, 1], G),
             np.mod(self.n1[:, 2], G)), (G, G, G))
            if len(self.n1) else np.empty(0, dtype=np.int64))

        axis = np.minimum(np.arange(G), G - np.arange(G)).astype(np.float64)
        osq = axis[:, None, None] ** 2 + axis[None, :, None] ** 2 + axis[None, None, :] ** 2
        self.out_weight = (1.0 + osq) ** (s2 - 1.0)


_OP_GEOMETRY: dict[tuple, _OpGeometry] = {}


def op_block_hs_norm(psi: TrajectoryField, t: float, s2: float, theta: float,
                     c0: float, shell: int, delta: float = 0.0) -> float:
    """Squared block norm of the first-order operator kernel, one sample.

    Evaluates the kernel column by column: for each low-pass input mode
    n1 and each quadrature node t' <= t, the n-sum over n2 + n3 = n - n1
    is one 3d convolution of the block-k-filtered field at t' (carrying
    the Duhamel sine factor) against the resonant-weighted field at t,
    with the running-covariance counterterm removed on the diagonal
    n2 + n3 = 0.  Returns shell^delta times the squared L2-in-t' sum of
    <n>^(2 s2 - 2)-weighted column norms.
    """
    if shell < 2 or shell & (shell - 1):
        raise ValueError("shell must be a dyadic size >= 2")
    k = shell.bit_length() - 1
    lat = psi.lattice
    if k > block_count(lat.M) - 1:
        raise ValueError(f"shell {shell} outside the lattice cube M={lat.M}")
    it = psi.grid.node_of(t)
    if it == 0:
        return 0.0
    key = (lat.M, shell, round(theta, 12), round(c0, 12), round(s2, 12))
    geo = _OP_GEOMETRY.get(key)
    if geo is None:
        geo = _OpGeometry(lat.M, k, theta, c0, s2)
        _OP_GEOMETRY[key] = geo
    if len(geo.n1) == 0 or len(geo.n2) == 0:
        return 0.0

    G = geo.G
    h = psi.grid.h
    tw = np.full(it + 1, h)
    tw[0] = tw[-1] = h / 2.0
    times = psi.grid.times

    # resonant-weighted partner fields at the late time, transformed once
    late = psi.values[it].coeffs.reshape(-1)
    ghat = {}
    for l in geo.active:
        cube = np.zeros((G, G, G), dtype=np.complex128)
        cube.reshape(-1)[geo.n3_pos[l]] = geo.chi_vals[l] * late[geo.n3_flat[l]]
        ghat[l] = scipy.fft.fftn(cube, overwrite_x=True)

    total = 0.0
    buf = np.zeros((G, G, G), dtype=np.complex128)
    flat_buf = buf.reshape(-1)
    for j in range(it + 1):
        tp = float(times[j])
        early = psi.values[j].coeffs.reshape(-1)[geo.n2_flat]
        block_vals = geo.phi_k * early
        sig = _mode_cov(geo.n2_bracket, t, tp)
        for col in range(len(geo.n1)):
            wa = geo.a_bracket[col]
            sine = np.sin((t - tp) * wa) / wa
            acc = None
            for l, phi in geo.a_phi[col].items():
                flat_buf[geo.a_dst[col]] = phi * sine * block_vals
                term = scipy.fft.fftn(buf)
                term *= ghat[l]
                acc = term if acc is None else acc + term
            flat_buf[geo.a_dst[col]] = 0.0
            if acc is None:
                continue
            a_cube = scipy.fft.ifftn(acc, overwrite_x=True)
            counter = np.sum(geo.r_weight[col] * sine * sig)
            a_cube.reshape(-1)[geo.n1_out[col]] -= counter
            col_norm = float(np.sum(geo.out_weight
                                    * (a_cube.real**2 + a_cube.imag**2)))
            total += tw[j] * geo.mult[col] * geo.q[col] ** 2 * col_norm
    return float(shell) ** delta * total
