"""Reproducible Gaussian noise for the mode-wise stochastic step integrals.

Each complex Brownian mode ``beta_n`` follows the convention
``E|beta_n(t)|^2 = t`` with ``beta_{-n} = conj(beta_n)`` and ``beta_0``
real.  Per time step ``[t, t+h]`` the driver draws the pair

    I1 = int_t^{t+h} sin((t+h-s)<n>)/<n> dbeta_n(s)
    I2 = int_t^{t+h} cos((t+h-s)<n>)   dbeta_n(s)

exactly in distribution from the closed-form step covariance.  Draws are
counter-based: the value for a (mode, step, sample) triple is a pure
function of the master seed and that triple, so runs at different cutoffs
share draws on shared modes and thread scheduling cannot change results.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .spectral import FrequencyLattice, SpectralField, japanese_bracket

__all__ = [
    "NoiseSeed",
    "ModeSet",
    "BrownianStepIntegrals",
    "splitmix64",
    "philox_block",
    "step_integral_covariance",
    "step_cholesky",
    "sample_step_integrals",
    "mode_set",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF

# Philox4x64 round multipliers and Weyl key increments.
_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_WEYL_0 = np.uint64(0x9E3779B97F4A7C15)
_WEYL_1 = np.uint64(0xBB67AE8584CAA73B)

# offset-binary packing of one lattice coordinate into 21 bits
_COORD_OFFSET = 1 << 20
_COORD_BITS = 21


def splitmix64(x: int) -> int:
    """One SplitMix64 output for integer input ``x`` (mod 2^64)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class NoiseSeed:
    """Master seed plus sample-stream index.

    The Philox key is ``(master, splitmix64(master))``; the counter for a
    draw is ``(mode code, step index, sample index, 0)``.  Distinct sample
    indices give independent realizations of the whole noise field.
    """

    master: int
    sample: int = 0

    def __post_init__(self):
        if not 0 <= self.master < 2**64:
            raise ValueError("master seed must fit in an unsigned 64-bit integer")
        if not 0 <= self.sample < 2**64:
            raise ValueError("sample index must fit in an unsigned 64-bit integer")

    def key(self) -> tuple[int, int]:
        return (self.master, splitmix64(self.master))

    def with_sample(self, sample: int) -> "NoiseSeed":
        return NoiseSeed(self.master, sample)


@njit(cache=True)
def _mulhi64(a, b):
    """High 64 bits of the 128-bit product a*b (32-bit split)."""
    ahi = a >> np.uint64(32)
    alo = a & np.uint64(0xFFFFFFFF)
    bhi = b >> np.uint64(32)
    blo = b & np.uint64(0xFFFFFFFF)
    t = alo * blo
    mid1 = ahi * blo + (t >> np.uint64(32))
    mid2 = alo * bhi + (mid1 & np.uint64(0xFFFFFFFF))
    return ahi * bhi + (mid1 >> np.uint64(32)) + (mid2 >> np.uint64(32))


@njit(cache=True)
def _philox_rounds(x0, x1, x2, x3, k0, k1):
    for _ in range(10):
        hi0 = _mulhi64(_PHILOX_M0, x0)
        lo0 = _PHILOX_M0 * x0
        hi1 = _mulhi64(_PHILOX_M1, x2)
        lo1 = _PHILOX_M1 * x2
        x0 = hi1 ^ x1 ^ k0
        x1 = lo1
        x2 = hi0 ^ x3 ^ k1
        x3 = lo0
        k0 = k0 + _WEYL_0
        k1 = k1 + _WEYL_1
    return x0, x1, x2, x3


@njit(cache=True)
def _philox_fill(k0, k1, c0, c1, c2, c3, out):
    """Run one Philox4x64-10 block per row of the counter arrays."""
    for i in range(c0.shape[0]):
        y0, y1, y2, y3 = _philox_rounds(c0[i], c1[i], c2[i], c3[i], k0, k1)
        out[i, 0] = y0
        out[i, 1] = y1
        out[i, 2] = y2
        out[i, 3] = y3


def philox_block(key: tuple[int, int], counter: tuple[int, int, int, int]) -> np.ndarray:
    """Four output words of one Philox4x64-10 block (test hook)."""
    c = [np.full(1, v & _MASK64, dtype=np.uint64) for v in counter]
    out = np.empty((1, 4), dtype=np.uint64)
    _philox_fill(np.uint64(key[0] & _MASK64), np.uint64(key[1] & _MASK64), c[0], c[1], c[2], c[3], out)
    return out[0]


def _standard_normals(key: tuple[int, int], codes: np.ndarray, step: int, sample: int) -> np.ndarray:
    """(len(codes), 4) iid standard normals, one Philox block per code."""
    q = codes.shape[0]
    c1 = np.full(q, step, dtype=np.uint64)
    c2 = np.full(q, sample, dtype=np.uint64)
    c3 = np.zeros(q, dtype=np.uint64)
    words = np.empty((q, 4), dtype=np.uint64)
    _philox_fill(np.uint64(key[0]), np.uint64(key[1]), codes, c1, c2, c3, words)
    return _box_muller(words)


def _box_muller(words: np.ndarray) -> np.ndarray:
    # 53-bit uniforms in [0, 1); log argument 1-u stays in (0, 1]
    u = (words >> np.uint64(11)).astype(np.float64) * 2.0**-53
    r0 = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    a0 = 2.0 * np.pi * u[:, 1]
    r1 = np.sqrt(-2.0 * np.log1p(-u[:, 2]))
    a1 = 2.0 * np.pi * u[:, 3]
    z = np.empty_like(u)
    z[:, 0] = r0 * np.cos(a0)
    z[:, 1] = r0 * np.sin(a0)
    z[:, 2] = r1 * np.cos(a1)
    z[:, 3] = r1 * np.sin(a1)
    return z


def pack_mode_code(modes: np.ndarray) -> np.ndarray:
    """Pack integer modes (Q, 3) into order-preserving uint64 counter codes."""
    m = np.asarray(modes, dtype=np.int64)
    if np.any(np.abs(m) >= _COORD_OFFSET):
        raise ValueError("mode coordinate exceeds the packable range")
    c = (m + _COORD_OFFSET).astype(np.uint64)
    return (c[..., 0] << np.uint64(2 * _COORD_BITS)) | (c[..., 1] << np.uint64(_COORD_BITS)) | c[..., 2]


class ModeSet:
    """Modes of the Euclidean ball ``|n| <= N`` in deterministic order.

    Rows of ``modes`` are lexicographically increasing, so ``codes`` is
    sorted and mirrors can be found by bisection.  ``canonical`` marks one
    representative per conjugate pair (first nonzero coordinate positive);
    the origin sits at ``origin``.
    """

    def __init__(self, N: int):
        N = int(N)
        if N < 0:
            raise ValueError("cutoff N must be nonnegative")
        self.N = N
        r = np.arange(-N, N + 1, dtype=np.int64)
        g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        inside = np.einsum("ij,ij->i", g, g) <= N * N
        self.modes = g[inside]
        self.codes = pack_mode_code(self.modes)
        self.omega = japanese_bracket(self.modes)
        first = np.where(
            self.modes[:, 0] != 0,
            self.modes[:, 0],
            np.where(self.modes[:, 1] != 0, self.modes[:, 1], self.modes[:, 2]),
        )
        self.canonical = first > 0
        self.origin = int(np.searchsorted(self.codes, pack_mode_code(np.zeros((1, 3), dtype=np.int64))[0]))
        self.mirror = np.searchsorted(self.codes, pack_mode_code(-self.modes))
        self.draw_rows = np.flatnonzero(self.canonical | (np.arange(len(self.modes)) == self.origin))

    def __len__(self) -> int:
        return self.modes.shape[0]

    def flat_cube_indices(self, lattice: FrequencyLattice) -> np.ndarray:
        """Flat indices of the modes inside the lattice coefficient cube."""
        if self.N > lattice.M:
            raise ValueError(f"ball N={self.N} does not fit in the lattice cube M={lattice.M}")
        idx = self.modes + lattice.M
        s = lattice.size
        return (idx[:, 0] * s + idx[:, 1]) * s + idx[:, 2]

    def scatter(self, values: np.ndarray, lattice: FrequencyLattice, real: bool = False) -> SpectralField:
        """Place per-mode values into a zero cube on ``lattice``."""
        cube = np.zeros(lattice.nsq.shape, dtype=np.complex128)
        cube.reshape(-1)[self.flat_cube_indices(lattice)] = values
        return SpectralField(lattice, cube, real=real, _trusted=True)


@lru_cache(maxsize=32)
def mode_set(N: int) -> ModeSet:
    return ModeSet(N)


def _covariance_terms(omega: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form (E|I1|^2, E[I1 conj I2], E|I2|^2) for bracket ``omega``."""
    omega = np.asarray(omega, dtype=np.float64)
    x = omega * h
    sx = np.sin(x)
    v12 = sx * sx / (2.0 * omega**2)
    v22 = h / 2.0 + np.sin(2.0 * x) / (4.0 * omega)
    # v11 = (2x - sin 2x)/(4 w^3) cancels at small x; switch to the series
    y = 2.0 * x
    small = np.abs(y) < 0.1
    y2 = y * y
    series = (y**3 / 6.0) * (1.0 - y2 / 20.0 * (1.0 - y2 / 42.0 * (1.0 - y2 / 72.0 * (1.0 - y2 / 110.0))))
    v11 = np.where(small, series, y - np.sin(y)) / (4.0 * omega**3)
    return v11, v12, v22


def _step_determinant(omega: np.ndarray, h: float) -> np.ndarray:
    """det = v11*v22 - v12^2 = (x^2 - sin^2 x)/(4 w^4), series-guarded."""
    omega = np.asarray(omega, dtype=np.float64)
    x = omega * h
    x2 = x * x
    small = np.abs(x) < 0.1
    series = (x2 * x2 / 3.0) * (1.0 - x2 * 2.0 / 15.0 * (1.0 - x2 / 14.0 * (1.0 - x2 * 2.0 / 45.0)))
    sx = np.sin(x)
    return np.where(small, series, x2 - sx * sx) / (4.0 * omega**4)


def step_integral_covariance(n, h: float) -> np.ndarray:
    """Complex-variance covariance matrix [[E|I1|^2, E I1 conj I2], [., E|I2|^2]]."""
    if h <= 0:
        raise ValueError("step length h must be positive")
    omega = float(japanese_bracket(np.asarray(n, dtype=np.float64)))
    v11, v12, v22 = (float(v[0]) for v in _covariance_terms(np.array([omega]), float(h)))
    return np.array([[v11, v12], [v12, v22]])


def step_cholesky(omega: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower Cholesky (L11, L21, L22) of the step covariance per mode."""
    v11, v12, _v22 = _covariance_terms(omega, h)
    det = _step_determinant(omega, h)
    l11 = np.sqrt(v11)
    l21 = v12 / l11
    l22 = np.sqrt(det / v11)
    return l11, l21, l22


@dataclass(frozen=True)
class BrownianStepIntegrals:
    """One joint draw of (I1, I2) for every mode of ``modes``."""

    modes: ModeSet
    h: float
    I1: np.ndarray
    I2: np.ndarray

    def field(self, which: str, lattice: FrequencyLattice) -> SpectralField:
        values = {"I1": self.I1, "I2": self.I2}[which]
        return self.modes.scatter(values, lattice, real=True)


def _shape_integrals(ms: ModeSet, z: np.ndarray, l11, l21, l22) -> tuple[np.ndarray, np.ndarray]:
    """Turn standard normals (..., n_draw_rows, 4) into (I1, I2) over all modes."""
    rows = ms.draw_rows
    a11, a21, a22 = l11[rows], l21[rows], l22[rows]
    re1 = a11 * z[..., 0]
    re2 = a21 * z[..., 0] + a22 * z[..., 1]
    im1 = a11 * z[..., 2]
    im2 = a21 * z[..., 2] + a22 * z[..., 3]
    # complex modes split variance across Re/Im; the origin is real with full variance
    s = np.full(rows.shape[0], np.sqrt(0.5))
    origin_row = np.flatnonzero(rows == ms.origin)
    s[origin_row] = 1.0
    lead = z.shape[:-2]
    I1 = np.zeros(lead + (len(ms),), dtype=np.complex128)
    I2 = np.zeros(lead + (len(ms),), dtype=np.complex128)
    I1[..., rows] = s * (re1 + 1j * im1)
    I2[..., rows] = s * (re2 + 1j * im2)
    if origin_row.size:
        k = ms.origin
        I1[..., k] = I1[..., k].real
        I2[..., k] = I2[..., k].real
    anti = ~ms.canonical
    anti[ms.origin] = False
    src = ms.mirror[anti]
    I1[..., anti] = np.conj(I1[..., src])
    I2[..., anti] = np.conj(I2[..., src])
    return I1, I2


def _draw_mode_integrals(
    seed: NoiseSeed, ms: ModeSet, step_index: int, h: float, l11, l21, l22
) -> tuple[np.ndarray, np.ndarray]:
    """Shape standard normals into (I1, I2) arrays over all modes of ms."""
    z = _standard_normals(seed.key(), ms.codes[ms.draw_rows], step_index, seed.sample)
    return _shape_integrals(ms, z, l11, l21, l22)


def _draw_mode_integrals_batch(
    seed: NoiseSeed, ms: ModeSet, step_index: int, h: float, l11, l21, l22, samples: int
) -> tuple[np.ndarray, np.ndarray]:
    """(I1, I2) with shape (samples, Q) for sample streams seed.sample + 0..samples-1.

    Bit-identical to looping ``_draw_mode_integrals`` over ``with_sample``.
    """
    rows = ms.draw_rows
    q = rows.shape[0]
    key = seed.key()
    c0 = np.tile(ms.codes[rows], samples)
    c1 = np.full(q * samples, step_index, dtype=np.uint64)
    c2 = np.repeat(np.arange(seed.sample, seed.sample + samples, dtype=np.uint64), q)
    c3 = np.zeros(q * samples, dtype=np.uint64)
    words = np.empty((q * samples, 4), dtype=np.uint64)
    _philox_fill(np.uint64(key[0]), np.uint64(key[1]), c0, c1, c2, c3, words)
    z = _box_muller(words).reshape(samples, q, 4)
    return _shape_integrals(ms, z, l11, l21, l22)


def sample_step_integrals(
    seed: NoiseSeed, lattice: FrequencyLattice, N: int, step_index: int, h: float
) -> BrownianStepIntegrals:
    """Draw (I1, I2) for all modes ``|n| <= N`` for one step of length h."""
    if N > lattice.M:
        raise ValueError(f"cutoff N={N} exceeds the lattice cube M={lattice.M}")
    ms = mode_set(N)
    l11, l21, l22 = step_cholesky(ms.omega, float(h))
    I1, I2 = _draw_mode_integrals(seed, ms, step_index, float(h), l11, l21, l22)
    return BrownianStepIntegrals(ms, float(h), I1, I2)
