"""Spectral fields on the frequency cube of the periodic 3-torus.

The torus carries the normalized measure, so the transform pair is
``f(x) = sum_n fhat(n) exp(i n.x)`` with ``fhat(n)`` the average of
``f exp(-i n.x)``, and Parseval reads ``||f||_L2^2 = sum_n |fhat(n)|^2``.
Coefficients live on the cube ``{max_i |n_i| <= M}`` stored as a
``(2M+1)^3`` complex array indexed by ``n + M``.  Physical-space work
happens on a ``G^3`` collocation grid: ``G >= 2M+1`` makes the transforms
faithful on the cube and ``G >= 3M+1`` removes aliasing from quadratic
products restricted back to the cube (the classical 3/2-style padding).

Real fields are kept exactly Hermitian (``fhat(-n) == conj(fhat(n))``,
bit-for-bit) so that reality never degrades into an approximate property
downstream.
"""

from __future__ import annotations

import numpy as np
import scipy.fft


def japanese_bracket(n) -> np.ndarray | float:
    """<n> = sqrt(1 + |n|^2) for an integer triple or an array of them.

    Accepts shape (..., 3); returns float with the trailing axis reduced.
    """
    n = np.asarray(n, dtype=np.float64)
    if n.shape == (3,):
        return float(np.sqrt(1.0 + n @ n))
    return np.sqrt(1.0 + np.sum(n * n, axis=-1))


def _mirror(coeffs: np.ndarray) -> np.ndarray:
    # n -> -n is index reversal on every axis of the cube.
    return coeffs[::-1, ::-1, ::-1]


class FrequencyLattice:
    """Frequency cube ``{|n_i| <= M}`` tied to a ``G^3`` collocation grid.

    Args:
        M: cube half-width; modes run over ``n_i in [-M, M]``.
        G: collocation grid size per axis.  Defaults to the next
            FFT-friendly length >= 3M+1 (product-safe) or >= 2M+1 when
            ``pad_for_products`` is False.
        pad_for_products: pick the default G large enough for exact
            quadratic products.

    The lattice precomputes the squared radii ``|n|^2``, the brackets
    ``<n>``, and the per-axis FFT placement indices ``n mod G``.
    """

    def __init__(self, M: int, G: int | None = None, pad_for_products: bool = True):
        M = int(M)
        if M < 0:
            raise ValueError("cube half-width M must be nonnegative")
        if G is None:
            target = 3 * M + 1 if pad_for_products else 2 * M + 1
            G = scipy.fft.next_fast_len(target, real=True)
        G = int(G)
        if G < 2 * M + 1:
            raise ValueError(f"grid G={G} cannot represent the cube M={M}; need G >= {2 * M + 1}")
        self.M = M
        self.G = G
        self.size = 2 * M + 1
        n = np.arange(-M, M + 1)
        self.coords = n
        nsq = (n[:, None, None] ** 2 + n[None, :, None] ** 2 + n[None, None, :] ** 2).astype(np.int64)
        self.nsq = nsq
        self.bracket = np.sqrt(1.0 + nsq)
        # where mode n lands in an unshifted length-G FFT axis
        self.fft_index = np.mod(n, G)
        self._ball_masks: dict[int, np.ndarray] = {}

    @property
    def supports_products(self) -> bool:
        return self.G >= 3 * self.M + 1

    def compatible(self, other: "FrequencyLattice") -> bool:
        return self.M == other.M and self.G == other.G

    def ball_mask(self, N: int) -> np.ndarray:
        """Boolean cube mask of the Euclidean ball |n| <= N (cached)."""
        N = int(N)
        if N not in self._ball_masks:
            self._ball_masks[N] = self.nsq <= N * N
        return self._ball_masks[N]

    def mode_index(self, n) -> tuple[int, int, int]:
        """Storage index of mode n = (n1, n2, n3)."""
        i = tuple(int(c) + self.M for c in n)
        if any(j < 0 or j >= self.size for j in i):
            raise IndexError(f"mode {tuple(n)} outside cube M={self.M}")
        return i

    def zeros(self, dtype=np.complex128) -> np.ndarray:
        return np.zeros((self.size,) * 3, dtype=dtype)

    def __repr__(self) -> str:  # pragma: no cover
        return f"FrequencyLattice(M={self.M}, G={self.G})"


def _hermitianize(coeffs: np.ndarray) -> np.ndarray:
    # (a + conj(mirror a))/2 is exactly Hermitian in IEEE arithmetic:
    # the mirrored expression is the same sum commuted, then conjugated.
    return (coeffs + np.conj(_mirror(coeffs))) / 2


class SpectralField:
    """A field given by its coefficients on a frequency cube.

    ``real=True`` asserts the field is real-valued; the constructor
    enforces exact Hermitian symmetry by averaging with the conjugated
    mirror (a no-op when the symmetry already holds).
    """

    __slots__ = ("lattice", "coeffs", "real")

    def __init__(self, lattice: FrequencyLattice, coeffs: np.ndarray, real: bool = False,
                 _trusted: bool = False):
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (lattice.size,) * 3:
            raise ValueError(f"coefficient cube shape {coeffs.shape} does not match lattice M={lattice.M}")
        if not np.iscomplexobj(coeffs):
            coeffs = coeffs.astype(np.complex128)
        if not _trusted:
            if not np.all(np.isfinite(coeffs.view(np.float64 if coeffs.dtype == np.complex128 else np.float32))):
                raise ValueError("non-finite coefficient")
            if real:
                coeffs = _hermitianize(coeffs)
        self.lattice = lattice
        self.coeffs = coeffs
        self.real = bool(real)

    # -- small conveniences used by the solvers; products go through
    #    dealiased_product, never plain *.
    def copy(self) -> "SpectralField":
        return SpectralField(self.lattice, self.coeffs.copy(), self.real, _trusted=True)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.lattice, self.coeffs + other.coeffs,
                             self.real and other.real, _trusted=True)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        self._check(other)
        return SpectralField(self.lattice, self.coeffs - other.coeffs,
                             self.real and other.real, _trusted=True)

    def __mul__(self, c) -> "SpectralField":
        c = complex(c)
        if c.imag == 0.0:
            return SpectralField(self.lattice, self.coeffs * c.real, self.real, _trusted=True)
        return SpectralField(self.lattice, self.coeffs * c, False, _trusted=True)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.lattice, -self.coeffs, self.real, _trusted=True)

    def _check(self, other: "SpectralField") -> None:
        if not self.lattice.compatible(other.lattice):
            raise ValueError("lattice mismatch")

    def norm(self, s: float = 0.0) -> float:
        return sobolev_norm(self, s)

    def is_hermitian(self) -> bool:
        return bool(np.array_equal(self.coeffs, np.conj(_mirror(self.coeffs))))

    def __repr__(self) -> str:  # pragma: no cover
        kind = "real" if self.real else "complex"
        return f"SpectralField(M={self.lattice.M}, {kind}, dtype={self.coeffs.dtype})"


class FieldPair:
    """Position/velocity pair (u, v) on a shared lattice."""

    __slots__ = ("u", "v")

    def __init__(self, u: SpectralField, v: SpectralField):
        if not u.lattice.compatible(v.lattice):
            raise ValueError("lattice mismatch between pair components")
        self.u = u
        self.v = v

    @property
    def lattice(self) -> FrequencyLattice:
        return self.u.lattice

    def copy(self) -> "FieldPair":
        return FieldPair(self.u.copy(), self.v.copy())

    def __add__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "FieldPair") -> "FieldPair":
        return FieldPair(self.u - other.u, self.v - other.v)

    def __mul__(self, c) -> "FieldPair":
        return FieldPair(self.u * c, self.v * c)

    __rmul__ = __mul__


def project_pi_N(field: SpectralField, N: int) -> SpectralField:
    """Sharp Fourier truncation to the Euclidean ball |n| <= N.

    N may exceed the cube radius, in which case the projection is the
    identity on the represented modes.
    """
    if N < 0:
        raise ValueError("truncation radius must be nonnegative")
    mask = field.lattice.ball_mask(N)
    return SpectralField(field.lattice, np.where(mask, field.coeffs, 0.0), field.real,
                         _trusted=True)


def sobolev_norm(field: SpectralField, s: float) -> float:
    """H^s norm sqrt(sum <n>^{2s} |fhat(n)|^2) under the normalized measure."""
    w = field.lattice.bracket ** (2.0 * s)
    mag = np.abs(field.coeffs.astype(np.complex128, copy=False)) ** 2
    return float(np.sqrt(np.sum(w * mag)))


# ---------------------------------------------------------------------------
# transforms
#
# Real fields ride the half-spectrum r2c/c2r path: modes with n3 >= 0 are
# scattered into the rfft layout (their mirrors are implied), which halves
# the transform cost.  Complex fields use the full c2c transform.
# ---------------------------------------------------------------------------

def _real_dtype(cdtype) -> type:
    return np.float32 if cdtype == np.complex64 else np.float64


def _complex_dtype(rdtype) -> type:
    return np.complex64 if rdtype == np.float32 else np.complex128


def grid_to_cube(grid: np.ndarray, lattice: FrequencyLattice) -> np.ndarray:
    """Forward transform of a G^3 grid, gathered onto the coefficient cube.

    Real grids produce exactly Hermitian cubes (negative-n3 entries filled
    by conjugate mirroring rather than by a second transform).
    """
    G, M = lattice.G, lattice.M
    if grid.shape != (G, G, G):
        raise ValueError(f"grid shape {grid.shape} does not match G={G}")
    fi = lattice.fft_index
    inv_vol = 1.0 / float(G) ** 3
    if not np.iscomplexobj(grid):
        half = scipy.fft.rfftn(grid)
        cube = np.empty((lattice.size,) * 3, dtype=half.dtype)
        cube[:, :, M:] = half[np.ix_(fi, fi, np.arange(M + 1))]
        cube[:, :, M:] *= inv_vol
        # the c2r transform does not return its n3 = 0 plane bit-symmetric,
        # so make that plane exactly Hermitian before mirroring the rest
        plane = cube[:, :, M]
        cube[:, :, M] = (plane + np.conj(plane[::-1, ::-1])) / 2
        cube[:, :, :M] = np.conj(_mirror(cube)[:, :, :M])
        return cube
    full = scipy.fft.fftn(grid)
    cube = full[np.ix_(fi, fi, fi)]
    cube *= inv_vol
    return cube


def cube_to_grid(coeffs: np.ndarray, lattice: FrequencyLattice, real: bool) -> np.ndarray:
    """Inverse transform of a coefficient cube onto the G^3 grid."""
    G, M = lattice.G, lattice.M
    fi = lattice.fft_index
    vol = float(G) ** 3
    if real:
        half = np.zeros((G, G, G // 2 + 1), dtype=coeffs.dtype)
        half[np.ix_(fi, fi, np.arange(M + 1))] = coeffs[:, :, M:]
        return scipy.fft.irfftn(half, s=(G, G, G), overwrite_x=True) * vol
    full = np.zeros((G, G, G), dtype=np.promote_types(coeffs.dtype, np.complex64))
    full[np.ix_(fi, fi, fi)] = coeffs
    return scipy.fft.ifftn(full, overwrite_x=True) * vol


def to_physical(field: SpectralField) -> np.ndarray:
    """Collocation values of the field on its G^3 grid."""
    return cube_to_grid(field.coeffs, field.lattice, field.real)


def from_physical(grid: np.ndarray, lattice: FrequencyLattice) -> SpectralField:
    """Field from collocation values; frequencies beyond the cube are dropped."""
    real = not np.iscomplexobj(grid)
    return SpectralField(lattice, grid_to_cube(np.asarray(grid), lattice), real,
                         _trusted=True)


def dealiased_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Pointwise product restricted to the cube, exact thanks to padding.

    Requires a shared lattice with G >= 3M+1 so that no aliased image of
    the true (degree-2M) product lands inside the cube.
    """
    f._check(g)
    lat = f.lattice
    if not lat.supports_products:
        raise ValueError(f"lattice G={lat.G} too small for exact products; need >= {3 * lat.M + 1}")
    both_real = f.real and g.real
    if both_real:
        pf = to_physical(f)
        prod = pf * pf if f is g else pf * to_physical(g)
    else:
        pf = cube_to_grid(f.coeffs, lat, False)
        prod = pf * pf if f is g else pf * cube_to_grid(g.coeffs, lat, False)
    return from_physical(prod, lat)


def product_restricted(f: SpectralField, g: SpectralField,
                       out_lattice: FrequencyLattice) -> SpectralField:
    """Product of two cube-M fields gathered onto a smaller cube.

    Alias safety for the restricted output needs only
    ``G >= M_out + 2*M_in + 1``: the nearest aliased image of any true
    product frequency sits at distance >= G - 2*M_in > M_out from the
    retained cube.
    """
    f._check(g)
    lat = f.lattice
    if out_lattice.M > lat.M:
        raise ValueError("output cube larger than input cube")
    if lat.G < out_lattice.M + 2 * lat.M + 1:
        raise ValueError(
            f"grid G={lat.G} aliases into the output cube; "
            f"need >= {out_lattice.M + 2 * lat.M + 1}")
    both_real = f.real and g.real
    if both_real:
        pf = to_physical(f)
        prod = pf * pf if f is g else pf * to_physical(g)
        cube = _gather_restricted_real(prod, lat, out_lattice)
    else:
        fg = cube_to_grid(f.coeffs, lat, False) * cube_to_grid(g.coeffs, lat, False)
        cube = _gather_restricted_complex(fg, lat, out_lattice)
    return SpectralField(out_lattice, cube, both_real, _trusted=True)


def _gather_restricted_real(grid: np.ndarray, lat: FrequencyLattice,
                            out: FrequencyLattice) -> np.ndarray:
    G, Mo = lat.G, out.M
    half = scipy.fft.rfftn(grid)
    fi = np.mod(out.coords, G)
    cube = np.empty((out.size,) * 3, dtype=half.dtype)
    cube[:, :, Mo:] = half[np.ix_(fi, fi, np.arange(Mo + 1))]
    cube[:, :, Mo:] *= 1.0 / float(G) ** 3
    cube[:, :, :Mo] = np.conj(_mirror(cube)[:, :, :Mo])
    return cube


def _gather_restricted_complex(grid: np.ndarray, lat: FrequencyLattice,
                               out: FrequencyLattice) -> np.ndarray:
    G = lat.G
    full = scipy.fft.fftn(grid)
    fi = np.mod(out.coords, G)
    cube = full[np.ix_(fi, fi, fi)]
    cube *= 1.0 / float(G) ** 3
    return cube
