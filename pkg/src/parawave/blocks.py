"""Dyadic frequency blocks, paraproducts, and Besov norms.

The block symbols are built from one fixed smooth bump ``phi`` with
``phi == 1`` on ``[-5/4, 5/4]`` and support in ``[-8/5, 8/5]``:
``phi_0(n) = phi(|n|)`` and ``phi_j(n) = phi(|n|/2^j) - phi(|n|/2^{j-1})``
for ``j >= 1``, normalized by their sum so the partition of unity holds
exactly on every lattice mode.  The transition ramp is the standard
``exp(-1/y)`` mollifier quotient, fixed once so results are reproducible
bit for bit.

Products of blocks are grouped Bony-style: ``lo`` collects ``j < k - 2``
(first factor much rougher), ``hi`` its transpose, and ``res`` the
near-diagonal ``|j - k| <= 2`` resonant part.
"""

from __future__ import annotations

import numpy as np

from .spectral import (
    FrequencyLattice,
    SpectralField,
    cube_to_grid,
    from_physical,
    grid_to_cube,
    sobolev_norm,
)

_RAMP_LO = 1.25
_RAMP_HI = 1.6


def _ramp(y: np.ndarray) -> np.ndarray:
    # smooth 0 -> 1 transition on [0, 1] from the exp(-1/y) mollifier
    y = np.clip(y, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(y > 0.0, np.exp(-1.0 / np.maximum(y, 1e-300)), 0.0)
        b = np.where(y < 1.0, np.exp(-1.0 / np.maximum(1.0 - y, 1e-300)), 0.0)
    return a / (a + b)


def bump(r) -> np.ndarray:
    """The radial bump: 1 on [0, 5/4], 0 beyond 8/5, smooth in between."""
    r = np.abs(np.asarray(r, dtype=np.float64))
    out = np.ones_like(r)
    out[r >= _RAMP_HI] = 0.0
    mid = (r > _RAMP_LO) & (r < _RAMP_HI)
    out[mid] = _ramp((_RAMP_HI - r[mid]) / (_RAMP_HI - _RAMP_LO))
    return out


def block_count(M: int) -> int:
    """Number of blocks (jmax + 1) needed to cover the cube of half-width M.

    jmax is the last j whose support annulus (2^{j-1} 5/4, 2^j 8/5) meets
    the lattice; maximality then guarantees the telescoped sum of raw
    symbols is exactly 1 on every represented radius.
    """
    rmax = np.sqrt(3.0) * M
    j = 1
    while 2.0 ** (j - 1) * _RAMP_LO < rmax:
        j += 1
    return j


def raw_symbols(radii: np.ndarray, jmax: int) -> np.ndarray:
    """Unnormalized symbols phi_j(r) for j = 0..jmax, shape (jmax+1, ...)."""
    out = np.empty((jmax + 1,) + radii.shape, dtype=np.float64)
    prev = bump(radii)  # phi(r / 2^0)
    out[0] = prev
    for j in range(1, jmax + 1):
        cur = bump(radii / 2.0 ** j)
        out[j] = cur - prev
        prev = cur
    return out


class _LPTable:
    # per-lattice radial tabulation: symbols are functions of |n|^2 only
    def __init__(self, lattice: FrequencyLattice):
        uniq, inv = np.unique(lattice.nsq, return_inverse=True)
        self.inv = inv.reshape(lattice.nsq.shape).astype(np.int32)
        radii = np.sqrt(uniq.astype(np.float64))
        jmax = block_count(lattice.M) - 1
        tab = raw_symbols(radii, jmax)
        total = tab.sum(axis=0)
        # telescoping makes the raw sum exactly 1 already; the division
        # guards the partition against any rounding residue
        self.table = tab / total
        self.jmax = jmax

    def symbol_cube(self, j: int) -> np.ndarray:
        return self.table[j][self.inv]


def _lp_table(lattice: FrequencyLattice) -> _LPTable:
    tab = getattr(lattice, "_lp_table", None)
    if tab is None:
        tab = _LPTable(lattice)
        lattice._lp_table = tab
    return tab


def block_span(j: int) -> tuple[float, float]:
    """Open radial support interval of block j; block 0 contains the origin."""
    if j == 0:
        return (-1.0, _RAMP_HI)
    return (2.0 ** (j - 1) * _RAMP_LO, 2.0 ** j * _RAMP_HI)


class LPBlockDecomposition:
    """The list of dyadic pieces P_j f, j = 0..jmax, of one field."""

    __slots__ = ("field", "blocks")

    def __init__(self, field: SpectralField, blocks: list[SpectralField]):
        self.field = field
        self.blocks = blocks

    @property
    def jmax(self) -> int:
        return len(self.blocks) - 1

    def reconstruct(self) -> SpectralField:
        total = self.blocks[0].coeffs.copy()
        for b in self.blocks[1:]:
            total += b.coeffs
        return SpectralField(self.field.lattice, total, self.field.real, _trusted=True)


def lp_decompose(field: SpectralField) -> LPBlockDecomposition:
    """Split a field into its dyadic blocks (exact partition of unity)."""
    tab = _lp_table(field.lattice)
    blocks = [
        SpectralField(field.lattice, field.coeffs * tab.symbol_cube(j), field.real,
                      _trusted=True)
        for j in range(tab.jmax + 1)
    ]
    return LPBlockDecomposition(field, blocks)


def block_symbol_values(lattice: FrequencyLattice, j: int, radii) -> np.ndarray:
    """Normalized symbol of block j evaluated at given radii (for tests)."""
    tab = _lp_table(lattice)
    r = np.asarray(radii, dtype=np.float64)
    raw = raw_symbols(r, tab.jmax)
    return raw[j] / raw.sum(axis=0)


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------

def _physical_blocks(field: SpectralField) -> list[np.ndarray]:
    tab = _lp_table(field.lattice)
    return [cube_to_grid(field.coeffs * tab.symbol_cube(j), field.lattice, field.real)
            for j in range(tab.jmax + 1)]


def _require_product_lattice(f: SpectralField, g: SpectralField) -> FrequencyLattice:
    f._check(g)
    if not f.lattice.supports_products:
        raise ValueError("paraproducts need a product-padded lattice (G >= 3M+1)")
    return f.lattice


def paraproduct_split(f: SpectralField, g: SpectralField
                      ) -> tuple[SpectralField, SpectralField, SpectralField]:
    """Bony splitting (lo, res, hi) of the dealiased product f * g.

    lo  = sum_{j < k-2} P_j f P_k g
    res = sum_{|j-k| <= 2} P_j f P_k g
    hi  = sum_{k < j-2} P_j f P_k g

    The three pieces partition all (j, k) pairs, so they sum to the
    dealiased product up to rounding.
    """
    lat = _require_product_lattice(f, g)
    bf = _physical_blocks(f)
    bg = _physical_blocks(g)
    J = len(bf)
    real = f.real and g.real
    shape = bf[0].shape
    dt = bf[0].dtype
    dt_out = np.result_type(dt, bg[0].dtype)
    lo = np.zeros(shape, dtype=dt_out)
    hi = np.zeros(shape, dtype=dt_out)
    res = np.zeros(shape, dtype=dt_out)
    # running prefix sums of f-blocks: cum_below = sum_{j <= k-3} bf[j]
    cum = np.zeros(shape, dtype=dt)
    prefix = [np.zeros(shape, dtype=dt)]
    for b in bf:
        cum = cum + b
        prefix.append(cum)  # prefix[m] = sum_{j < m} bf[j]
    for k in range(J):
        below = prefix[max(k - 2, 0)]           # j <= k-3
        upto = prefix[min(k + 3, J)]            # j <= k+2
        lo += below * bg[k]
        res += (upto - below) * bg[k]
        # hi: f-blocks strictly above k+2
        hi += (prefix[J] - upto) * bg[k]
    def mk(grid):
        if real:
            return from_physical(grid, lat)
        return SpectralField(lat, grid_to_cube(grid, lat), False, _trusted=True)

    return mk(lo), mk(res), mk(hi)


def resonant_product(f: SpectralField, g: SpectralField) -> SpectralField:
    """Just the near-diagonal piece sum_{|j-k|<=2} P_j f P_k g."""
    lat = _require_product_lattice(f, g)
    bf = _physical_blocks(f)
    bg = _physical_blocks(g)
    J = len(bf)
    res = np.zeros(bf[0].shape, dtype=np.result_type(bf[0].dtype, bg[0].dtype))
    for k in range(J):
        window = bf[max(k - 2, 0):min(k + 3, J)]
        acc = window[0].copy()
        for w in window[1:]:
            acc += w
        res += acc * bg[k]
    real = f.real and g.real
    if real:
        return from_physical(res, lat)
    return SpectralField(lat, grid_to_cube(res, lat), False, _trusted=True)


def windowed_lo_product(f: SpectralField, g: SpectralField,
                        j_bounds) -> SpectralField:
    """sum_k (sum_{a_k <= j < b_k} P_j f) P_k g for per-k index windows.

    ``j_bounds(k)`` returns the half-open window ``(a_k, b_k)``.  This is
    the building block for the frequency-restricted integral operators.
    """
    lat = _require_product_lattice(f, g)
    bf = _physical_blocks(f)
    bg = _physical_blocks(g)
    J = len(bf)
    shape = bf[0].shape
    dt = bf[0].dtype
    prefix = [np.zeros(shape, dtype=dt)]
    cum = np.zeros(shape, dtype=dt)
    for b in bf:
        cum = cum + b
        prefix.append(cum)
    out = np.zeros(shape, dtype=np.result_type(dt, bg[0].dtype))
    for k in range(J):
        a, b = j_bounds(k)
        a = int(np.clip(a, 0, J))
        b = int(np.clip(b, 0, J))
        if b <= a:
            continue
        out += (prefix[b] - prefix[a]) * bg[k]
    real = f.real and g.real
    if real:
        return from_physical(out, lat)
    return SpectralField(lat, grid_to_cube(out, lat), False, _trusted=True)


def restriction_split_index(k: int, theta: float, c0: float) -> int:
    """First block index j of the upper (weakly comparable) piece at level k.

    The upper piece keeps theta*k + c0 <= j < k-2, the lower piece keeps
    j < min(that bound, k-2); snapping near-integer bounds keeps the two
    pieces exactly complementary in floating point.
    """
    x = theta * k + c0
    r = round(x)
    if abs(x - r) < 1e-9:
        return int(r)
    return int(np.ceil(x))


# ---------------------------------------------------------------------------
# Besov norms
# ---------------------------------------------------------------------------

def besov_norm(field: SpectralField, s: float, p, q) -> float:
    """Block norm ||2^{sj} ||P_j f||_{L^p}||_{l^q} with p in {2, inf}.

    L^inf block norms are evaluated as collocation-grid maxima, a lower
    bound estimator for the true sup.
    """
    if p not in (2, np.inf, "inf"):
        raise ValueError("p must be 2 or inf")
    if q not in (1, 2, np.inf, "inf"):
        raise ValueError("q must be 1, 2, or inf")
    dec = lp_decompose(field)
    vals = []
    for j, blk in enumerate(dec.blocks):
        if p == 2:
            nrm = sobolev_norm(blk, 0.0)
        else:
            nrm = float(np.max(np.abs(cube_to_grid(blk.coeffs, field.lattice, field.real))))
        vals.append(2.0 ** (s * j) * nrm)
    v = np.asarray(vals)
    if q == 1:
        return float(np.sum(v))
    if q == 2:
        return float(np.sqrt(np.sum(v * v)))
    return float(np.max(v))
