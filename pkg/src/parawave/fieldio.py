"""Binary snapshots for fields and trajectories, CSV tables for statistics.

The binary layout is little-endian throughout: a field snapshot is the
header (M: u32, G: u32, reality flag: u8, time stamp: f64) followed by
the (2M+1)^3 cube coefficients in lexicographic n-order as (re, im)
float64 pairs.  A trajectory file prepends a grid header (h: f64,
K: u32, derivative flag: u8) and stores one snapshot per node, with the
derivative snapshot interleaved after each value when present.

CSV schemas:
    profile:     observable, t, shell_lo, shell_hi, n_modes, n_samples,
                 mean, stderr
    decay fit:   observable, t, slope, slope_err, s0, r2, band_lo,
                 band_hi
    convergence: iteration, increment

Float cells use repr(), the shortest representation that round-trips,
so rewriting the same numbers reproduces the file byte for byte.
"""

from __future__ import annotations

import csv
import os
import struct
from typing import BinaryIO, Iterable, NamedTuple

import numpy as np

from .moments import DecayFit, ShellStat, SpectrumProfile
from .objects import TimeGrid, TrajectoryField
from .spectral import FrequencyLattice, SpectralField

_FIELD_HEADER = struct.Struct("<IIBd")
_GRID_HEADER = struct.Struct("<dIB")

PathLike = str | os.PathLike


# ---------------------------------------------------------------------------
# binary field snapshots
# ---------------------------------------------------------------------------

def _write_field_block(fh: BinaryIO, field: SpectralField, t: float) -> None:
    lat = field.lattice
    fh.write(_FIELD_HEADER.pack(lat.M, lat.G, 1 if field.real else 0, float(t)))
    # complex128 memory is an (re, im) float64 pair; the cube's C order is
    # lexicographic in n because axis index i stores n_i + M.
    fh.write(np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes())


def _read_exact(fh: BinaryIO, count: int, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise ValueError(f"truncated {what}")
    return buf


def _read_field_block(
    fh: BinaryIO, lattice: FrequencyLattice | None
) -> tuple[SpectralField, float]:
    M, G, flag, t = _FIELD_HEADER.unpack(
        _read_exact(fh, _FIELD_HEADER.size, "field header"))
    if flag not in (0, 1):
        raise ValueError(f"reality flag must be 0 or 1, found {flag}")
    if lattice is None:
        lattice = FrequencyLattice(M, G=G)
    elif lattice.M != M or lattice.G != G:
        raise ValueError(
            f"snapshot lattice (M={M}, G={G}) does not match the requested "
            f"lattice (M={lattice.M}, G={lattice.G})")
    size = 2 * M + 1
    raw = _read_exact(fh, size**3 * 16, "coefficient block")
    coeffs = np.frombuffer(raw, dtype="<c16").astype(np.complex128)
    coeffs = coeffs.reshape((size,) * 3)
    # the untrusted constructor re-checks finiteness and, for real fields,
    # restores exact Hermitian symmetry
    return SpectralField(lattice, coeffs, real=bool(flag)), t


def write_field(path: PathLike, field: SpectralField, t: float = 0.0) -> None:
    """Write one field snapshot stamped with the time t."""
    with open(path, "wb") as fh:
        _write_field_block(fh, field, t)


def read_field(
    path: PathLike, lattice: FrequencyLattice | None = None
) -> tuple[SpectralField, float]:
    """Read a field snapshot; returns the field and its time stamp.

    Passing a lattice reuses it (and validates the header against it);
    otherwise one is built from the stored (M, G).
    """
    with open(path, "rb") as fh:
        field, t = _read_field_block(fh, lattice)
        if fh.read(1):
            raise ValueError("trailing bytes after the field snapshot")
    return field, t


def write_trajectory(path: PathLike, traj: TrajectoryField) -> None:
    """Write a trajectory: grid header plus one snapshot per node."""
    grid = traj.grid
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(grid.h, grid.steps, 1 if traj.has_deriv else 0))
        for k, f in enumerate(traj.values):
            _write_field_block(fh, f, k * grid.h)
            if traj.derivs is not None:
                _write_field_block(fh, traj.derivs[k], k * grid.h)


def read_trajectory(
    path: PathLike, lattice: FrequencyLattice | None = None
) -> TrajectoryField:
    """Read a trajectory written by write_trajectory."""
    with open(path, "rb") as fh:
        h, steps, flag = _GRID_HEADER.unpack(
            _read_exact(fh, _GRID_HEADER.size, "grid header"))
        if flag not in (0, 1):
            raise ValueError(f"derivative flag must be 0 or 1, found {flag}")
        grid = TimeGrid(h, steps)
        values: list[SpectralField] = []
        derivs: list[SpectralField] | None = [] if flag else None
        for k in range(steps + 1):
            f, t = _read_field_block(fh, lattice)
            lattice = f.lattice
            if abs(t - k * h) > 1e-9 * max(1.0, k * h):
                raise ValueError(
                    f"node {k} time stamp {t} disagrees with the grid header")
            values.append(f)
            if derivs is not None:
                g, _ = _read_field_block(fh, lattice)
                derivs.append(g)
        if fh.read(1):
            raise ValueError("trailing bytes after the trajectory")
    return TrajectoryField(grid, values, derivs)


# ---------------------------------------------------------------------------
# CSV tables
# ---------------------------------------------------------------------------

class DecayRow(NamedTuple):
    """One row of the decay-fit schema."""

    observable: str
    t: float
    slope: float
    slope_err: float
    s0: float
    r2: float
    band_lo: float
    band_hi: float


_PROFILE_COLUMNS = ("observable", "t", "shell_lo", "shell_hi", "n_modes",
                    "n_samples", "mean", "stderr")
_DECAY_COLUMNS = ("observable", "t", "slope", "slope_err", "s0", "r2",
                  "band_lo", "band_hi")
_CONVERGENCE_COLUMNS = ("iteration", "increment")


def _open_writer(path: PathLike, columns: tuple[str, ...]):
    fh = open(path, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    return fh, w


def _check_header(row: list[str] | None, columns: tuple[str, ...], path) -> None:
    if row is None or tuple(row) != columns:
        raise ValueError(f"{path}: expected header {','.join(columns)}")


def write_profile_csv(path: PathLike, profiles: Iterable[SpectrumProfile]) -> None:
    """Write shell profiles, one row per shell."""
    fh, w = _open_writer(path, _PROFILE_COLUMNS)
    with fh:
        for p in profiles:
            for s in p.shells:
                w.writerow([p.observable, repr(p.time), repr(s.lo), repr(s.hi),
                            s.modes, p.samples, repr(s.mean), repr(s.stderr)])


def read_profile_csv(path: PathLike) -> tuple[SpectrumProfile, ...]:
    """Read profiles back; consecutive rows sharing (observable, t) group."""
    profiles: list[SpectrumProfile] = []
    key: tuple[str, float] | None = None
    shells: list[ShellStat] = []
    samples = 0

    def flush():
        if key is not None:
            profiles.append(
                SpectrumProfile(key[0], key[1], tuple(shells), samples))

    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        _check_header(next(rows, None), _PROFILE_COLUMNS, path)
        for row in rows:
            obs, t, lo, hi, modes, n, mean, stderr = row
            k = (obs, float(t))
            if k != key:
                flush()
                key, shells, samples = k, [], int(n)
            elif int(n) != samples:
                raise ValueError(
                    f"{path}: sample count changes inside profile {obs!r}")
            shells.append(ShellStat(float(lo), float(hi), int(modes),
                                    float(mean), float(stderr)))
    flush()
    return tuple(profiles)


def write_decay_csv(
    path: PathLike, fits: Iterable[tuple[str, float, DecayFit]]
) -> None:
    """Write decay fits as (observable, t, fit) triples."""
    fh, w = _open_writer(path, _DECAY_COLUMNS)
    with fh:
        for obs, t, f in fits:
            w.writerow([obs, repr(float(t)), repr(f.slope), repr(f.slope_err),
                        repr(f.s0), repr(f.r_squared), repr(f.band[0]),
                        repr(f.band[1])])


def read_decay_csv(path: PathLike) -> tuple[DecayRow, ...]:
    """Read decay-fit rows (the schema does not carry the full fit)."""
    out: list[DecayRow] = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        _check_header(next(rows, None), _DECAY_COLUMNS, path)
        for row in rows:
            out.append(DecayRow(row[0], *(float(x) for x in row[1:])))
    return tuple(out)


def write_convergence_csv(path: PathLike, increments: Iterable[float]) -> None:
    """Write a fixed-point convergence log, iterations numbered from 1."""
    fh, w = _open_writer(path, _CONVERGENCE_COLUMNS)
    with fh:
        for i, inc in enumerate(increments, start=1):
            w.writerow([i, repr(float(inc))])


def read_convergence_csv(path: PathLike) -> tuple[tuple[int, float], ...]:
    """Read a convergence log as (iteration, increment) pairs."""
    out: list[tuple[int, float]] = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        _check_header(next(rows, None), _CONVERGENCE_COLUMNS, path)
        for row in rows:
            out.append((int(row[0]), float(row[1])))
    return tuple(out)


def write_table_csv(path: PathLike, columns: tuple[str, ...],
                    rows: Iterable[tuple]) -> None:
    """Write a small numeric table; ints verbatim, floats through repr."""
    fh, w = _open_writer(path, columns)
    with fh:
        for row in rows:
            w.writerow([x if isinstance(x, int) else repr(float(x))
                        for x in row])


def read_table_csv(path: PathLike,
                   columns: tuple[str, ...]) -> tuple[tuple[float, ...], ...]:
    """Read a numeric table written by `write_table_csv`, all cells float."""
    out: list[tuple[float, ...]] = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        _check_header(next(rows, None), columns, path)
        for row in rows:
            out.append(tuple(float(x) for x in row))
    return tuple(out)
