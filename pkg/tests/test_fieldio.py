"""Binary snapshot layout, trajectory files, and the CSV table schemas."""

import struct

import numpy as np
import pytest

from parawave.fieldio import (
    DecayRow,
    read_convergence_csv,
    read_decay_csv,
    read_field,
    read_profile_csv,
    read_table_csv,
    read_trajectory,
    write_convergence_csv,
    write_decay_csv,
    write_field,
    write_profile_csv,
    write_table_csv,
    write_trajectory,
)
from parawave.moments import DecayFit, ShellStat, SpectrumProfile
from parawave.objects import TimeGrid, TrajectoryField
from parawave.spectral import FrequencyLattice, SpectralField


def _random_field(lattice, seed, real=True):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((lattice.size,) * 3) \
        + 1j * rng.standard_normal((lattice.size,) * 3)
    return SpectralField(lattice, c, real=real)


class TestFieldSnapshot:
    def test_roundtrip_real(self, tmp_path):
        lat = FrequencyLattice(3)
        f = _random_field(lat, 0)
        p = tmp_path / "f.fld"
        write_field(p, f, t=0.75)
        g, t = read_field(p)
        assert t == 0.75
        assert g.real
        assert g.lattice.M == lat.M and g.lattice.G == lat.G
        assert np.array_equal(g.coeffs, f.coeffs)

    def test_roundtrip_complex(self, tmp_path):
        lat = FrequencyLattice(2, G=8)
        f = _random_field(lat, 1, real=False)
        p = tmp_path / "f.fld"
        write_field(p, f)
        g, t = read_field(p, lat)
        assert t == 0.0
        assert not g.real
        assert g.lattice is lat
        assert np.array_equal(g.coeffs, f.coeffs)

    def test_exact_byte_layout(self, tmp_path):
        # single-mode cube: header then one little-endian (re, im) pair
        lat = FrequencyLattice(0, G=1)
        f = SpectralField(lat, np.full((1, 1, 1), 2.5 + 0j), real=True)
        p = tmp_path / "f.fld"
        write_field(p, f, t=0.25)
        expect = struct.pack("<IIBd", 0, 1, 1, 0.25) + struct.pack("<dd", 2.5, 0.0)
        assert p.read_bytes() == expect

    def test_lexicographic_coefficient_order(self, tmp_path):
        # value encodes the storage index; the file must walk n in
        # lexicographic order, i.e. C order of the cube
        lat = FrequencyLattice(1, G=3)
        c = np.arange(27, dtype=np.complex128).reshape(3, 3, 3)
        f = SpectralField(lat, c)
        p = tmp_path / "f.fld"
        write_field(p, f)
        raw = p.read_bytes()[struct.calcsize("<IIBd"):]
        flat = np.frombuffer(raw, dtype="<c16")
        assert np.array_equal(flat, np.arange(27))
        # first record is n = (-1,-1,-1), last is (1,1,1)
        assert flat[0] == c[0, 0, 0] and flat[-1] == c[2, 2, 2]

    def test_lattice_mismatch(self, tmp_path):
        lat = FrequencyLattice(2)
        p = tmp_path / "f.fld"
        write_field(p, _random_field(lat, 2), t=0.0)
        with pytest.raises(ValueError, match="does not match"):
            read_field(p, FrequencyLattice(3))

    def test_truncated_and_trailing(self, tmp_path):
        lat = FrequencyLattice(1)
        p = tmp_path / "f.fld"
        write_field(p, _random_field(lat, 3))
        blob = p.read_bytes()
        p.write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_field(p)
        p.write_bytes(blob + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            read_field(p)

    def test_bad_reality_flag(self, tmp_path):
        p = tmp_path / "f.fld"
        p.write_bytes(struct.pack("<IIBd", 0, 1, 7, 0.0) + b"\x00" * 16)
        with pytest.raises(ValueError, match="reality flag"):
            read_field(p)


class TestTrajectorySnapshot:
    def _trajectory(self, with_deriv):
        lat = FrequencyLattice(2, G=5, pad_for_products=False)
        grid = TimeGrid(0.125, 3)
        vals = [_random_field(lat, 10 + k) for k in range(4)]
        ders = [_random_field(lat, 20 + k) for k in range(4)] if with_deriv else None
        return TrajectoryField(grid, vals, ders)

    @pytest.mark.parametrize("with_deriv", [False, True])
    def test_roundtrip(self, tmp_path, with_deriv):
        traj = self._trajectory(with_deriv)
        p = tmp_path / "t.trj"
        write_trajectory(p, traj)
        back = read_trajectory(p)
        assert back.grid == traj.grid
        assert back.has_deriv == with_deriv
        for k in range(4):
            assert np.array_equal(back.values[k].coeffs, traj.values[k].coeffs)
            if with_deriv:
                assert np.array_equal(back.derivs[k].coeffs, traj.derivs[k].coeffs)

    def test_node_stamp_checked(self, tmp_path):
        traj = self._trajectory(False)
        p = tmp_path / "t.trj"
        write_trajectory(p, traj)
        blob = bytearray(p.read_bytes())
        # overwrite the time stamp of node 1 inside its field header
        grid_sz = struct.calcsize("<dIB")
        block = struct.calcsize("<IIBd") + 125 * 16
        off = grid_sz + block + struct.calcsize("<IIB")
        blob[off:off + 8] = struct.pack("<d", 9.0)
        p.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="time stamp"):
            read_trajectory(p)

    def test_bad_deriv_flag(self, tmp_path):
        p = tmp_path / "t.trj"
        p.write_bytes(struct.pack("<dIB", 0.5, 1, 3))
        with pytest.raises(ValueError, match="derivative flag"):
            read_trajectory(p)


def _profile(obs="psi", t=1.0, samples=100):
    shells = (ShellStat(1.0, 2.0, 6, 0.25, 0.01),
              ShellStat(2.0, 3.0, 18, 0.0625, 1e-3))
    return SpectrumProfile(obs, t, shells, samples)


class TestCsvTables:
    def test_profile_roundtrip(self, tmp_path):
        ps = (_profile("psi"), _profile("wick-square", t=0.5, samples=40))
        p = tmp_path / "prof.csv"
        write_profile_csv(p, ps)
        assert read_profile_csv(p) == ps

    def test_profile_header_and_rewrite_identical(self, tmp_path):
        p = tmp_path / "prof.csv"
        write_profile_csv(p, [_profile()])
        first = p.read_bytes()
        assert first.startswith(
            b"observable,t,shell_lo,shell_hi,n_modes,n_samples,mean,stderr\n")
        write_profile_csv(p, [_profile()])
        assert p.read_bytes() == first

    def test_profile_bad_header(self, tmp_path):
        p = tmp_path / "prof.csv"
        p.write_text("observable,t\n")
        with pytest.raises(ValueError, match="expected header"):
            read_profile_csv(p)

    def test_profile_sample_count_change_rejected(self, tmp_path):
        p = tmp_path / "prof.csv"
        write_profile_csv(p, [_profile()])
        lines = p.read_text().splitlines()
        lines[2] = lines[2].replace(",100,", ",99,")
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="sample count"):
            read_profile_csv(p)

    def test_decay_roundtrip(self, tmp_path):
        fit = DecayFit(slope=-2.0, slope_err=0.05, intercept=1.5,
                       r_squared=0.99, s0=-0.5, band=(4.0, 21.0), shells=17)
        p = tmp_path / "fit.csv"
        write_decay_csv(p, [("psi", 1.0, fit)])
        rows = read_decay_csv(p)
        assert rows == (DecayRow("psi", 1.0, -2.0, 0.05, -0.5, 0.99, 4.0, 21.0),)

    def test_convergence_roundtrip(self, tmp_path):
        p = tmp_path / "conv.csv"
        write_convergence_csv(p, [0.5, 0.25, 0.03125])
        assert read_convergence_csv(p) == ((1, 0.5), (2, 0.25), (3, 0.03125))
        assert p.read_text().splitlines()[0] == "iteration,increment"

    def test_generic_table_roundtrip(self, tmp_path):
        p = tmp_path / "gaps.csv"
        cols = ("h", "gap")
        write_table_csv(p, cols, [(0.25, 1.0 / 3.0), (0.125, 0.1)])
        assert read_table_csv(p, cols) == ((0.25, 1.0 / 3.0), (0.125, 0.1))
        assert p.read_text().splitlines()[0] == "h,gap"

    def test_generic_table_ints_verbatim(self, tmp_path):
        p = tmp_path / "cauchy.csv"
        cols = ("n", "gap", "stderr")
        write_table_csv(p, cols, [(4, 0.5, 0.01), (8, 0.25, 0.005)])
        assert p.read_text().splitlines()[1].startswith("4,")
        assert read_table_csv(p, cols)[1] == (8.0, 0.25, 0.005)

    def test_generic_table_header_checked(self, tmp_path):
        p = tmp_path / "gaps.csv"
        write_table_csv(p, ("h", "gap"), [(0.25, 0.1)])
        with pytest.raises(ValueError, match="expected header"):
            read_table_csv(p, ("n", "gap"))
