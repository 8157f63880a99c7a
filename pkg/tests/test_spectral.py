import numpy as np
import pytest

from conftest import random_complex_field, random_real_field
from oracles import brute_convolution

from parawave.spectral import (
    FieldPair,
    FrequencyLattice,
    SpectralField,
    dealiased_product,
    from_physical,
    japanese_bracket,
    product_restricted,
    project_pi_N,
    sobolev_norm,
    to_physical,
)


class TestBracket:
    def test_origin(self):
        assert japanese_bracket((0, 0, 0)) == 1.0

    def test_unit_mode(self):
        assert japanese_bracket((1, 0, 0)) == pytest.approx(np.sqrt(2.0), rel=0, abs=0)

    def test_array_form(self):
        ns = np.array([[0, 0, 0], [1, 2, 2]])
        got = japanese_bracket(ns)
        assert got.shape == (2,)
        assert got[1] == pytest.approx(np.sqrt(10.0))


class TestLattice:
    def test_default_padding_supports_products(self):
        lat = FrequencyLattice(8)
        assert lat.G >= 25
        assert lat.supports_products

    def test_too_small_grid_rejected(self):
        with pytest.raises(ValueError):
            FrequencyLattice(8, G=16)

    def test_mode_index_round_trip(self):
        lat = FrequencyLattice(3)
        i = lat.mode_index((1, -2, 0))
        assert lat.nsq[i] == 5

    def test_mode_outside_cube(self):
        lat = FrequencyLattice(2)
        with pytest.raises(IndexError):
            lat.mode_index((3, 0, 0))


class TestSpectralField:
    def test_real_field_exactly_hermitian(self, rng):
        f = random_real_field(FrequencyLattice(4), rng)
        assert f.is_hermitian()

    def test_non_finite_rejected(self):
        lat = FrequencyLattice(1)
        bad = lat.zeros()
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            SpectralField(lat, bad)

    def test_arithmetic_preserves_reality(self, rng):
        lat = FrequencyLattice(3)
        f = random_real_field(lat, rng)
        g = random_real_field(lat, rng)
        assert (f + g).real and (f - g).real and (2.5 * f).real
        assert (f + g).is_hermitian()
        assert not (1j * f).real

    def test_pair_lattice_mismatch(self, rng):
        f = random_real_field(FrequencyLattice(2), rng)
        g = random_real_field(FrequencyLattice(3), rng)
        with pytest.raises(ValueError):
            FieldPair(f, g)


class TestProjection:
    def test_unit_ball_keeps_seven_modes(self, rng):
        # |n| <= 1: the origin plus the six unit vectors
        lat = FrequencyLattice(4)
        f = random_real_field(lat, rng)
        p = project_pi_N(f, 1)
        assert np.count_nonzero(p.coeffs) == 7

    def test_huge_radius_is_identity(self, rng):
        lat = FrequencyLattice(3)
        f = random_real_field(lat, rng)
        limit = int(np.ceil(np.sqrt(3.0) * lat.M))
        p = project_pi_N(f, limit)
        assert np.array_equal(p.coeffs, f.coeffs)

    def test_negative_radius_rejected(self, rng):
        f = random_real_field(FrequencyLattice(2), rng)
        with pytest.raises(ValueError):
            project_pi_N(f, -1)

    def test_projection_preserves_hermitian(self, rng):
        f = random_real_field(FrequencyLattice(5), rng)
        assert project_pi_N(f, 3).is_hermitian()


class TestSobolevNorm:
    def test_constant_field(self):
        lat = FrequencyLattice(2)
        c = lat.zeros()
        c[lat.mode_index((0, 0, 0))] = 3.0 - 0.0j
        f = SpectralField(lat, c, real=True)
        for s in (-1.0, 0.0, 2.0):
            assert sobolev_norm(f, s) == pytest.approx(3.0, rel=1e-15)

    def test_two_mode_example(self):
        # fhat(+-e1) = 1, s = -1: sqrt(2 * <e1>^{-2}) = sqrt(2 * 1/2) = 1
        lat = FrequencyLattice(1)
        c = lat.zeros()
        c[lat.mode_index((1, 0, 0))] = 1.0
        c[lat.mode_index((-1, 0, 0))] = 1.0
        f = SpectralField(lat, c, real=True)
        assert sobolev_norm(f, -1.0) == pytest.approx(1.0, rel=1e-14)

    def test_parseval_at_zero(self, rng):
        f = random_real_field(FrequencyLattice(4), rng)
        assert sobolev_norm(f, 0.0) == pytest.approx(
            float(np.linalg.norm(f.coeffs.ravel())), rel=1e-13)


class TestTransforms:
    def test_real_round_trip(self, rng):
        lat = FrequencyLattice(5)
        f = random_real_field(lat, rng)
        g = from_physical(to_physical(f), lat)
        assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12

    def test_complex_round_trip(self, rng):
        lat = FrequencyLattice(4)
        f = random_complex_field(lat, rng)
        g = from_physical(to_physical(f), lat)
        assert not g.real
        assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12

    def test_real_field_real_grid(self, rng):
        f = random_real_field(FrequencyLattice(3), rng)
        grid = to_physical(f)
        assert not np.iscomplexobj(grid)

    def test_real_and_complex_paths_agree(self, rng):
        lat = FrequencyLattice(3)
        f = random_real_field(lat, rng)
        grid_r = to_physical(f)
        grid_c = to_physical(SpectralField(lat, f.coeffs, real=False))
        assert np.max(np.abs(grid_c - grid_r)) < 1e-11

    def test_from_physical_exact_symmetry(self, rng):
        lat = FrequencyLattice(4)
        grid = rng.standard_normal((lat.G,) * 3)
        f = from_physical(grid, lat)
        assert f.real and f.is_hermitian()

    def test_single_mode_collocation(self):
        # fhat(e3) = 1 must evaluate to exp(i x3) on the grid
        lat = FrequencyLattice(2)
        c = lat.zeros()
        c[lat.mode_index((0, 0, 1))] = 1.0
        grid = to_physical(SpectralField(lat, c))
        x = 2.0 * np.pi * np.arange(lat.G) / lat.G
        expected = np.exp(1j * x)[None, None, :] * np.ones((lat.G, lat.G, 1))
        assert np.max(np.abs(grid - expected)) < 1e-12


class TestDealiasedProduct:
    @pytest.mark.parametrize("M", [1, 2, 3])
    def test_matches_brute_convolution(self, M, rng):
        lat = FrequencyLattice(M)
        f = random_real_field(lat, rng)
        g = random_real_field(lat, rng)
        got = dealiased_product(f, g)
        want = brute_convolution(f.coeffs, g.coeffs)
        assert np.max(np.abs(got.coeffs - want)) < 1e-12
        assert got.real

    def test_complex_inputs(self, rng):
        lat = FrequencyLattice(2)
        f = random_complex_field(lat, rng)
        g = random_complex_field(lat, rng)
        got = dealiased_product(f, g)
        want = brute_convolution(f.coeffs, g.coeffs)
        assert np.max(np.abs(got.coeffs - want)) < 1e-12
        assert not got.real

    def test_underpadded_lattice_rejected(self, rng):
        lat = FrequencyLattice(4, G=9, pad_for_products=False)
        f = random_real_field(lat, rng)
        with pytest.raises(ValueError):
            dealiased_product(f, f)

    def test_constant_identity(self, rng):
        lat = FrequencyLattice(3)
        f = random_real_field(lat, rng)
        one = lat.zeros()
        one[lat.mode_index((0, 0, 0))] = 1.0
        e0 = SpectralField(lat, one, real=True)
        got = dealiased_product(f, e0)
        assert np.max(np.abs(got.coeffs - f.coeffs)) < 1e-13


class TestRestrictedProduct:
    def test_matches_full_product(self, rng):
        lat = FrequencyLattice(6)  # G >= 19, plenty for output cube 2
        out = FrequencyLattice(2)
        f = random_real_field(lat, rng)
        g = random_real_field(lat, rng)
        full = dealiased_product(f, g)
        small = product_restricted(f, g, out)
        sl = slice(lat.M - out.M, lat.M + out.M + 1)
        assert np.max(np.abs(small.coeffs - full.coeffs[sl, sl, sl])) < 1e-12

    def test_alias_bound_enforced(self, rng):
        # output cube 4 from inputs on cube 4 needs G >= 4 + 8 + 1 = 13
        lat = FrequencyLattice(4, G=12, pad_for_products=False)
        out = FrequencyLattice(4, G=12, pad_for_products=False)
        f = random_real_field(lat, rng)
        with pytest.raises(ValueError):
            product_restricted(f, f, out)

    def test_output_cube_larger_rejected(self, rng):
        lat = FrequencyLattice(2)
        out = FrequencyLattice(3)
        f = random_real_field(lat, rng)
        with pytest.raises(ValueError):
            product_restricted(f, f, out)
