"""Fixed-point solver, direct solver, and the two-path reconstruction."""

import numpy as np
import pytest

from parawave.noise import NoiseSeed
from parawave.objects import (
    StochasticInputs,
    TimeGrid,
    TrajectoryField,
    build_stochastic_inputs,
    sample_stochastic_convolution,
)
from parawave.solver import (
    PicardDivergenceError,
    SolverConfig,
    free_propagator,
    picard_map,
    reconstruct_solution,
    solve_direct,
    solve_system,
)
from parawave.spectral import FieldPair, FrequencyLattice, SpectralField, sobolev_norm

import oracles


def _zero(lat):
    return SpectralField(lat, lat.zeros(np.complex128), real=True)


def _zero_pair(lat):
    return FieldPair(_zero(lat), _zero(lat))


def _mode_pair(lat, n, amp_u=1.0, amp_v=0.0):
    u = lat.zeros(np.complex128)
    v = lat.zeros(np.complex128)
    u[n[0] + lat.M, n[1] + lat.M, n[2] + lat.M] = amp_u
    v[n[0] + lat.M, n[1] + lat.M, n[2] + lat.M] = amp_v
    return FieldPair(SpectralField(lat, u), SpectralField(lat, v))


def _random_pair(lat, rng, amp, decay):
    def one():
        c = rng.normal(size=lat.nsq.shape) + 1j * rng.normal(size=lat.nsq.shape)
        return SpectralField(lat, c * amp / lat.bracket**decay, real=True)

    return FieldPair(one(), one())


def _zero_inputs(lat, grid, N, rough, smooth):
    def traj(with_deriv):
        vals = [_zero(lat) for _ in range(grid.steps + 1)]
        der = [_zero(lat) for _ in range(grid.steps + 1)] if with_deriv else None
        return TrajectoryField(grid, vals, der)

    return StochasticInputs(
        rough_data=rough,
        smooth_data=smooth,
        conv=traj(True),
        wick_integral=traj(True),
        wick_resonant=traj(False),
        free_resonant=traj(False),
        cutoff=N,
        theta=0.1,
        c0=0.0,
    )


class TestSolverConfig:
    def test_step_must_divide_horizon(self):
        with pytest.raises(ValueError):
            SolverConfig(T=1.0, h=0.3, N=2, M=4)

    def test_step_bounds(self):
        with pytest.raises(ValueError):
            SolverConfig(T=0.5, h=0.75, N=2, M=4)

    def test_cutoff_bound(self):
        with pytest.raises(ValueError):
            SolverConfig(T=1.0, h=0.5, N=8, M=4)

    def test_regularity_window(self):
        for s1, s2 in ((0.2, 0.55), (0.3, 0.45), (0.3, 0.6), (0.26, 0.52)):
            with pytest.raises(ValueError):
                SolverConfig(T=1.0, h=0.5, N=2, M=4, s1=s1, s2=s2)
        SolverConfig(T=1.0, h=0.5, N=2, M=4, s1=0.26, s2=0.51)

    def test_grid(self):
        cfg = SolverConfig(T=0.5, h=0.125, N=2, M=4)
        assert cfg.grid == TimeGrid(0.125, 4)


class TestPropagator:
    def test_zero_mode(self):
        lat = FrequencyLattice(2, pad_for_products=False)
        out = free_propagator(_mode_pair(lat, (0, 0, 0)), 0.7)
        assert out.u.coeffs[lat.M, lat.M, lat.M] == pytest.approx(np.cos(0.7), abs=1e-14)
        assert out.v.coeffs[lat.M, lat.M, lat.M] == pytest.approx(-np.sin(0.7), abs=1e-14)

    def test_velocity_data_mode(self):
        lat = FrequencyLattice(2, pad_for_products=False)
        out = free_propagator(_mode_pair(lat, (1, 0, 0), amp_u=0.0, amp_v=1.0), 0.4)
        w = np.sqrt(2.0)
        got_u = out.u.coeffs[1 + lat.M, lat.M, lat.M]
        got_v = out.v.coeffs[1 + lat.M, lat.M, lat.M]
        assert got_u == pytest.approx(np.sin(w * 0.4) / w, abs=1e-14)
        assert got_v == pytest.approx(np.cos(w * 0.4), abs=1e-14)

    def test_group_law(self):
        lat = FrequencyLattice(3, pad_for_products=False)
        rng = np.random.default_rng(5)
        pair = _random_pair(lat, rng, 1.0, 0.0)
        one = free_propagator(pair, 0.9)
        two = free_propagator(free_propagator(pair, 0.4), 0.5)
        assert np.allclose(one.u.coeffs, two.u.coeffs, atol=1e-12)
        assert np.allclose(one.v.coeffs, two.v.coeffs, atol=1e-12)

    def test_energy_conserved(self):
        lat = FrequencyLattice(4, pad_for_products=False)
        rng = np.random.default_rng(6)
        pair = _random_pair(lat, rng, 1.0, 0.0)

        def energy(p):
            return sobolev_norm(p.u, 1.0) ** 2 + sobolev_norm(p.v, 0.0) ** 2

        e0 = energy(pair)
        for t in (0.3, 1.7, 12.0):
            assert energy(free_propagator(pair, t)) == pytest.approx(e0, rel=1e-12)


class TestSolveSystem:
    def test_zero_fixed_point(self):
        lat = FrequencyLattice(4)
        cfg = SolverConfig(T=0.5, h=0.125, N=4, M=4)
        inputs = _zero_inputs(lat, cfg.grid, 4, _zero_pair(lat), _zero_pair(lat))
        sol = solve_system(inputs, cfg)
        assert sol.iterations == 1
        assert sol.final_increment == 0.0
        assert not np.any(sol.X.values[-1].coeffs)
        assert not np.any(sol.Y.values[-1].coeffs)

    @staticmethod
    def _scalar_solution(steps):
        lat = FrequencyLattice(2)
        cfg = SolverConfig(T=1.0, h=1.0 / steps, N=2, M=2)
        smooth = _mode_pair(lat, (0, 0, 0), amp_u=0.1)
        inputs = _zero_inputs(lat, cfg.grid, 2, _zero_pair(lat), smooth)
        sol = solve_system(inputs, cfg)
        y = np.array([f.coeffs[lat.M, lat.M, lat.M].real for f in sol.Y.values])
        return sol, y, cfg.grid.times

    def test_scalar_ode_oracle(self):
        # zero stochastic input and data 0.1 e_0 reduce the system to the
        # scalar problem y'' + y = -y^2; X stays exactly zero
        sol, y, times = self._scalar_solution(64)
        ref = oracles.quadratic_scalar_ode(0.1, times)
        assert not np.any(sol.X.values[-1].coeffs)
        assert np.max(np.abs(y - ref)) < 5e-6

    def test_scalar_ode_second_order(self):
        _, y32, t32 = self._scalar_solution(32)
        _, y64, t64 = self._scalar_solution(64)
        e32 = np.max(np.abs(y32 - oracles.quadratic_scalar_ode(0.1, t32)))
        e64 = np.max(np.abs(y64 - oracles.quadratic_scalar_ode(0.1, t64)))
        assert 3.3 < e32 / e64 < 4.7

    def test_contraction_and_residual(self):
        # sampled inputs: increments must contract geometrically, and
        # re-applying the map to the converged pair must move it by less
        # than twice the stopping tolerance
        lat = FrequencyLattice(16)
        cfg = SolverConfig(T=0.25, h=1.0 / 32, N=8, M=16)
        rng = np.random.default_rng(99)
        rough = _random_pair(lat, rng, 0.1, 1.8)
        smooth = _random_pair(lat, rng, 0.1, 2.1)
        inputs = build_stochastic_inputs(NoiseSeed(4242), lat, 8, cfg.grid, rough, smooth)
        sol = solve_system(inputs, cfg)
        assert sol.iterations < cfg.picard_max
        inc = sol.increments
        for i in range(3, len(inc) - 1):
            assert inc[i + 1] / inc[i] < 0.9
        new_x, new_y = picard_map(sol.X, sol.Y, inputs, cfg)
        drift = max(
            max(
                sobolev_norm(new_x.values[i] - sol.X.values[i], cfg.s1)
                + sobolev_norm(new_y.values[i] - sol.Y.values[i], cfg.s2)
                for i in range(len(new_x))
            ),
            0.0,
        )
        scale = max(sobolev_norm(f, cfg.s1) for f in sol.X.values) + max(
            sobolev_norm(f, cfg.s2) for f in sol.Y.values
        )
        assert drift < 2.0 * cfg.picard_tol * scale
        assert sol.norms.x_value > 0 and sol.norms.y_value > 0

    def test_input_mismatches_rejected(self):
        lat = FrequencyLattice(4)
        cfg = SolverConfig(T=0.5, h=0.25, N=4, M=4)
        other_grid = TimeGrid(0.125, 4)
        inputs = _zero_inputs(lat, other_grid, 4, _zero_pair(lat), _zero_pair(lat))
        with pytest.raises(ValueError):
            solve_system(inputs, cfg)
        inputs = _zero_inputs(lat, cfg.grid, 2, _zero_pair(lat), _zero_pair(lat))
        with pytest.raises(ValueError):
            solve_system(inputs, cfg)

    def test_divergence_reported(self):
        # amplitude far outside the contraction ball: iterates blow up and
        # the solver must report divergence with its increment history
        lat = FrequencyLattice(2)
        cfg = SolverConfig(T=1.0, h=0.25, N=2, M=2, picard_max=25)
        smooth = _mode_pair(lat, (0, 0, 0), amp_u=30.0)
        inputs = _zero_inputs(lat, cfg.grid, 2, _zero_pair(lat), smooth)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(PicardDivergenceError) as err:
                solve_system(inputs, cfg)
        assert len(err.value.increments) <= 25
        assert err.value.increments[-1] == float("inf") or len(err.value.increments) == 25


class TestSolveDirect:
    def test_zero_everything(self):
        cfg = SolverConfig(T=0.5, h=0.125, N=2, M=4)
        out = solve_direct(None, cfg, include_sigma=False)
        for f in out.values + out.derivs:
            assert not np.any(f.coeffs)

    def test_noise_stream_matches_convolution(self):
        # the first value step from rest is the pure Brownian kernel
        # integral (the value quadrature kernel vanishes at the endpoint
        # and f(0) = 0), so it must coincide bitwise with the sampled
        # convolution's first node; the velocity picks up the trapezoid
        # endpoint term -(h/2) u_1^2 on top of the linear part
        cfg = SolverConfig(T=0.3, h=0.3, N=2, M=4)
        seed = NoiseSeed(31415)
        out = solve_direct(seed, cfg, include_sigma=False)
        lat = out.lattice
        conv = sample_stochastic_convolution(seed, lat, 2, cfg.grid)
        assert np.array_equal(out.values[1].coeffs, conv.values[1].coeffs)
        from parawave.spectral import dealiased_product

        endpoint = dealiased_product(out.values[1], out.values[1]) * (cfg.h / 2.0)
        lin = out.derivs[1] + endpoint
        scale = float(np.max(np.abs(conv.derivs[1].coeffs)))
        assert np.allclose(lin.coeffs, conv.derivs[1].coeffs, atol=1e-14 * scale)

    @staticmethod
    def _scalar_direct(steps):
        cfg = SolverConfig(T=1.0, h=1.0 / steps, N=2, M=2)
        lat = FrequencyLattice(2)
        data = _mode_pair(lat, (0, 0, 0), amp_u=0.1)
        out = solve_direct(None, cfg, data=data)
        y = np.array([f.coeffs[lat.M, lat.M, lat.M].real for f in out.values])
        return y, cfg.grid.times

    def test_scalar_ode_with_counterterm(self):
        y, times = self._scalar_direct(128)
        ref = oracles.quadratic_scalar_ode(
            0.1, times, source=lambda t: oracles.sigma_sum_direct(2, t)
        )
        assert np.max(np.abs(y - ref)) < 2e-3

    def test_scalar_ode_rate(self):
        y64, t64 = self._scalar_direct(64)
        y128, t128 = self._scalar_direct(128)
        ref64 = oracles.quadratic_scalar_ode(
            0.1, t64, source=lambda t: oracles.sigma_sum_direct(2, t)
        )
        ref128 = oracles.quadratic_scalar_ode(
            0.1, t128, source=lambda t: oracles.sigma_sum_direct(2, t)
        )
        e64 = np.max(np.abs(y64 - ref64))
        e128 = np.max(np.abs(y128 - ref128))
        assert 3.3 < e64 / e128 < 4.7


class TestReconstruct:
    def test_all_zero(self):
        lat = FrequencyLattice(2)
        grid = TimeGrid(0.25, 2)

        def ztraj():
            return TrajectoryField(
                grid,
                [_zero(lat) for _ in range(3)],
                [_zero(lat) for _ in range(3)],
            )

        out = reconstruct_solution(ztraj(), ztraj(), ztraj(), ztraj())
        for f in out.values:
            assert not np.any(f.coeffs)
        assert out.has_deriv

    def test_cancellation(self):
        # X equal to the integrated square cancels it: u == conv
        lat = FrequencyLattice(4)
        grid = TimeGrid(0.2, 3)
        conv = sample_stochastic_convolution(NoiseSeed(8), lat, 4, grid)
        rng = np.random.default_rng(17)
        w_vals = [
            SpectralField(lat, rng.normal(size=lat.nsq.shape) + 0j, real=True)
            for _ in range(4)
        ]
        wick = TrajectoryField(grid, w_vals)
        X = TrajectoryField(grid, list(w_vals))
        Y = TrajectoryField(grid, [_zero(lat) for _ in range(4)])
        out = reconstruct_solution(conv, wick, X, Y)
        for i in range(4):
            scale = float(np.max(np.abs(conv.values[i].coeffs))) + 1.0
            assert np.allclose(out.values[i].coeffs, conv.values[i].coeffs, atol=1e-13 * scale)
        assert not out.has_deriv

    def test_grid_mismatch_rejected(self):
        lat = FrequencyLattice(2)
        a = TrajectoryField(TimeGrid(0.25, 2), [_zero(lat) for _ in range(3)])
        b = TrajectoryField(TimeGrid(0.5, 2), [_zero(lat) for _ in range(3)])
        with pytest.raises(ValueError):
            reconstruct_solution(a, a, a, b)


class TestTwoPathEquivalence:
    def test_gap_shrinks_with_step(self):
        # keystone identity: reconstruction from the paracontrolled pair
        # approaches the directly stepped field as h -> 0; the two paths
        # use different quadrature rules so the gap is O(h^2), not zero
        seed = NoiseSeed(20260816)
        gaps = {}
        for steps in (8, 16):
            cfg = SolverConfig(T=0.25, h=0.25 / steps, N=4, M=8)
            lat = FrequencyLattice(cfg.M)
            inputs = build_stochastic_inputs(
                seed, lat, cfg.N, cfg.grid, _zero_pair(lat), _zero_pair(lat)
            )
            sol = solve_system(inputs, cfg)
            rec = reconstruct_solution(inputs.conv, inputs.wick_integral, sol.X, sol.Y)
            direct = solve_direct(seed, cfg)
            diff = rec.values[-1] - direct.values[-1]
            gaps[steps] = sobolev_norm(diff, 0.0)
        assert gaps[8] > 0
        assert gaps[8] / gaps[16] >= 1.5
